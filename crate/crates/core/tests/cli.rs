use std::path::Path;
use std::process::{Command, Output};

fn lipsurf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipsurf")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn same_config_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.json", r#"{"kind": "f_tail", "p": 0.98, "replicates": 300, "k_max": 3, "seed": 9}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = lipsurf(&["tails", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ca = std::fs::read_to_string(a.with_extension("csv")).unwrap();
    let cb = std::fs::read_to_string(b.with_extension("csv")).unwrap();
    assert_eq!(ca, cb);
    assert!(ca.starts_with("k,trials,hits_lo,hits_hi,p_lo,p_hi,ci_lo,ci_hi,bound,unresolved_frac\n"));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["metadata"]["seed"], 9);
    assert!(meta["metadata"]["wall_time_s"].is_number());
    assert!(meta["metadata"]["version"].is_string());
}

#[test]
fn malformed_config_exits_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"kind": "f_tail", "p": 0.99, "k_max": 2, "replicates": -4}"#);
    let o = lipsurf(&["tails", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicates"));
}

#[test]
fn bound_hypothesis_violation_exits_2() {
    let o = lipsurf(&["tails", "--p", "0.9", "--replicates", "10", "--kmax", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lipsurf(&["bounds", "--p", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["counting_hypothesis_holds"], false);
}

#[test]
fn exhausted_budget_exits_3() {
    let o = lipsurf(&[
        "tails", "--kind", "radh", "--p", "0.97", "--replicates", "500", "--kmax", "3", "--box-margin", "1",
        "--box-height", "1", "--growth-cap", "0", "--unresolved-threshold", "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_flag_exits_1() {
    let o = lipsurf(&["tails", "--step-set", "sideways"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn subcommands_produce_output() {
    let o = lipsurf(&["bounds", "--d", "2", "--p", "0.99"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_object());

    let o = lipsurf(&["brw", "--replicates", "200", "--kmax", "4", "--mu", "0.6931471805599453"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("n,mean_S,se_S,alpha_pow_n,survival_hat,survival_ci_hi,bound\n"));
    assert_eq!(csv.lines().count(), 6);

    let o = lipsurf(&["surface", "--base-radius", "3", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["values"].as_array().unwrap().len(), 7);

    let o = lipsurf(&["cover", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["values"].as_array().unwrap().iter().all(|x| x.as_i64().unwrap() >= 1));

    let o = lipsurf(&["sample", "--box-margin", "1", "--box-height", "1", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["states"].as_array().unwrap().len(), 6);

    let o = lipsurf(&["existence", "--p-grid", "0.85,0.99", "--replicates", "20", "--base-radius", "3"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.contains("outside proven regime"));
}

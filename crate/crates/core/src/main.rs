use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lipsurf::harness::{self, Experiment, ExperimentKind, HarnessError};
use lipsurf::lattice::{BoxRegion, ExplicitConfig, PercolationField};
use lipsurf::reach::StepSet;
use lipsurf::surface::{self, Budget};
use lipsurf::{bounds, oracle};

#[derive(Parser, Debug)]
#[command(name = "lipsurf", version, about = "Lipschitz percolation surfaces and tail-bound checks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    #[arg(long, global = true, default_value_t = 2)]
    d: usize,
    #[arg(long, global = true, default_value_t = 0.99)]
    p: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1000)]
    replicates: u64,
    #[arg(long, global = true, default_value_t = 5)]
    kmax: u64,
    #[arg(long = "box-margin", global = true, default_value_t = Budget::default().margin)]
    box_margin: i64,
    #[arg(long = "box-height", global = true, default_value_t = Budget::default().height)]
    box_height: i64,
    #[arg(long = "growth-cap", global = true, default_value_t = Budget::default().growth_cap)]
    growth_cap: u32,
    #[arg(long = "step-set", global = true, value_enum, default_value_t = StepArg::Full)]
    step_set: StepArg,
    /// Output file (stdout when absent). Experiments write `<out>.csv` and `<out>.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Experiment config; overrides the other flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Radius of the square base patch.
    #[arg(long = "base-radius", global = true, default_value_t = 10)]
    base_radius: i64,
    /// Largest tolerated unresolved fraction before exiting with status 3.
    #[arg(long = "unresolved-threshold", global = true, default_value_t = 1e-3)]
    unresolved_threshold: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StepArg {
    Full,
    NoStraightDown,
}

impl From<StepArg> for StepSet {
    fn from(s: StepArg) -> Self {
        match s {
            StepArg::Full => StepSet::Full,
            StepArg::NoStraightDown => StepSet::NoStraightDown,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TailKind {
    F,
    Radh,
    Rho,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    G,
    Covers,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Site states of the box `[-margin, margin]^{d-1} x [0, height]`.
    Sample {
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// The surface `F` over the square base.
    Surface {
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[arg(long, value_enum, default_value_t = Method::G)]
        method: Method,
        /// Lateral window of cover centres for `--method covers`.
        #[arg(long, default_value_t = 4)]
        window: i64,
    },
    /// The minimal local cover of the origin column.
    Cover {
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Tail curve with bound column.
    Tails {
        #[arg(long, value_enum, default_value_t = TailKind::F)]
        kind: TailKind,
    },
    /// Constants of the closed-form bounds.
    Bounds,
    /// Dominating branching random walk.
    Brw {
        /// Exponent; the optimal one when absent.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long = "depth-cap")]
        depth_cap: Option<u64>,
    },
    /// Fraction of replicates with a certified surface over the base, per `p`.
    Existence {
        /// Comma-separated increasing grid.
        #[arg(long = "p-grid", value_delimiter = ',', required = true)]
        p_grid: Vec<f64>,
    },
    /// Exhaustive oracle sweeps.
    Oracle,
}

fn budget(g: &Global) -> Budget {
    Budget { margin: g.box_margin, height: g.box_height, growth_cap: g.growth_cap }
}

fn experiment(g: &Global, kind: ExperimentKind) -> Experiment {
    Experiment {
        d: g.d,
        p: Some(g.p),
        replicates: g.replicates,
        seed: g.seed,
        budget: budget(g),
        k_max: Some(g.kmax),
        n_max: Some(g.kmax as usize),
        step_mode: g.step_set.into(),
        base_radius: g.base_radius,
        unresolved_threshold: g.unresolved_threshold,
        ..Experiment::new(kind)
    }
}

fn emit(g: &Global, csv: &str, json: &serde_json::Value) -> Result<(), HarnessError> {
    let body = match g.format {
        Format::Csv => csv.to_string(),
        Format::Json => serde_json::to_string_pretty(json).expect("serializable") + "\n",
    };
    match &g.out {
        Some(path) => std::fs::write(path, body).map_err(|source| HarnessError::Io { path: path.clone(), source }),
        None => {
            let _ = std::io::stdout().write_all(body.as_bytes());
            Ok(())
        }
    }
}

fn field(g: &Global, replicate: u64) -> Result<PercolationField, HarnessError> {
    PercolationField::new(g.d, g.p, g.seed, replicate).map_err(|e| HarnessError::InvalidConfig {
        field: "d/p".into(),
        message: e.to_string(),
    })
}

fn invalid(field: &str, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::InvalidConfig { field: field.into(), message: e.to_string() }
}

fn run_experiment(g: &Global, exp: &Experiment) -> Result<(), HarnessError> {
    match &g.out {
        Some(out) => harness::run_and_write(exp, out),
        None => {
            let a = harness::execute(exp)?;
            emit(g, &a.csv, &a.json)?;
            a.failure.map_or(Ok(()), Err)
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let g = &cli.global;
    if let Some(path) = &g.config {
        let out = g.out.clone().unwrap_or_else(|| Path::new("lipsurf_out").to_path_buf());
        return harness::run_experiment(path, &out);
    }
    match cli.command {
        Command::Sample { replicate } => {
            let f = field(g, replicate)?;
            let region = BoxRegion::centered(g.d, g.box_margin, 0, g.box_height).map_err(|e| invalid("box", e))?;
            let cfg = ExplicitConfig::sample(&f, region.clone());
            let mut csv = String::from("coords,state\n");
            for (s, open) in region.sites().zip(cfg.open_flags()) {
                let c: Vec<String> = s.0.iter().map(i64::to_string).collect();
                csv.push_str(&format!("{},{}\n", c.join(" "), if *open { "open" } else { "closed" }));
            }
            emit(g, &csv, &cfg.to_json())
        }
        Command::Surface { replicate, method, window } => {
            let f = field(g, replicate)?;
            let base = surface::square_base(g.d, g.base_radius);
            let patch = match method {
                Method::G => surface::build_f(&f, &base, &budget(g)),
                Method::Covers => surface::build_f_covers(&f, &base, window, &budget(g)),
            }
            .map_err(|e| invalid("budget", e))?;
            let mut csv = String::from("column,value,upper,status\n");
            for e in &patch.entries {
                let c: Vec<String> = e.column.iter().map(i64::to_string).collect();
                let upper = e.upper.map_or(String::from("inf"), |u| u.to_string());
                let status = serde_json::to_value(e.status).expect("serializable");
                csv.push_str(&format!("{},{},{},{}\n", c.join(" "), e.value, upper, status.as_str().unwrap_or("")));
            }
            emit(g, &csv, &patch.to_json())
        }
        Command::Cover { replicate } => {
            let f = field(g, replicate)?;
            let cover = surface::minimal_cover(&f, &vec![0; g.d.saturating_sub(1)], &budget(g))
                .map_err(|e| invalid("budget", e))?;
            let mut csv = String::from("column,value\n");
            for (c, v) in &cover.positive_entries {
                let c: Vec<String> = c.iter().map(i64::to_string).collect();
                csv.push_str(&format!("{},{}\n", c.join(" "), v));
            }
            emit(g, &csv, &cover.to_json())
        }
        Command::Tails { kind } => {
            let kind = match kind {
                TailKind::F => ExperimentKind::FTail,
                TailKind::Radh => ExperimentKind::RadhTail,
                TailKind::Rho => ExperimentKind::RhoTail,
            };
            run_experiment(g, &experiment(g, kind))
        }
        Command::Bounds => {
            let report = bounds::report(g.d, g.p, g.step_set.into(), g.kmax)?;
            let body = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
            match &g.out {
                Some(path) => {
                    std::fs::write(path, body).map_err(|source| HarnessError::Io { path: path.clone(), source })?
                }
                None => print!("{body}"),
            }
            let params = bounds::BoundParams::new(g.d, g.p, g.step_set.into())?;
            if params.in_regime() {
                Ok(())
            } else {
                Err(HarnessError::Hypothesis { a2q: params.a2q })
            }
        }
        Command::Brw { mu, depth_cap } => {
            let exp = Experiment { mu, depth_cap, ..experiment(g, ExperimentKind::Brw) };
            run_experiment(g, &exp)
        }
        Command::Existence { p_grid } => {
            let exp = Experiment { p: None, p_grid: Some(p_grid), ..experiment(g, ExperimentKind::ExistenceCurve) };
            run_experiment(g, &exp)
        }
        Command::Oracle => {
            let checks = oracle::run_sweeps().map_err(|e| HarnessError::Compute(e.to_string()))?;
            let all = checks.iter().all(|c| c.passed);
            let json = serde_json::json!({ "passed": all, "checks": checks });
            println!("{}", serde_json::to_string_pretty(&json).expect("serializable"));
            if all {
                Ok(())
            } else {
                Err(HarnessError::Compute("oracle sweep failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lipsurf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

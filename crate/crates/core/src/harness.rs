//! Monte Carlo experiments driven by a JSON config, with CSV and JSON output.
//!
//! Replicate `i` always uses `PercolationField(d, p, seed, i)`, and counts are
//! merged by addition, so results do not depend on the worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError};
use crate::brw::{self, BrwConfig, BrwError};
use crate::lattice::{HorizontalIsometry, LatticeError, PercolationField, Transformed};
use crate::reach::StepSet;
use crate::stats::{wilson_interval, CONFIDENCE};
use crate::surface::{self, Budget, ColumnStatus, SurfaceError};

pub const TAIL_HEADER: &str = "k,trials,hits_lo,hits_hi,p_lo,p_hi,ci_lo,ci_hi,bound,unresolved_frac";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("bound hypothesis violated: a^2 q = {a2q} >= 1")]
    Hypothesis { a2q: f64 },
    #[error("unresolved fraction {fraction} exceeds threshold {threshold} at level {level}")]
    Unresolved { level: u64, fraction: f64, threshold: f64 },
    #[error("{0}")]
    Compute(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig { .. } | HarnessError::Compute(_) | HarnessError::Io { .. } => 1,
            HarnessError::Hypothesis { .. } => 2,
            HarnessError::Unresolved { .. } => 3,
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        HarnessError::InvalidConfig { field: field.into(), message: message.into() }
    }
}

impl From<BoundError> for HarnessError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::Hypothesis { a2q } => HarnessError::Hypothesis { a2q },
            other => HarnessError::Compute(other.to_string()),
        }
    }
}

impl From<SurfaceError> for HarnessError {
    fn from(e: SurfaceError) -> Self {
        HarnessError::Compute(e.to_string())
    }
}

impl From<LatticeError> for HarnessError {
    fn from(e: LatticeError) -> Self {
        HarnessError::Compute(e.to_string())
    }
}

impl From<BrwError> for HarnessError {
    fn from(e: BrwError) -> Self {
        match e {
            BrwError::Bound(b) => b.into(),
            other => HarnessError::Compute(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FTail,
    RadhTail,
    RhoTail,
    SurfaceValidity,
    ExistenceCurve,
    Equivariance,
    Monotonicity,
    Brw,
}

impl ExperimentKind {
    /// Kinds whose output includes a closed-form bound column.
    pub fn needs_bounds(self) -> bool {
        matches!(self, ExperimentKind::FTail | ExperimentKind::RadhTail | ExperimentKind::RhoTail | ExperimentKind::Brw)
    }
}

fn default_d() -> usize {
    2
}
fn default_replicates() -> u64 {
    1000
}
fn default_threshold() -> f64 {
    1e-3
}
fn default_radius() -> i64 {
    10
}
fn default_generations() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: ExperimentKind,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub p_grid: Option<Vec<f64>>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub k_max: Option<u64>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub step_mode: StepSet,
    /// Radius of the square base patch for surface kinds.
    #[serde(default = "default_radius")]
    pub base_radius: i64,
    /// Largest tolerated unresolved fraction in any tail row.
    #[serde(default = "default_threshold")]
    pub unresolved_threshold: f64,
    /// BRW exponent; the optimal one when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub depth_cap: Option<u64>,
}

impl Experiment {
    pub fn new(kind: ExperimentKind) -> Self {
        Experiment {
            kind,
            d: default_d(),
            p: None,
            p_grid: None,
            replicates: default_replicates(),
            seed: 0,
            budget: Budget::default(),
            k_max: None,
            n_max: None,
            step_mode: StepSet::Full,
            base_radius: default_radius(),
            unresolved_threshold: default_threshold(),
            mu: None,
            depth_cap: None,
        }
    }

    /// Parses a config, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let exp: Experiment = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::invalid(if path == "." { "<root>" } else { &path }, e.inner().to_string())
        })?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.d < 2 {
            return Err(HarnessError::invalid("d", "dimension must be at least 2"));
        }
        if self.replicates < 1 {
            return Err(HarnessError::invalid("replicates", "need at least one replicate"));
        }
        if let Err(e) = self.budget.validate() {
            return Err(HarnessError::invalid("budget", e.to_string()));
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p < 1.0) {
                return Err(HarnessError::invalid("p", format!("{p} is not in (0, 1)")));
            }
        }
        if let Some(grid) = &self.p_grid {
            if grid.is_empty() {
                return Err(HarnessError::invalid("p_grid", "grid is empty"));
            }
            if grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return Err(HarnessError::invalid("p_grid", "every entry must lie in (0, 1)"));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(HarnessError::invalid("p_grid", "grid must be strictly increasing"));
            }
        }
        if self.base_radius < 0 {
            return Err(HarnessError::invalid("base_radius", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.unresolved_threshold) {
            return Err(HarnessError::invalid("unresolved_threshold", "must lie in [0, 1]"));
        }
        match self.kind {
            ExperimentKind::ExistenceCurve | ExperimentKind::Monotonicity => {
                let n = self.p_grid.as_ref().map_or(0, Vec::len);
                let need = if self.kind == ExperimentKind::Monotonicity { 2 } else { 1 };
                if n < need {
                    return Err(HarnessError::invalid("p_grid", format!("needs at least {need} values")));
                }
            }
            _ => {
                if self.p.is_none() {
                    return Err(HarnessError::invalid("p", "required for this kind"));
                }
            }
        }
        if matches!(self.kind, ExperimentKind::FTail | ExperimentKind::RadhTail | ExperimentKind::RhoTail) {
            match self.k_max {
                None => return Err(HarnessError::invalid("k_max", "required for tail kinds")),
                Some(0) => return Err(HarnessError::invalid("k_max", "must be at least 1")),
                _ => {}
            }
        }
        if self.kind == ExperimentKind::Equivariance && self.d != 3 {
            return Err(HarnessError::invalid("d", "equivariance is checked over Z^2 columns, so d must be 3"));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return Err(HarnessError::invalid("mu", "must be positive"));
            }
        }
        Ok(())
    }

    fn p_value(&self) -> f64 {
        self.p.expect("validated")
    }

    fn grid(&self) -> &[f64] {
        self.p_grid.as_deref().expect("validated")
    }

    /// Fails with the hypothesis error when the closed-form bounds do not apply.
    pub fn check_hypothesis(&self) -> Result<(), HarnessError> {
        if !self.kind.needs_bounds() {
            return Ok(());
        }
        let params = bounds::BoundParams::new(self.d, self.p_value(), self.step_mode)?;
        if !params.in_regime() {
            return Err(HarnessError::Hypothesis { a2q: params.a2q });
        }
        Ok(())
    }
}

/// One row of a tail curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRow {
    pub k: u64,
    pub trials: u64,
    /// Replicates where the event is certain.
    pub hits_lo: u64,
    /// Replicates where the event is certain or undecided.
    pub hits_hi: u64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub bound: f64,
    pub unresolved_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCurve {
    pub rows: Vec<TailRow>,
    /// Probability that some replicate's certificate is voided by inflow from
    /// above the box (union bound); `0` for kinds that do not rely on it.
    pub top_inflow_bound: f64,
}

impl TailCurve {
    fn from_counts(trials: u64, counts: &[(u64, u64)], bound: impl Fn(u64) -> f64, top_inflow_bound: f64) -> Self {
        let n = trials as f64;
        let rows = counts
            .iter()
            .enumerate()
            .map(|(k, &(lo, hi))| TailRow {
                k: k as u64,
                trials,
                hits_lo: lo,
                hits_hi: hi,
                p_lo: lo as f64 / n,
                p_hi: hi as f64 / n,
                ci_lo: wilson_interval(lo, trials, CONFIDENCE).0,
                ci_hi: wilson_interval(hi, trials, CONFIDENCE).1,
                bound: bound(k as u64),
                unresolved_frac: (hi - lo) as f64 / n,
            })
            .collect();
        TailCurve { rows, top_inflow_bound }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{TAIL_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.k, r.trials, r.hits_lo, r.hits_hi, r.p_lo, r.p_hi, r.ci_lo, r.ci_hi, r.bound, r.unresolved_frac
            ));
        }
        s
    }

    /// Errors with the first row whose unresolved fraction exceeds `threshold`.
    pub fn check_resolution(&self, threshold: f64) -> Result<(), HarnessError> {
        match self.rows.iter().find(|r| r.unresolved_frac > threshold) {
            Some(r) => Err(HarnessError::Unresolved { level: r.k, fraction: r.unresolved_frac, threshold }),
            None => Ok(()),
        }
    }
}

/// Per-replicate `[lo, hi]` event indicators at levels `0..=k_max`, summed.
fn tally<T>(exp: &Experiment, levels: usize, per_replicate: T) -> Result<Vec<(u64, u64)>, HarnessError>
where
    T: Fn(u64) -> Result<Vec<(bool, bool)>, HarnessError> + Sync,
{
    (0..exp.replicates)
        .into_par_iter()
        .map(|r| {
            per_replicate(r).map(|v| v.into_iter().map(|(lo, hi)| (lo as u64, hi as u64)).collect::<Vec<_>>())
        })
        .try_reduce(
            || vec![(0, 0); levels],
            |a, b| Ok(a.iter().zip(&b).map(|(x, y)| (x.0 + y.0, x.1 + y.1)).collect()),
        )
}

/// `P(F(0) > k)` for `k = 0..=k_max`. `F(0) > k` exactly when `(0, k)` lies in
/// `G`, which is bracketed by the optimistic and pessimistic surface values.
pub fn estimate_f_tail(exp: &Experiment) -> Result<TailCurve, HarnessError> {
    exp.check_hypothesis()?;
    let (d, p, k_max) = (exp.d, exp.p_value(), exp.k_max.expect("validated"));
    let origin = vec![vec![0; d - 1]];
    let counts = tally(exp, k_max as usize + 1, |r| {
        let field = PercolationField::new(d, p, exp.seed, r)?;
        let patch = surface::build_f(&field, &origin, &exp.budget)?;
        let e = &patch.entries[0];
        Ok((0..=k_max as i64).map(|k| (e.value > k, e.upper.is_none_or(|u| u > k))).collect())
    })?;
    let (margin, height) = exp.budget.attempt(0);
    let region = crate::lattice::BoxRegion::centered(d, margin + height, 0, height)?;
    let inflow = (surface::top_inflow_bound(p, &region) * exp.replicates as f64).min(1.0);
    Ok(TailCurve::from_counts(exp.replicates, &counts, |k| f_bound(exp, k), inflow))
}

fn f_bound(exp: &Experiment, k: u64) -> f64 {
    bounds::f_tail_bound(exp.d, exp.p_value(), k, exp.step_mode).expect("hypothesis checked")
}

/// `P(rad(H_0) >= k)` for `k = 0..=k_max`. An unresolved `H_0` supplies only a
/// lower bound on the radius.
pub fn estimate_radh_tail(exp: &Experiment) -> Result<TailCurve, HarnessError> {
    cover_tail(exp, |c| (c.rad_h, c.status.is_certified()), |k| {
        bounds::radh_tail_bound(exp.d, exp.p_value(), k, exp.step_mode).expect("hypothesis checked")
    })
}

/// `P(rho_0 >= n)` for `n = 0..=k_max`, against `A (a^2 q)^(n-1)`.
pub fn estimate_rho_tail(exp: &Experiment) -> Result<TailCurve, HarnessError> {
    cover_tail(exp, |c| (c.rho, c.status.is_certified()), |n| {
        bounds::rho_tail_bound(exp.d, exp.p_value(), n, exp.step_mode).expect("hypothesis checked")
    })
}

fn cover_tail(
    exp: &Experiment,
    statistic: impl Fn(&surface::LocalCoverResult) -> (u64, bool) + Sync,
    bound: impl Fn(u64) -> f64,
) -> Result<TailCurve, HarnessError> {
    exp.check_hypothesis()?;
    let (d, p, k_max) = (exp.d, exp.p_value(), exp.k_max.expect("validated"));
    let origin = vec![0; d - 1];
    let counts = tally(exp, k_max as usize + 1, |r| {
        let field = PercolationField::new(d, p, exp.seed, r)?;
        let cover = surface::minimal_cover(&field, &origin, &exp.budget)?;
        let (value, exact) = statistic(&cover);
        Ok((0..=k_max).map(|k| (value >= k, value >= k || !exact)).collect())
    })?;
    Ok(TailCurve::from_counts(exp.replicates, &counts, bound, 0.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidityRow {
    pub replicate: u64,
    pub columns: usize,
    pub certified: usize,
    pub closed_sites: usize,
    pub steep_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValiditySummary {
    pub rows: Vec<ValidityRow>,
    pub columns: usize,
    pub certified: usize,
    pub certified_frac: f64,
    pub violations: usize,
}

impl ValiditySummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("replicate,columns,certified,closed_sites,steep_pairs\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.replicate, r.columns, r.certified, r.closed_sites, r.steep_pairs));
        }
        s
    }
}

/// Builds `F` on the square base for every replicate and checks that certified
/// values sit on open sites and are 1-Lipschitz.
pub fn surface_validity(exp: &Experiment) -> Result<ValiditySummary, HarnessError> {
    let (d, p) = (exp.d, exp.p_value());
    let base = surface::square_base(d, exp.base_radius);
    let rows: Vec<ValidityRow> = (0..exp.replicates)
        .into_par_iter()
        .map(|r| -> Result<ValidityRow, HarnessError> {
            let field = PercolationField::new(d, p, exp.seed, r)?;
            let patch = surface::build_f(&field, &base, &exp.budget)?;
            let report = surface::verify_lipschitz_open(&field, &patch);
            Ok(ValidityRow {
                replicate: r,
                columns: patch.entries.len(),
                certified: patch.certified_count(),
                closed_sites: report.closed_sites.len(),
                steep_pairs: report.steep_pairs.len(),
            })
        })
        .collect::<Result<_, _>>()?;
    let columns: usize = rows.iter().map(|r| r.columns).sum();
    let certified: usize = rows.iter().map(|r| r.certified).sum();
    let violations = rows.iter().map(|r| r.closed_sites + r.steep_pairs).sum();
    Ok(ValiditySummary { rows, columns, certified, certified_frac: certified as f64 / columns as f64, violations })
}

/// Smallest `p` covered by the closed-form existence argument.
pub fn proven_threshold(d: usize) -> f64 {
    1.0 - ((2 * d - 1) as f64).powi(-2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExistenceRow {
    pub p: f64,
    pub trials: u64,
    pub successes: u64,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub regime: &'static str,
}

pub fn existence_to_csv(rows: &[ExistenceRow]) -> String {
    let mut s = String::from("p,trials,successes,fraction,ci_lo,ci_hi,regime\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:e},{:e},{:e},{}\n",
            r.p, r.trials, r.successes, r.fraction, r.ci_lo, r.ci_hi, r.regime
        ));
    }
    s
}

/// Fraction of replicates whose pessimistic surface is defined on every base
/// column, i.e. an open Lipschitz patch certainly sits over the base. The
/// uniforms are shared across the grid, so the success sets are nested.
pub fn existence_curve(exp: &Experiment) -> Result<Vec<ExistenceRow>, HarnessError> {
    let d = exp.d;
    let grid = exp.grid();
    let base = surface::square_base(d, exp.base_radius);
    let successes = (0..exp.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<u64>, HarnessError> {
            let field = PercolationField::new(d, grid[0], exp.seed, r)?;
            grid.iter()
                .map(|&p| {
                    let f = field.with_p(p)?;
                    let patch = surface::build_f(&f, &base, &exp.budget)?;
                    Ok(patch.entries.iter().all(|e| e.upper.is_some()) as u64)
                })
                .collect()
        })
        .try_reduce(|| vec![0; grid.len()], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    let threshold = proven_threshold(d);
    Ok(grid
        .iter()
        .zip(successes)
        .map(|(&p, s)| {
            let (ci_lo, ci_hi) = wilson_interval(s, exp.replicates, CONFIDENCE);
            ExistenceRow {
                p,
                trials: exp.replicates,
                successes: s,
                fraction: s as f64 / exp.replicates as f64,
                ci_lo,
                ci_hi,
                regime: if p < threshold { "outside proven regime" } else { "proven" },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub replicate: u64,
    pub compared: usize,
    pub violations: usize,
}

pub fn checks_to_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from("replicate,compared,violations\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.replicate, r.compared, r.violations));
    }
    s
}

/// Rebuilds `F` on the field pulled back by each of the eight signed
/// permutations of the `Z^2` columns and compares column by column:
/// `F` of the transformed field at `theta(x)` must equal `F` at `x`.
pub fn equivariance(exp: &Experiment) -> Result<Vec<CheckRow>, HarnessError> {
    let (d, p) = (exp.d, exp.p_value());
    let base = surface::square_base(d, exp.base_radius);
    let isometries = HorizontalIsometry::all(d - 1);
    (0..exp.replicates)
        .into_par_iter()
        .map(|r| -> Result<CheckRow, HarnessError> {
            let field = PercolationField::new(d, p, exp.seed, r)?;
            let reference = surface::build_f(&field, &base, &exp.budget)?;
            let mut row = CheckRow { replicate: r, compared: 0, violations: 0 };
            for theta in &isometries {
                let moved = Transformed::new(&field, theta);
                let image: Vec<Vec<i64>> = base.iter().map(|c| theta.apply_column(c)).collect();
                let patch = surface::build_f(&moved, &image, &exp.budget)?;
                for (e, col) in reference.entries.iter().zip(&image) {
                    let t = patch.get(col).expect("image column present");
                    row.compared += 1;
                    if (t.value, t.upper, t.status) != (e.value, e.upper, e.status) {
                        row.violations += 1;
                    }
                }
            }
            Ok(row)
        })
        .collect()
}

/// Shared-uniform coupling across the grid: no certified value of `F` may
/// increase from one grid point to the next.
pub fn monotonicity(exp: &Experiment) -> Result<Vec<CheckRow>, HarnessError> {
    let d = exp.d;
    let grid = exp.grid();
    let base = surface::square_base(d, exp.base_radius);
    (0..exp.replicates)
        .into_par_iter()
        .map(|r| -> Result<CheckRow, HarnessError> {
            let field = PercolationField::new(d, grid[0], exp.seed, r)?;
            let patches = grid
                .iter()
                .map(|&p| Ok(surface::build_f(&field.with_p(p)?, &base, &exp.budget)?))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let mut row = CheckRow { replicate: r, compared: 0, violations: 0 };
            for w in patches.windows(2) {
                for (a, b) in w[0].entries.iter().zip(&w[1].entries) {
                    if a.status == ColumnStatus::Certified && b.status == ColumnStatus::Certified {
                        row.compared += 1;
                        if b.value > a.value {
                            row.violations += 1;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect()
}

pub fn brw_config(exp: &Experiment) -> Result<BrwConfig, HarnessError> {
    exp.check_hypothesis()?;
    let (d, p) = (exp.d, exp.p_value());
    let mu = match exp.mu {
        Some(mu) => mu,
        None => bounds::optimize_mu(d, p)?.0,
    };
    let mut cfg = BrwConfig::new(d, p, mu)?;
    if let Some(cap) = exp.depth_cap {
        cfg = cfg.with_depth_cap(cap)?;
    }
    Ok(cfg)
}

pub fn run_brw(exp: &Experiment) -> Result<brw::BrwSummary, HarnessError> {
    let cfg = brw_config(exp)?;
    Ok(brw::simulate(&cfg, exp.seed, exp.replicates, exp.n_max.unwrap_or(default_generations()))?)
}

/// Output of one experiment.
#[derive(Debug)]
pub struct Artifacts {
    pub csv: String,
    pub json: serde_json::Value,
    /// Deferred failure (for example too many unresolved replicates), reported
    /// after the artifacts are written.
    pub failure: Option<HarnessError>,
}

/// Runs `exp` and returns its CSV body and JSON result (without run metadata).
pub fn execute(exp: &Experiment) -> Result<Artifacts, HarnessError> {
    exp.validate()?;
    let (csv, json, failure) = match exp.kind {
        ExperimentKind::FTail | ExperimentKind::RadhTail | ExperimentKind::RhoTail => {
            let curve = match exp.kind {
                ExperimentKind::FTail => estimate_f_tail(exp)?,
                ExperimentKind::RadhTail => estimate_radh_tail(exp)?,
                _ => estimate_rho_tail(exp)?,
            };
            let failure = curve.check_resolution(exp.unresolved_threshold).err();
            (curve.to_csv(), serde_json::to_value(&curve).expect("serializable"), failure)
        }
        ExperimentKind::SurfaceValidity => {
            let s = surface_validity(exp)?;
            let json = serde_json::json!({
                "columns": s.columns,
                "certified": s.certified,
                "certified_frac": s.certified_frac,
                "violations": s.violations,
            });
            (s.to_csv(), json, None)
        }
        ExperimentKind::ExistenceCurve => {
            let rows = existence_curve(exp)?;
            (existence_to_csv(&rows), serde_json::json!({ "rows": rows, "exploratory": true }), None)
        }
        ExperimentKind::Equivariance | ExperimentKind::Monotonicity => {
            let rows = if exp.kind == ExperimentKind::Equivariance { equivariance(exp)? } else { monotonicity(exp)? };
            let violations: usize = rows.iter().map(|r| r.violations).sum();
            let compared: usize = rows.iter().map(|r| r.compared).sum();
            (checks_to_csv(&rows), serde_json::json!({ "compared": compared, "violations": violations }), None)
        }
        ExperimentKind::Brw => {
            let s = run_brw(exp)?;
            (s.to_csv(), serde_json::to_value(&s).expect("serializable"), None)
        }
    };
    Ok(Artifacts { csv, json, failure })
}

/// Where `run_experiment` writes: `<out>.csv` and `<out>.json`.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("csv"), out.with_extension("json"))
}

fn write(path: &Path, body: &str) -> Result<(), HarnessError> {
    std::fs::write(path, body).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Runs `exp`, writes CSV and JSON (with seed, version and wall time), and
/// returns the deferred failure if there is one.
pub fn run_and_write(exp: &Experiment, out: &Path) -> Result<(), HarnessError> {
    let start = Instant::now();
    let artifacts = execute(exp)?;
    let (csv_path, json_path) = output_paths(out);
    write(&csv_path, &artifacts.csv)?;
    let doc = serde_json::json!({
        "config": exp,
        "result": artifacts.json,
        "metadata": {
            "seed": exp.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": start.elapsed().as_secs_f64(),
        },
    });
    write(&json_path, &serde_json::to_string_pretty(&doc).expect("serializable"))?;
    match artifacts.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Reads a config file and runs it.
pub fn run_experiment(config_path: &Path, out: &Path) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|source| HarnessError::Io { path: config_path.to_path_buf(), source })?;
    let exp = Experiment::from_json(&text)?;
    run_and_write(&exp, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tail(kind: ExperimentKind, p: f64, replicates: u64) -> Experiment {
        Experiment { p: Some(p), k_max: Some(3), replicates, ..Experiment::new(kind) }
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = Experiment::from_json(r#"{"kind": "f_tail", "p": "high"}"#).unwrap_err();
        match e {
            HarnessError::InvalidConfig { field, .. } => assert_eq!(field, "p"),
            other => panic!("{other:?}"),
        }
        let e = Experiment::from_json(r#"{"kind": "f_tail", "p": 0.99, "k_max": 3, "budget": {"margin": 0, "height": 4, "growth_cap": 1}}"#)
            .unwrap_err();
        assert!(matches!(e, HarnessError::InvalidConfig { ref field, .. } if field == "budget"));
        let e = Experiment::from_json(r#"{"kind": "existence_curve", "p_grid": [0.9, 0.8]}"#).unwrap_err();
        assert!(matches!(e, HarnessError::InvalidConfig { ref field, .. } if field == "p_grid"));
        let e = Experiment::from_json(r#"{"kind": "nope"}"#).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(Experiment::from_json(r#"{"kind": "f_tail", "p": 0.99, "k_max": 2, "extra": 1}"#).is_err());
    }

    #[test]
    fn hypothesis_violation_exits_two() {
        let e = execute(&tail(ExperimentKind::FTail, 0.9, 10)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = execute(&tail(ExperimentKind::RhoTail, 0.9, 10)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn first_rows_are_certain() {
        let f = estimate_f_tail(&tail(ExperimentKind::FTail, 0.99, 200)).unwrap();
        assert_eq!((f.rows[0].hits_lo, f.rows[0].hits_hi), (200, 200));
        assert!(f.rows[0].bound >= 1.0);
        let r = estimate_radh_tail(&tail(ExperimentKind::RadhTail, 0.99, 200)).unwrap();
        assert_eq!(r.rows[0].hits_lo, 200);
        let rho = estimate_rho_tail(&tail(ExperimentKind::RhoTail, 0.99, 200)).unwrap();
        assert_eq!(rho.rows[1].hits_lo, 200);
        assert!((rho.rows[1].bound - rho.rows[0].bound).abs() < 1e-15);
    }

    #[test]
    fn tail_curve_ordering() {
        let f = estimate_f_tail(&tail(ExperimentKind::FTail, 0.95, 300)).unwrap();
        for w in f.rows.windows(2) {
            assert!(w[1].hits_hi <= w[0].hits_hi && w[1].hits_lo <= w[0].hits_lo);
        }
        for r in &f.rows {
            assert!(r.p_lo <= r.p_hi && r.ci_lo <= r.p_lo && r.p_hi <= r.ci_hi);
        }
    }

    #[test]
    fn csv_is_independent_of_thread_count() {
        let exp = tail(ExperimentKind::FTail, 0.97, 400);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| execute(&exp).unwrap().csv);
        let b = four.install(|| execute(&exp).unwrap().csv);
        assert_eq!(a, b);
        assert!(a.starts_with(TAIL_HEADER));
    }

    #[test]
    fn tight_threshold_reports_unresolved() {
        let exp = Experiment {
            budget: Budget { margin: 1, height: 1, growth_cap: 0 },
            unresolved_threshold: 0.0,
            ..tail(ExperimentKind::RadhTail, 0.97, 500)
        };
        let a = execute(&exp).unwrap();
        assert_eq!(a.failure.map(|e| e.exit_code()), Some(3));
    }

    #[test]
    fn existence_is_monotone_and_labelled() {
        let exp = Experiment {
            p_grid: Some(vec![0.5, 0.85, 0.95, 0.999]),
            replicates: 40,
            base_radius: 3,
            ..Experiment::new(ExperimentKind::ExistenceCurve)
        };
        let rows = existence_curve(&exp).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].successes <= w[1].successes);
        }
        assert_eq!(rows[0].regime, "outside proven regime");
        assert_eq!(rows[3].regime, "proven");
        assert_eq!(rows[3].successes, 40);
    }

    #[test]
    fn small_equivariance_and_monotonicity_runs() {
        let exp = Experiment {
            d: 3,
            p: Some(0.97),
            replicates: 3,
            base_radius: 3,
            ..Experiment::new(ExperimentKind::Equivariance)
        };
        let rows = equivariance(&exp).unwrap();
        assert!(rows.iter().all(|r| r.violations == 0 && r.compared == 8 * 49));
        let exp = Experiment {
            p_grid: Some(vec![0.9, 0.97, 0.99]),
            replicates: 20,
            base_radius: 4,
            ..Experiment::new(ExperimentKind::Monotonicity)
        };
        assert!(monotonicity(&exp).unwrap().iter().all(|r| r.violations == 0));
    }
}

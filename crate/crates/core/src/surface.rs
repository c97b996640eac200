//! Lipschitz surfaces and minimal local covers.
//!
//! `build_f` reads the surface off the reachable set `G` of the half-space
//! of non-positive heights: `F(x)` is the first height above zero that `G`
//! misses. `build_h` computes `H_x`, the endpoints of admissible paths from
//! `(x, 0)` that never go below height zero; the minimal local cover of `x`
//! sits immediately above `H_x`.
//!
//! Boxes grow by doubling their lateral margin and height until every
//! requested quantity is certified or the growth cap is hit. Unresolved
//! results are returned as values, never as errors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds;
use crate::lattice::{BoxRegion, Site, SiteField};
use crate::reach::{g_sandwich, reach, ReachError, ReachResult, StepSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("empty base")]
    EmptyBase,
    #[error("column {column:?} has dimension {got}, expected {expected}")]
    ColumnDimension { column: Vec<i64>, got: usize, expected: usize },
    #[error(transparent)]
    Reach(#[from] ReachError),
}

/// Initial box and how many times it may double.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Lateral margin around the base (or around the cover centre). Boxes for
    /// `F` pad by the box height on top of this.
    pub margin: i64,
    /// Top height of the box; boxes span heights `[0, height]`.
    pub height: i64,
    /// Number of doublings allowed after the first attempt.
    pub growth_cap: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { margin: 8, height: 8, growth_cap: 3 }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        if self.margin < 1 || self.height < 1 {
            return Err(SurfaceError::InvalidBudget(format!(
                "margin and height must be positive (margin {}, height {})",
                self.margin, self.height
            )));
        }
        if self.growth_cap > 20 {
            return Err(SurfaceError::InvalidBudget(format!("growth cap {} too large", self.growth_cap)));
        }
        Ok(())
    }

    /// `(margin, height)` of attempt `i`.
    pub fn attempt(&self, i: u32) -> (i64, i64) {
        (self.margin << i, self.height << i)
    }

    pub fn largest(&self) -> (i64, i64) {
        self.attempt(self.growth_cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnStatus {
    Certified,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMethod {
    ViaG,
    /// Supremum over cover centres within this lateral radius of the base.
    ViaCovers { window: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceEntry {
    pub column: Vec<i64>,
    /// Certified value, or the best lower bound when unresolved.
    pub value: i64,
    /// Upper bound when one is known (equal to `value` when certified).
    pub upper: Option<i64>,
    pub status: ColumnStatus,
}

/// Values of a surface over a finite set of columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePatch {
    pub d: usize,
    pub method: SurfaceMethod,
    pub entries: Vec<SurfaceEntry>,
    /// Last box used.
    pub region: BoxRegion,
}

impl SurfacePatch {
    pub fn get(&self, column: &[i64]) -> Option<&SurfaceEntry> {
        self.entries.iter().find(|e| e.column == column)
    }

    pub fn certified(&self, column: &[i64]) -> Option<i64> {
        self.get(column).filter(|e| e.status == ColumnStatus::Certified).map(|e| e.value)
    }

    pub fn certified_count(&self) -> usize {
        self.entries.iter().filter(|e| e.status == ColumnStatus::Certified).count()
    }

    pub fn all_certified(&self) -> bool {
        self.certified_count() == self.entries.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "columns": self.entries.iter().map(|e| &e.column).collect::<Vec<_>>(),
            "values": self.entries.iter().map(|e| e.value).collect::<Vec<_>>(),
            "upper": self.entries.iter().map(|e| e.upper).collect::<Vec<_>>(),
            "status": self.entries.iter().map(|e| e.status).collect::<Vec<_>>(),
        })
    }
}

/// Probability that some site of `G` lies above the top of `region` within its
/// columns; every `G`-based certificate in this crate holds off this event.
///
/// Union bound over columns of `A (aq)^(h+1)`. Returns `1.0` outside the
/// regime where the bound is available.
pub fn top_inflow_bound(p: f64, region: &BoxRegion) -> f64 {
    let d = region.dim();
    let columns = (0..d - 1).map(|a| region.extent(a) as f64).product::<f64>();
    let top = region.hi()[d - 1];
    match bounds::f_tail_bound(d, p, (top + 1) as u64, StepSet::Full) {
        Ok(b) => (columns * b).min(1.0),
        Err(_) => 1.0,
    }
}

fn base_bounds(d: usize, base: &[Vec<i64>]) -> Result<(Vec<i64>, Vec<i64>), SurfaceError> {
    let first = base.first().ok_or(SurfaceError::EmptyBase)?;
    let k = d - 1;
    let mut lo = first.clone();
    let mut hi = first.clone();
    for c in base {
        if c.len() != k {
            return Err(SurfaceError::ColumnDimension { column: c.clone(), got: c.len(), expected: k });
        }
        for a in 0..k {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    Ok((lo, hi))
}

fn padded_box(lo: &[i64], hi: &[i64], margin: i64, height: i64) -> BoxRegion {
    let mut l: Vec<i64> = lo.iter().map(|v| v - margin).collect();
    let mut h: Vec<i64> = hi.iter().map(|v| v + margin).collect();
    l.push(0);
    h.push(height);
    BoxRegion::new(l, h).expect("padded box is nonempty")
}

/// Box for the `G` sandwich. Side sites seeded at height `t` reach `t`
/// columns inward on their way down, so the lateral padding is `margin`
/// beyond the box height.
fn g_box(lo: &[i64], hi: &[i64], margin: i64, height: i64) -> BoxRegion {
    padded_box(lo, hi, margin + height, height)
}

/// Columns of `[-radius, radius]^{d-1}` in lexicographic order.
pub fn square_base(d: usize, radius: i64) -> Vec<Vec<i64>> {
    BoxRegion::new(vec![-radius; d - 1], vec![radius; d - 1])
        .expect("nonnegative radius")
        .sites()
        .map(|s| s.0)
        .collect()
}

/// `F(x) = min{t > 0 : (x, t) not in G}` on every column of `base`.
pub fn build_f<F: SiteField + ?Sized>(
    field: &F,
    base: &[Vec<i64>],
    budget: &Budget,
) -> Result<SurfacePatch, SurfaceError> {
    budget.validate()?;
    let d = field.dim();
    let (lo, hi) = base_bounds(d, base)?;
    let mut entries: Vec<SurfaceEntry> = base
        .iter()
        .map(|c| SurfaceEntry { column: c.clone(), value: 1, upper: None, status: ColumnStatus::Unresolved })
        .collect();
    let mut region = g_box(&lo, &hi, budget.margin, budget.height);
    for attempt in 0..=budget.growth_cap {
        let (margin, height) = budget.attempt(attempt);
        region = g_box(&lo, &hi, margin, height);
        let sandwich = g_sandwich(field, &region)?;
        let mut pending = false;
        for e in entries.iter_mut().filter(|e| e.status == ColumnStatus::Unresolved) {
            let (lower, upper) = sandwich.surface_bounds(&e.column);
            e.value = e.value.max(lower);
            e.upper = match (e.upper, upper) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            if e.upper == Some(e.value) {
                e.status = ColumnStatus::Certified;
            } else {
                pending = true;
            }
        }
        if !pending {
            break;
        }
    }
    Ok(SurfacePatch { d, method: SurfaceMethod::ViaG, entries, region })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LipschitzReport {
    pub checked_columns: usize,
    pub checked_pairs: usize,
    /// Certified columns whose surface site is closed.
    pub closed_sites: Vec<Vec<i64>>,
    /// Adjacent certified pairs whose values differ by more than one.
    pub steep_pairs: Vec<(Vec<i64>, Vec<i64>)>,
}

impl LipschitzReport {
    pub fn violations(&self) -> usize {
        self.closed_sites.len() + self.steep_pairs.len()
    }
}

/// Checks openness of `(x, F(x))` and `|F(x) - F(y)| <= 1` over certified columns.
pub fn verify_lipschitz_open<F: SiteField + ?Sized>(field: &F, patch: &SurfacePatch) -> LipschitzReport {
    let certified: BTreeMap<&[i64], i64> = patch
        .entries
        .iter()
        .filter(|e| e.status == ColumnStatus::Certified)
        .map(|e| (e.column.as_slice(), e.value))
        .collect();
    let mut report = LipschitzReport { checked_columns: certified.len(), ..Default::default() };
    for (&col, &v) in &certified {
        if !field.is_open(&Site::lift(col, v).0) {
            report.closed_sites.push(col.to_vec());
        }
        for a in 0..col.len() {
            let mut nb = col.to_vec();
            nb[a] += 1;
            if let Some(&w) = certified.get(nb.as_slice()) {
                report.checked_pairs += 1;
                if (v - w).abs() > 1 {
                    report.steep_pairs.push((col.to_vec(), nb));
                }
            }
        }
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverStatus {
    CertifiedFinite,
    /// Gave up at this box (`margin`, `height`).
    Unresolved { margin: i64, height: i64 },
}

impl CoverStatus {
    pub fn is_certified(self) -> bool {
        matches!(self, CoverStatus::CertifiedFinite)
    }
}

/// `H_x` inside the last box tried. When unresolved, `reached` is a subset of `H_x`.
#[derive(Clone, Debug)]
pub struct HResult {
    pub center: Vec<i64>,
    pub reached: ReachResult,
    pub status: CoverStatus,
}

impl HResult {
    pub fn sites(&self) -> Vec<Site> {
        self.reached.sites()
    }

    /// `max ||u - (x, 0)||` over the computed set.
    pub fn radius(&self) -> u64 {
        let base = Site::lift(&self.center, 0);
        self.reached
            .sites()
            .iter()
            .map(|u| u.0.iter().zip(&base.0).map(|(a, b)| (a - b).unsigned_abs()).sum::<u64>())
            .max()
            .unwrap_or(0)
    }
}

/// Endpoints of admissible paths from `(x, 0)` that stay at non-negative heights.
pub fn build_h<F: SiteField + ?Sized>(field: &F, x: &[i64], budget: &Budget) -> Result<HResult, SurfaceError> {
    budget.validate()?;
    let d = field.dim();
    if x.len() != d - 1 {
        return Err(SurfaceError::ColumnDimension { column: x.to_vec(), got: x.len(), expected: d - 1 });
    }
    let source = Site::lift(x, 0);
    let mut last = None;
    for attempt in 0..=budget.growth_cap {
        let (margin, height) = budget.attempt(attempt);
        let region = padded_box(x, x, margin, height);
        let r = reach(field, std::slice::from_ref(&source), &region, StepSet::Full, Some(0))?;
        if !r.touched_side && !r.touched_top {
            return Ok(HResult { center: x.to_vec(), reached: r, status: CoverStatus::CertifiedFinite });
        }
        last = Some((r, margin, height));
    }
    let (reached, margin, height) = last.expect("at least one attempt");
    Ok(HResult { center: x.to_vec(), reached, status: CoverStatus::Unresolved { margin, height } })
}

/// The minimal local cover `L_x` with its radius `rho_x` and `rad(H_x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalCoverResult {
    pub center: Vec<i64>,
    /// Columns with `L > 0`; all other columns carry `L = 0`.
    pub positive_entries: BTreeMap<Vec<i64>, i64>,
    pub status: CoverStatus,
    /// Exact when certified, otherwise a lower bound.
    pub rad_h: u64,
    /// Exact when certified, otherwise a lower bound.
    pub rho: u64,
}

impl LocalCoverResult {
    pub fn value(&self, column: &[i64]) -> i64 {
        self.positive_entries.get(column).copied().unwrap_or(0)
    }

    pub fn rad_h_exact(&self) -> Option<u64> {
        self.status.is_certified().then_some(self.rad_h)
    }

    pub fn rho_exact(&self) -> Option<u64> {
        self.status.is_certified().then_some(self.rho)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let status = match self.status {
            CoverStatus::CertifiedFinite => serde_json::json!("certified_finite"),
            CoverStatus::Unresolved { margin, height } => {
                serde_json::json!({ "unresolved": { "margin": margin, "height": height } })
            }
        };
        serde_json::json!({
            "center": self.center,
            "columns": self.positive_entries.keys().collect::<Vec<_>>(),
            "values": self.positive_entries.values().collect::<Vec<_>>(),
            "status": status,
            "rad_h": if self.status.is_certified() { serde_json::json!(self.rad_h) } else { serde_json::json!({"at_least": self.rad_h}) },
            "rho": if self.status.is_certified() { serde_json::json!(self.rho) } else { serde_json::json!({"at_least": self.rho}) },
        })
    }
}

/// Reads the cover off `H_x`: `L(y) = 1 + max{h : (y, h) in H_x}` on columns
/// meeting `H_x`, zero elsewhere.
pub fn cover_from_h(h: &HResult) -> LocalCoverResult {
    let mut tops: BTreeMap<Vec<i64>, i64> = BTreeMap::new();
    for s in h.reached.sites() {
        let t = tops.entry(s.column().to_vec()).or_insert(0);
        *t = (*t).max(s.height());
    }
    let positive_entries: BTreeMap<Vec<i64>, i64> = tops.into_iter().map(|(c, m)| (c, m + 1)).collect();
    let rho = positive_entries
        .iter()
        .map(|(y, &l)| y.iter().zip(&h.center).map(|(a, b)| (a - b).unsigned_abs()).sum::<u64>() + l as u64)
        .max()
        .unwrap_or(0);
    LocalCoverResult {
        center: h.center.clone(),
        positive_entries,
        status: h.status,
        rad_h: h.radius(),
        rho,
    }
}

pub fn minimal_cover<F: SiteField + ?Sized>(
    field: &F,
    x: &[i64],
    budget: &Budget,
) -> Result<LocalCoverResult, SurfaceError> {
    Ok(cover_from_h(&build_h(field, x, budget)?))
}

/// `F(x) = 1 + sup{h : (x, h) in H_y}` with `y` restricted to the base's
/// bounding box widened by `window`. A lower bound on the full supremum.
pub fn build_f_covers<F: SiteField + ?Sized>(
    field: &F,
    base: &[Vec<i64>],
    window: i64,
    budget: &Budget,
) -> Result<SurfacePatch, SurfaceError> {
    budget.validate()?;
    if window < 0 {
        return Err(SurfaceError::InvalidBudget(format!("negative window {window}")));
    }
    let d = field.dim();
    let (lo, hi) = base_bounds(d, base)?;
    let centres_box = BoxRegion::new(
        lo.iter().map(|v| v - window).collect(),
        hi.iter().map(|v| v + window).collect(),
    )
    .expect("window box");
    let centres: Vec<Vec<i64>> = centres_box.sites().map(|s| s.0).collect();
    let hs: Vec<HResult> = centres
        .par_iter()
        .map(|y| build_h(field, y, budget))
        .collect::<Result<_, _>>()?;
    let all_finite = hs.iter().all(|h| h.status.is_certified());
    let mut tops: BTreeMap<Vec<i64>, i64> = BTreeMap::new();
    for h in &hs {
        for s in h.reached.sites() {
            let t = tops.entry(s.column().to_vec()).or_insert(0);
            *t = (*t).max(s.height());
        }
    }
    let entries = base
        .iter()
        .map(|c| {
            let value = tops.get(c).map_or(1, |&m| m + 1);
            SurfaceEntry {
                column: c.clone(),
                value,
                upper: all_finite.then_some(value),
                status: if all_finite { ColumnStatus::Certified } else { ColumnStatus::Unresolved },
            }
        })
        .collect();
    let (margin, height) = budget.largest();
    Ok(SurfacePatch {
        d,
        method: SurfaceMethod::ViaCovers { window },
        entries,
        region: padded_box(centres_box.lo(), centres_box.hi(), margin, height),
    })
}

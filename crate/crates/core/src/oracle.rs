//! Brute-force ground truth.
//!
//! Nothing here reuses the breadth-first engine in [`crate::reach`]: step
//! lists, path search and cover construction are written out again in the
//! plainest form available, so that agreement between the two is evidence
//! rather than tautology.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{self, BoundError};
use crate::lattice::{BoxRegion, ExplicitConfig, LatticeError, Site, SiteField};
use crate::reach::{self, StepSet};
use crate::surface::{self, Budget};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("path enumeration limited to length {max}, asked for {asked}")]
    PathBudget { asked: usize, max: usize },
    #[error("exhaustive enumeration limited to {max} sites, box has {sites}")]
    TooManySites { sites: usize, max: usize },
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub const MAX_PATH_LEN: usize = 10;
pub const MAX_EVENT_SITES: usize = 25;

/// Λ-steps written out by hand: up, straight down, and the diagonal-down moves.
fn lambda_steps(d: usize, set: StepSet) -> Vec<Vec<i64>> {
    let mut steps = Vec::new();
    let mut up = vec![0; d];
    up[d - 1] = 1;
    steps.push(up);
    if set == StepSet::Full {
        let mut down = vec![0; d];
        down[d - 1] = -1;
        steps.push(down);
    }
    for j in 0..d - 1 {
        let mut plus = vec![0; d];
        plus[j] = 1;
        plus[d - 1] = -1;
        steps.push(plus);
        let mut minus = vec![0; d];
        minus[j] = -1;
        minus[d - 1] = -1;
        steps.push(minus);
    }
    steps
}

/// Counts of distinct-site Λ-paths from the origin.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PathEnumeration {
    pub d: usize,
    pub step_set: StepSet,
    pub max_len: usize,
    /// `(U, D) -> number of paths`.
    pub by_ud: BTreeMap<(u32, u32), u64>,
    /// Endpoint -> (`U` -> number of paths). Weighting by `q^U` gives `E N(u)`.
    pub by_endpoint: BTreeMap<Vec<i64>, BTreeMap<u32, u64>>,
}

impl PathEnumeration {
    pub fn total_paths(&self) -> u64 {
        self.by_ud.values().sum()
    }

    /// `sum_u q^U` over paths ending at `u`.
    pub fn expected_count(&self, u: &[i64], q: f64) -> f64 {
        self.by_endpoint
            .get(u)
            .map_or(0.0, |m| m.iter().map(|(&up, &c)| c as f64 * q.powi(up as i32)).sum())
    }

    pub fn endpoints(&self) -> BTreeSet<Vec<i64>> {
        self.by_endpoint.keys().cloned().collect()
    }
}

/// Every distinct-site Λ-path of length `<= max_len` from the origin.
pub fn enum_paths(d: usize, set: StepSet, max_len: usize) -> Result<PathEnumeration, OracleError> {
    if max_len > MAX_PATH_LEN {
        return Err(OracleError::PathBudget { asked: max_len, max: MAX_PATH_LEN });
    }
    let steps = lambda_steps(d, set);
    let mut out = PathEnumeration { d, step_set: set, max_len, ..Default::default() };
    let mut path = vec![vec![0i64; d]];
    fn dfs(
        steps: &[Vec<i64>],
        path: &mut Vec<Vec<i64>>,
        up: u32,
        down: u32,
        max_len: usize,
        out: &mut PathEnumeration,
    ) {
        *out.by_ud.entry((up, down)).or_insert(0) += 1;
        let end = path.last().unwrap().clone();
        *out.by_endpoint.entry(end.clone()).or_default().entry(up).or_insert(0) += 1;
        if path.len() > max_len {
            return;
        }
        for s in steps {
            let next: Vec<i64> = end.iter().zip(s).map(|(a, b)| a + b).collect();
            if path.contains(&next) {
                continue;
            }
            let is_up = s[s.len() - 1] == 1;
            path.push(next);
            dfs(steps, path, up + is_up as u32, down + !is_up as u32, max_len, out);
            path.pop();
        }
    }
    dfs(&steps, &mut path, 0, 0, max_len, &mut out);
    Ok(out)
}

/// Endpoints of Λ-walks (sites may repeat) of length `<= max_len`.
pub fn enum_walk_endpoints(d: usize, set: StepSet, max_len: usize) -> Result<BTreeSet<Vec<i64>>, OracleError> {
    if max_len > MAX_PATH_LEN {
        return Err(OracleError::PathBudget { asked: max_len, max: MAX_PATH_LEN });
    }
    let steps = lambda_steps(d, set);
    let mut layer: BTreeSet<Vec<i64>> = [vec![0; d]].into_iter().collect();
    let mut all = layer.clone();
    for _ in 0..max_len {
        let mut next = BTreeSet::new();
        for x in &layer {
            for s in &steps {
                next.insert(x.iter().zip(s).map(|(a, b)| a + b).collect::<Vec<i64>>());
            }
        }
        all.extend(next.iter().cloned());
        layer = next;
    }
    Ok(all)
}

/// `sum over enumerated paths ending in {height >= h, radial >= r}` of `q^U`.
/// A lower bound on `sum_{u in T} E N(u)`.
pub fn exact_en_partial(
    enumeration: &PathEnumeration,
    p: f64,
    h: i64,
    r: u64,
) -> Result<f64, OracleError> {
    let d = enumeration.d;
    let params = bounds::BoundParams::new(d, p, enumeration.step_set)?;
    if !params.in_regime() {
        return Err(BoundError::Hypothesis { a2q: params.a2q }.into());
    }
    if (r as i64) < (-h).max(0) {
        return Err(BoundError::RadialTooSmall { h, r }.into());
    }
    let q = 1.0 - p;
    Ok(enumeration
        .by_endpoint
        .iter()
        .filter(|(u, _)| u[d - 1] >= h && u[..d - 1].iter().map(|c| c.unsigned_abs()).sum::<u64>() >= r)
        .map(|(u, _)| enumeration.expected_count(u, q))
        .sum())
}

/// Convenience wrapper enumerating first.
pub fn exact_en_partial_fresh(d: usize, p: f64, h: i64, r: u64, max_len: usize, set: StepSet) -> Result<f64, OracleError> {
    exact_en_partial(&enum_paths(d, set, max_len)?, p, h, r)
}

/// `sum over all 2^N configurations` of `p^open q^closed [predicate]`.
pub fn exact_event_prob<P>(region: &BoxRegion, p: f64, predicate: P) -> Result<f64, OracleError>
where
    P: Fn(&ExplicitConfig) -> bool + Sync,
{
    let n = region.volume();
    if n > MAX_EVENT_SITES {
        return Err(OracleError::TooManySites { sites: n, max: MAX_EVENT_SITES });
    }
    let q = 1.0 - p;
    let total: u64 = 1 << n;
    let chunks: u64 = 256.min(total);
    let per = total / chunks;
    // fixed chunking keeps the floating-point sum independent of scheduling
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for bits in c * per..(c + 1) * per {
                let cfg = ExplicitConfig::from_bits(region.clone(), bits).expect("size checked");
                if predicate(&cfg) {
                    let open = bits.count_ones() as i32;
                    acc += p.powi(open) * q.powi(n as i32 - open);
                }
            }
            acc
        })
        .collect();
    Ok(partial.iter().sum())
}

/// Sites reachable from `sources` by admissible steps inside the configuration's
/// box (plain BFS over a hash set; sites may repeat along a walk).
pub fn walk_reach(config: &ExplicitConfig, sources: &[Site], set: StepSet, floor: Option<i64>) -> BTreeSet<Site> {
    let region = config.region();
    let d = region.dim();
    let steps = lambda_steps(d, set);
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut queue = VecDeque::new();
    for s in sources {
        if seen.insert(s.0.clone()) {
            queue.push_back(s.0.clone());
        }
    }
    while let Some(x) = queue.pop_front() {
        for s in &steps {
            let y: Vec<i64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
            if !region.contains(&y) || floor.is_some_and(|f| y[d - 1] < f) {
                continue;
            }
            if s[d - 1] == 1 && config.is_open(&y) {
                continue;
            }
            if seen.insert(y.clone()) {
                queue.push_back(y);
            }
        }
    }
    seen.into_iter().map(Site).collect()
}

/// Endpoints of admissible distinct-site paths from `source` inside the box.
pub fn path_reach(config: &ExplicitConfig, source: &Site, set: StepSet) -> BTreeSet<Site> {
    let region = config.region();
    let d = region.dim();
    let steps = lambda_steps(d, set);
    let mut found = BTreeSet::new();
    let mut path = vec![source.0.clone()];
    fn dfs(
        config: &ExplicitConfig,
        steps: &[Vec<i64>],
        path: &mut Vec<Vec<i64>>,
        found: &mut BTreeSet<Site>,
    ) {
        let end = path.last().unwrap().clone();
        found.insert(Site(end.clone()));
        let d = end.len();
        for s in steps {
            let y: Vec<i64> = end.iter().zip(s).map(|(a, b)| a + b).collect();
            if !config.region().contains(&y) || path.contains(&y) {
                continue;
            }
            if s[d - 1] == 1 && config.is_open(&y) {
                continue;
            }
            path.push(y);
            dfs(config, steps, path, found);
            path.pop();
        }
    }
    dfs(config, &steps, &mut path, &mut found);
    let _ = d;
    found
}

/// `rad(H_x)` computed by brute force inside the configuration's box.
pub fn rad_h(config: &ExplicitConfig, x: &[i64]) -> u64 {
    let src = Site::lift(x, 0);
    walk_reach(config, std::slice::from_ref(&src), StepSet::Full, Some(0))
        .iter()
        .map(|u| u.0.iter().zip(&src.0).map(|(a, b)| (a - b).unsigned_abs()).sum::<u64>())
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FixedPointCover {
    Cover(BTreeMap<Vec<i64>, i64>),
    NoCoverInBox,
}

/// Least fixed point of the raising rules, starting from `L = 1` at `x` and
/// zero elsewhere:
/// (b) a positive value sitting on a closed site is raised by one;
/// (c) a neighbour more than one below is raised to one below.
///
/// Columns are visited in lexicographic order, or in an order reshuffled
/// every sweep when `shuffle_seed` is given. `trace` receives every
/// intermediate state.
pub fn cover_fixed_point_traced(
    config: &ExplicitConfig,
    x: &[i64],
    h_max: i64,
    shuffle_seed: Option<u64>,
    mut trace: impl FnMut(&BTreeMap<Vec<i64>, i64>),
) -> FixedPointCover {
    let base: Vec<Vec<i64>> = config.region().columns();
    let in_base: BTreeSet<&Vec<i64>> = base.iter().collect();
    let mut l: BTreeMap<Vec<i64>, i64> = base.iter().map(|c| (c.clone(), 0)).collect();
    l.insert(x.to_vec(), 1);
    trace(&l);
    let mut order = base.clone();
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    loop {
        let mut changed = false;
        if let Some(r) = rng.as_mut() {
            order.shuffle(r);
        }
        for y in &order {
            // (b)
            loop {
                let v = l[y];
                if v == 0 {
                    break;
                }
                if v > h_max {
                    return FixedPointCover::NoCoverInBox;
                }
                if config.is_open(&Site::lift(y, v).0) {
                    break;
                }
                l.insert(y.clone(), v + 1);
                changed = true;
                trace(&l);
            }
            let v = l[y];
            if v > h_max {
                return FixedPointCover::NoCoverInBox;
            }
            // (c)
            for a in 0..y.len() {
                for s in [-1, 1] {
                    let mut z = y.clone();
                    z[a] += s;
                    if v >= 2 && !in_base.contains(&z) {
                        return FixedPointCover::NoCoverInBox;
                    }
                    if let Some(&w) = l.get(&z) {
                        if w < v - 1 {
                            l.insert(z, v - 1);
                            changed = true;
                            trace(&l);
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    FixedPointCover::Cover(l.into_iter().filter(|(_, v)| *v > 0).collect())
}

pub fn cover_fixed_point(config: &ExplicitConfig, x: &[i64], h_max: i64) -> FixedPointCover {
    cover_fixed_point_traced(config, x, h_max, None, |_| {})
}

/// Local-cover conditions for `l` (zero off its keys), with support inside the base.
pub fn is_local_cover(config: &ExplicitConfig, x: &[i64], l: &BTreeMap<Vec<i64>, i64>) -> bool {
    let value = |c: &Vec<i64>| l.get(c).copied().unwrap_or(0);
    if value(&x.to_vec()) <= 0 {
        return false;
    }
    for (y, &v) in l {
        if v < 0 {
            return false;
        }
        if v > 0 && !config.region().contains(&Site::lift(y, v).0) {
            return false;
        }
        if v > 0 && !config.is_open(&Site::lift(y, v).0) {
            return false;
        }
        for a in 0..y.len() {
            for s in [-1, 1] {
                let mut z = y.clone();
                z[a] += s;
                if (v - value(&z)).abs() > 1 {
                    return false;
                }
            }
        }
    }
    true
}

/// Every local cover of `x` with support in the base and values `<= h_max`.
pub fn all_local_covers(config: &ExplicitConfig, x: &[i64], h_max: i64) -> Vec<BTreeMap<Vec<i64>, i64>> {
    let base = config.region().columns();
    let levels = (h_max + 1) as u64;
    let total = levels.pow(base.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut l = BTreeMap::new();
        for col in &base {
            let v = (c % levels) as i64;
            c /= levels;
            if v > 0 {
                l.insert(col.clone(), v);
            }
        }
        if is_local_cover(config, x, &l) {
            out.push(l);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

/// The `(U, D)` bucket bound `count <= a^{U+D}` for `d` and `set`.
pub fn check_bucket_bound(d: usize, set: StepSet, max_len: usize) -> Result<CheckOutcome, OracleError> {
    let e = enum_paths(d, set, max_len)?;
    let a = set.size(d) as u64;
    let worst = e
        .by_ud
        .iter()
        .map(|(&(u, dn), &c)| c as f64 / (a as f64).powi((u + dn) as i32))
        .fold(0.0, f64::max);
    let passed = e.by_ud.iter().all(|(&(u, dn), &c)| c <= a.pow(u + dn));
    Ok(CheckOutcome {
        name: format!("bucket_bound_d{d}_{set:?}_len{max_len}"),
        passed,
        detail: serde_json::json!({ "paths": e.total_paths(), "buckets": e.by_ud.len(), "max_ratio": worst }),
    })
}

/// Truncated `sum E N(u)` against the closed-form bound for the given `(h, r)` pairs.
pub fn check_partial_sums(
    d: usize,
    set: StepSet,
    max_len: usize,
    p: f64,
    pairs: &[(i64, u64)],
) -> Result<CheckOutcome, OracleError> {
    let e = enum_paths(d, set, max_len)?;
    let mut rows = Vec::new();
    let mut passed = true;
    for &(h, r) in pairs {
        let partial = exact_en_partial(&e, p, h, r)?;
        let bound = bounds::sum2_bound(d, p, h, r, set)?;
        passed &= partial <= bound;
        rows.push(serde_json::json!({ "h": h, "r": r, "partial": partial, "bound": bound }));
    }
    Ok(CheckOutcome {
        name: format!("partial_sums_d{d}_{set:?}_len{max_len}_p{p}"),
        passed,
        detail: rows.into(),
    })
}

/// Mismatch counts of the exhaustive cover sweep over a `d = 2` box.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoverSweep {
    pub configs: u64,
    pub both_certified: u64,
    pub engine_only: u64,
    pub oracle_only: u64,
    pub mismatches: u64,
}

/// `surface::minimal_cover` against [`cover_fixed_point`] on every configuration
/// of `[-m, m] x [0, h]` (centre column 0).
pub fn cover_sweep(margin: i64, height: i64) -> Result<CoverSweep, OracleError> {
    let region = BoxRegion::new(vec![-margin, 0], vec![margin, height])?;
    let n = region.volume();
    if n > MAX_EVENT_SITES {
        return Err(OracleError::TooManySites { sites: n, max: MAX_EVENT_SITES });
    }
    let budget = Budget { margin, height, growth_cap: 0 };
    let total: u64 = 1 << n;
    let parts: Vec<CoverSweep> = (0..total)
        .into_par_iter()
        .fold(CoverSweep::default, |mut acc, bits| {
            let cfg = ExplicitConfig::from_bits(region.clone(), bits).expect("size checked");
            let fast = surface::minimal_cover(&cfg, &[0], &budget).expect("valid budget");
            let slow = cover_fixed_point(&cfg, &[0], height);
            acc.configs += 1;
            match (fast.status.is_certified(), slow) {
                (true, FixedPointCover::Cover(l)) => {
                    acc.both_certified += 1;
                    if l != fast.positive_entries {
                        acc.mismatches += 1;
                    }
                }
                (true, FixedPointCover::NoCoverInBox) => acc.engine_only += 1,
                (false, FixedPointCover::Cover(_)) => acc.oracle_only += 1,
                (false, FixedPointCover::NoCoverInBox) => {}
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(CoverSweep::default(), |mut a, b| {
        a.configs += b.configs;
        a.both_certified += b.both_certified;
        a.engine_only += b.engine_only;
        a.oracle_only += b.oracle_only;
        a.mismatches += b.mismatches;
        a
    }))
}

/// Number of configurations of a `3 x 3` box (every source site) where BFS
/// reachability and distinct-path reachability disagree.
pub fn walk_path_mismatches(set: StepSet) -> u64 {
    let region = BoxRegion::new(vec![-1, -1], vec![1, 1]).expect("3x3 box");
    let mut bad = 0;
    for bits in 0..(1u64 << region.volume()) {
        let cfg = ExplicitConfig::from_bits(region.clone(), bits).expect("9 sites");
        for src in region.sites() {
            let fast: BTreeSet<Site> = reach::reach(&cfg, std::slice::from_ref(&src), &region, set, None)
                .expect("source in box")
                .sites()
                .into_iter()
                .collect();
            if fast != path_reach(&cfg, &src, set) || fast != walk_reach(&cfg, std::slice::from_ref(&src), set, None) {
                bad += 1;
            }
        }
    }
    bad
}

/// Sandwich check on `[-m, m] x [0, h]` with every extension to a one-site
/// margin on the sides and top. The reference is reachability from the
/// height-0 layer of the enlarged box; extensions in which that reference
/// climbs above `h` (inflow from the top) are counted separately.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SandwichSweep {
    pub configs: u64,
    pub top_overflow: u64,
    pub violations: u64,
}

pub fn sandwich_sweep(margin: i64, height: i64) -> Result<SandwichSweep, OracleError> {
    let inner = BoxRegion::new(vec![-margin, 0], vec![margin, height])?;
    let outer = BoxRegion::new(vec![-margin - 1, 0], vec![margin + 1, height + 1])?;
    let n = outer.volume();
    if n > MAX_EVENT_SITES {
        return Err(OracleError::TooManySites { sites: n, max: MAX_EVENT_SITES });
    }
    let total: u64 = 1 << n;
    let parts: Vec<SandwichSweep> = (0..total)
        .into_par_iter()
        .fold(SandwichSweep::default, |mut acc, bits| {
            let cfg = ExplicitConfig::from_bits(outer.clone(), bits).expect("size checked");
            let sources: Vec<Site> = outer.sites().filter(|s| s.height() == 0).collect();
            let truth = walk_reach(&cfg, &sources, StepSet::Full, Some(0));
            acc.configs += 1;
            let overflow = truth.iter().any(|s| s.height() > height && s.0[0].abs() <= margin);
            if overflow {
                acc.top_overflow += 1;
                return acc;
            }
            let s = reach::g_sandwich(&cfg, &inner).expect("valid box");
            for site in inner.sites() {
                let t = truth.contains(&site);
                if (s.g_opt.contains(&site.0) && !t) || (t && !s.g_pes.contains(&site.0)) {
                    acc.violations += 1;
                    break;
                }
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(SandwichSweep::default(), |mut a, b| {
        a.configs += b.configs;
        a.top_overflow += b.top_overflow;
        a.violations += b.violations;
        a
    }))
}

/// The full sweep suite behind the `oracle` subcommand.
pub fn run_sweeps() -> Result<Vec<CheckOutcome>, OracleError> {
    let mut out = Vec::new();
    for d in [2, 3] {
        for set in [StepSet::Full, StepSet::NoStraightDown] {
            out.push(check_bucket_bound(d, set, 8)?);
            out.push(check_partial_sums(d, set, 8, 0.99, &[(0, 0), (1, 0), (0, 1), (-1, 1)])?);
        }
    }
    let sweep = cover_sweep(2, 2)?;
    out.push(CheckOutcome {
        name: "cover_fixed_point_equivalence_5x3".into(),
        passed: sweep.mismatches == 0 && sweep.engine_only == 0,
        detail: serde_json::to_value(&sweep).expect("serializable"),
    });
    for set in [StepSet::Full, StepSet::NoStraightDown] {
        let bad = walk_path_mismatches(set);
        out.push(CheckOutcome {
            name: format!("walk_path_equivalence_3x3_{set:?}"),
            passed: bad == 0,
            detail: serde_json::json!({ "mismatches": bad }),
        });
    }
    let sw = sandwich_sweep(1, 2)?;
    out.push(CheckOutcome {
        name: "sandwich_validity_3x3_margin1".into(),
        passed: sw.violations == 0,
        detail: serde_json::to_value(&sw).expect("serializable"),
    });
    for set in [StepSet::Full, StepSet::NoStraightDown] {
        let paths = enum_paths(3, set, 6)?.endpoints();
        let walks = enum_walk_endpoints(3, set, 6)?;
        out.push(CheckOutcome {
            name: format!("loop_erasure_endpoints_d3_{set:?}"),
            passed: paths == walks,
            detail: serde_json::json!({ "endpoints": paths.len() }),
        });
    }
    Ok(out)
}

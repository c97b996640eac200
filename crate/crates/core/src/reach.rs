//! Admissible Λ-path reachability inside finite boxes.
//!
//! A Λ-path moves by `+e_d`, `-e_d` or `-e_d ± e_j`; it is admissible when
//! every `+e_d` step lands on a closed site. Reachability is computed by a
//! breadth-first sweep over a flat box index. Walks are allowed to revisit
//! sites: erasing loops from an admissible walk leaves an admissible path
//! with the same endpoints, so walk- and path-reachability coincide.
//!
//! Box certification uses two runs over the same box. The optimistic run
//! seeds only the genuine sources. The pessimistic run additionally seeds
//! every site through which a path from outside could enter the box
//! sideways (and, for boxes reaching below the sources, every closed site
//! of the bottom layer). Entries through the top face are excluded by
//! assumption; see [`crate::surface::top_inflow_bound`] for the probability
//! that this assumption fails.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{BoxRegion, PercolationField, Site, SiteField};
use crate::stats::{wilson_interval, CONFIDENCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("source {0} lies outside the box")]
    SourceOutsideBox(Site),
    #[error("dimension mismatch: field has {field}, box has {region}")]
    DimensionMismatch { field: usize, region: usize },
    #[error("box must span heights [0, h] with h >= 1, got [{lo}, {hi}]")]
    DegenerateBox { lo: i64, hi: i64 },
    #[error(transparent)]
    Lattice(#[from] crate::lattice::LatticeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepSet {
    /// `{±e_d} ∪ {-e_d ± e_j}`.
    #[default]
    Full,
    /// The full set without the straight-down step.
    NoStraightDown,
}

impl StepSet {
    /// Number of distinct steps in dimension `d`.
    pub fn size(self, d: usize) -> usize {
        match self {
            StepSet::Full => 2 * d,
            StepSet::NoStraightDown => 2 * d - 1,
        }
    }
}

/// Step displacements; the upward step `+e_d` always comes first.
pub fn step_vectors(d: usize, set: StepSet) -> Vec<Vec<i64>> {
    assert!(d >= 2, "step sets need d >= 2");
    let unit = |axis: usize, v: i64| {
        let mut s = vec![0; d];
        s[axis] = v;
        s
    };
    let mut out = vec![unit(d - 1, 1)];
    if set == StepSet::Full {
        out.push(unit(d - 1, -1));
    }
    for j in 0..d - 1 {
        for sign in [1, -1] {
            let mut s = unit(d - 1, -1);
            s[j] = sign;
            out.push(s);
        }
    }
    out
}

#[inline]
fn is_up(step: &[i64]) -> bool {
    step[step.len() - 1] == 1
}

/// Admissible one-step moves from `site`, dropping any below `height_floor`.
pub fn successors<F: SiteField + ?Sized>(
    field: &F,
    site: &[i64],
    set: StepSet,
    height_floor: Option<i64>,
) -> Vec<Site> {
    let d = site.len();
    let mut out = Vec::new();
    for step in step_vectors(d, set) {
        let target: Vec<i64> = site.iter().zip(&step).map(|(a, b)| a + b).collect();
        if let Some(f) = height_floor {
            if target[d - 1] < f {
                continue;
            }
        }
        if is_up(&step) && field.is_open(&target) {
            continue;
        }
        out.push(Site(target));
    }
    out
}

/// Sites reached inside a box, as a mask over its flat index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachResult {
    region: BoxRegion,
    mask: Vec<bool>,
    sources: Vec<Site>,
    pub touched_side: bool,
    pub touched_top: bool,
    pub touched_bottom: bool,
}

impl ReachResult {
    fn empty(region: BoxRegion) -> Self {
        let n = region.volume();
        ReachResult {
            region,
            mask: vec![false; n],
            sources: Vec::new(),
            touched_side: false,
            touched_top: false,
            touched_bottom: false,
        }
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn sources(&self) -> &[Site] {
        &self.sources
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        self.region.index_of(coords).is_some_and(|i| self.mask[i])
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Reached sites in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.region.site_at(i))
            .collect()
    }

    /// Every reached site is also reached by `other` (same box required).
    pub fn is_subset_of(&self, other: &ReachResult) -> bool {
        assert_eq!(self.region, other.region);
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Highest reached height in column `x`, if any.
    pub fn column_top(&self, column: &[i64]) -> Option<i64> {
        let d = self.region.dim();
        let (lo, hi) = (self.region.lo()[d - 1], self.region.hi()[d - 1]);
        let mut c = column.to_vec();
        c.push(hi);
        let mut h = hi;
        while h >= lo {
            c[d - 1] = h;
            if self.contains(&c) {
                return Some(h);
            }
            h -= 1;
        }
        None
    }

    /// `min{t > 0 : (x, t) not reached}`, or `None` when every height up to
    /// the box top is reached.
    pub fn first_gap_above_zero(&self, column: &[i64]) -> Option<i64> {
        let d = self.region.dim();
        let hi = self.region.hi()[d - 1];
        let mut c = column.to_vec();
        c.push(1);
        for t in 1..=hi {
            c[d - 1] = t;
            if !self.contains(&c) {
                return Some(t);
            }
        }
        None
    }
}

/// BFS over one box with a lazily filled state cache shared between runs.
pub(crate) struct BoxEngine<'a, F: ?Sized> {
    field: &'a F,
    region: BoxRegion,
    steps: Vec<Vec<i64>>,
    offsets: Vec<isize>,
    // 0 unknown, 1 open, 2 closed
    cache: Vec<u8>,
    height_floor: Option<i64>,
}

impl<'a, F: SiteField + ?Sized> BoxEngine<'a, F> {
    pub(crate) fn new(
        field: &'a F,
        region: &BoxRegion,
        set: StepSet,
        height_floor: Option<i64>,
    ) -> Result<Self, ReachError> {
        if field.dim() != region.dim() {
            return Err(ReachError::DimensionMismatch { field: field.dim(), region: region.dim() });
        }
        let d = region.dim();
        let strides = region.strides();
        let steps = step_vectors(d, set);
        let offsets = steps
            .iter()
            .map(|s| s.iter().zip(&strides).map(|(&a, &b)| a as isize * b as isize).sum())
            .collect();
        Ok(BoxEngine {
            field,
            region: region.clone(),
            steps,
            offsets,
            cache: vec![0; region.volume()],
            height_floor,
        })
    }

    #[inline]
    pub(crate) fn is_closed_at(&mut self, idx: usize, coords: &[i64]) -> bool {
        match self.cache[idx] {
            1 => false,
            2 => true,
            _ => {
                let open = self.field.is_open(coords);
                self.cache[idx] = if open { 1 } else { 2 };
                !open
            }
        }
    }

    pub(crate) fn run(&mut self, seeds: &[usize], sources: Vec<Site>) -> ReachResult {
        let region = self.region.clone();
        let d = region.dim();
        let lo = region.lo().to_vec();
        let hi = region.hi().to_vec();
        let floor = self.height_floor.map_or(lo[d - 1], |f| f.max(lo[d - 1]));
        let mut out = ReachResult::empty(region);
        out.sources = sources;
        let mut queue = VecDeque::with_capacity(seeds.len());
        for &s in seeds {
            if !out.mask[s] {
                out.mask[s] = true;
                queue.push_back(s);
            }
        }
        let mut cur = vec![0i64; d];
        let mut nxt = vec![0i64; d];
        while let Some(idx) = queue.pop_front() {
            out.region.coords_into(idx, &mut cur);
            if (0..d - 1).any(|a| cur[a] == lo[a] || cur[a] == hi[a]) {
                out.touched_side = true;
            }
            if cur[d - 1] == hi[d - 1] {
                out.touched_top = true;
            }
            if cur[d - 1] == lo[d - 1] {
                out.touched_bottom = true;
            }
            for k in 0..self.steps.len() {
                let step = &self.steps[k];
                let mut inside = true;
                for a in 0..d {
                    nxt[a] = cur[a] + step[a];
                    if nxt[a] < lo[a] || nxt[a] > hi[a] {
                        inside = false;
                        break;
                    }
                }
                if !inside || nxt[d - 1] < floor {
                    continue;
                }
                let t = (idx as isize + self.offsets[k]) as usize;
                if out.mask[t] {
                    continue;
                }
                if step[d - 1] == 1 && !self.is_closed_at(t, &nxt) {
                    continue;
                }
                out.mask[t] = true;
                queue.push_back(t);
            }
        }
        out
    }

    pub(crate) fn index_sources(&self, sources: &[Site]) -> Result<Vec<usize>, ReachError> {
        sources
            .iter()
            .map(|s| self.region.index_of(&s.0).ok_or_else(|| ReachError::SourceOutsideBox(s.clone())))
            .collect()
    }

    /// Flat indices of the lateral boundary layer.
    pub(crate) fn side_layer(&self) -> Vec<usize> {
        let mut c = vec![0; self.region.dim()];
        (0..self.region.volume())
            .filter(|&i| {
                self.region.coords_into(i, &mut c);
                self.region.on_side(&c)
            })
            .collect()
    }

    pub(crate) fn height_layer(&self, h: i64) -> Vec<usize> {
        let d = self.region.dim();
        let mut c = vec![0; d];
        (0..self.region.volume())
            .filter(|&i| {
                self.region.coords_into(i, &mut c);
                c[d - 1] == h
            })
            .collect()
    }
}

/// All sites of `region` reachable from `sources` by admissible steps that stay
/// inside the box and at or above `height_floor`.
pub fn reach<F: SiteField + ?Sized>(
    field: &F,
    sources: &[Site],
    region: &BoxRegion,
    set: StepSet,
    height_floor: Option<i64>,
) -> Result<ReachResult, ReachError> {
    if sources.is_empty() {
        return Ok(ReachResult::empty(region.clone()));
    }
    let mut engine = BoxEngine::new(field, region, set, height_floor)?;
    let seeds = engine.index_sources(sources)?;
    Ok(engine.run(&seeds, sources.to_vec()))
}

/// Two-sided bracket of `G ∩ box`, where `G` is everything reachable from the
/// half-space of non-positive heights.
#[derive(Clone, Debug)]
pub struct GSandwich {
    pub g_opt: ReachResult,
    pub g_pes: ReachResult,
}

impl GSandwich {
    /// `(F_opt(x), F_pes(x))`; the true value lies between them.
    pub fn surface_bounds(&self, column: &[i64]) -> (i64, Option<i64>) {
        let lower = self
            .g_opt
            .first_gap_above_zero(column)
            .unwrap_or(self.g_opt.region().hi()[column.len()] + 1);
        (lower, self.g_pes.first_gap_above_zero(column))
    }
}

fn check_g_box(region: &BoxRegion) -> Result<(), ReachError> {
    let d = region.dim();
    let (lo, hi) = (region.lo()[d - 1], region.hi()[d - 1]);
    if lo != 0 || hi < 1 {
        return Err(ReachError::DegenerateBox { lo, hi });
    }
    Ok(())
}

/// Optimistic and pessimistic approximations of `G ∩ box` for a box spanning
/// heights `[0, h_max]`.
pub fn g_sandwich<F: SiteField + ?Sized>(field: &F, region: &BoxRegion) -> Result<GSandwich, ReachError> {
    g_sandwich_with(field, region, StepSet::Full)
}

pub(crate) fn g_sandwich_with<F: SiteField + ?Sized>(
    field: &F,
    region: &BoxRegion,
    set: StepSet,
) -> Result<GSandwich, ReachError> {
    check_g_box(region)?;
    let mut engine = BoxEngine::new(field, region, set, Some(0))?;
    let bottom = engine.height_layer(0);
    let sources: Vec<Site> = bottom.iter().map(|&i| region.site_at(i)).collect();
    let g_opt = engine.run(&bottom, sources.clone());
    let mut seeds = bottom;
    seeds.extend(engine.side_layer());
    let g_pes = engine.run(&seeds, sources);
    Ok(GSandwich { g_opt, g_pes })
}

/// Single-source bracket: `(optimistic, pessimistic)` reach from `source`.
pub fn single_source_sandwich<F: SiteField + ?Sized>(
    field: &F,
    source: &Site,
    region: &BoxRegion,
    set: StepSet,
) -> Result<(ReachResult, ReachResult), ReachError> {
    let mut engine = BoxEngine::new(field, region, set, None)?;
    let src = engine.index_sources(std::slice::from_ref(source))?;
    let opt = engine.run(&src, vec![source.clone()]);
    let d = region.dim();
    let mut seeds = src;
    seeds.extend(engine.side_layer());
    let bottom_h = region.lo()[d - 1];
    let mut c = vec![0; d];
    for i in engine.height_layer(bottom_h) {
        region.coords_into(i, &mut c);
        if engine.is_closed_at(i, &c) {
            seeds.push(i);
        }
    }
    let pes = engine.run(&seeds, vec![source.clone()]);
    Ok((opt, pes))
}

/// Interval estimate of `tau_p(u) = P_p(0 ⇢ u)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauEstimate {
    pub trials: u64,
    pub hits_lo: u64,
    pub hits_hi: u64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Replicates where the two sides disagree.
    pub unresolved: u64,
}

/// Monte Carlo bracket for `tau_p(u)` over replicates `0..replicates` of
/// `PercolationField(d, p, seed, ·)`.
pub fn tau_hat(
    d: usize,
    p: f64,
    seed: u64,
    u: &Site,
    region: &BoxRegion,
    set: StepSet,
    replicates: u64,
) -> Result<TauEstimate, ReachError> {
    let origin = Site::origin(d);
    if !region.contains(&origin.0) {
        return Err(ReachError::SourceOutsideBox(origin));
    }
    if !region.contains(&u.0) {
        return Err(ReachError::SourceOutsideBox(u.clone()));
    }
    let counts = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<(u64, u64), ReachError> {
            let field = PercolationField::new(d, p, seed, r)?;
            let (opt, pes) = single_source_sandwich(&field, &origin, region, set)?;
            Ok((opt.contains(&u.0) as u64, pes.contains(&u.0) as u64))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let (hits_lo, hits_hi) = counts;
    let n = replicates as f64;
    Ok(TauEstimate {
        trials: replicates,
        hits_lo,
        hits_hi,
        p_lo: hits_lo as f64 / n,
        p_hi: hits_hi as f64 / n,
        ci_lo: wilson_interval(hits_lo, replicates, CONFIDENCE).0,
        ci_hi: wilson_interval(hits_hi, replicates, CONFIDENCE).1,
        unresolved: hits_hi - hits_lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::PatternField;
    use std::collections::BTreeSet;

    fn set(v: &[&[i64]]) -> BTreeSet<Site> {
        v.iter().map(|c| Site::new(c.to_vec())).collect()
    }

    #[test]
    fn step_sets_in_the_plane() {
        let full: BTreeSet<_> = step_vectors(2, StepSet::Full).into_iter().collect();
        let want: BTreeSet<_> = [vec![0, 1], vec![0, -1], vec![1, -1], vec![-1, -1]].into_iter().collect();
        assert_eq!(full, want);
        let restricted: BTreeSet<_> = step_vectors(2, StepSet::NoStraightDown).into_iter().collect();
        let mut want2 = want.clone();
        want2.remove(&vec![0, -1]);
        assert_eq!(restricted, want2);
        for d in 2..=6 {
            assert_eq!(step_vectors(d, StepSet::Full).len(), 2 * d);
            assert_eq!(step_vectors(d, StepSet::NoStraightDown).len(), 2 * d - 1);
        }
    }

    #[test]
    fn successor_rules() {
        let open = PatternField::all_open(2);
        assert!(successors(&open, &[0, 0], StepSet::Full, Some(0)).is_empty());
        let closed = PatternField::all_closed(2);
        let s: BTreeSet<_> = successors(&closed, &[0, 5], StepSet::Full, None).into_iter().collect();
        assert_eq!(s, set(&[&[0, 6], &[0, 4], &[1, 4], &[-1, 4]]));
        let one = PatternField::all_open(2).with_closed(&[0, 1]);
        let s: BTreeSet<_> = successors(&one, &[0, 0], StepSet::Full, Some(0)).into_iter().collect();
        assert_eq!(s, set(&[&[0, 1]]));
    }

    #[test]
    fn all_open_reach_is_downward_cone() {
        let f = PatternField::all_open(2);
        let b = BoxRegion::new(vec![-6, -3], vec![6, 3]).unwrap();
        let r = reach(&f, &[Site::new(vec![0, 2])], &b, StepSet::Full, None).unwrap();
        let got: BTreeSet<_> = r.sites().into_iter().collect();
        let want: BTreeSet<_> = b
            .sites()
            .filter(|s| s.0[1] <= 2 && s.0[0].abs() <= 2 - s.0[1])
            .collect();
        assert_eq!(got, want);
        assert!(r.touched_bottom && !r.touched_top && !r.touched_side);
    }

    #[test]
    fn empty_sources_give_empty_result() {
        let f = PatternField::all_closed(2);
        let b = BoxRegion::new(vec![-1, 0], vec![1, 1]).unwrap();
        let r = reach(&f, &[], &b, StepSet::Full, None).unwrap();
        assert!(r.is_empty());
        assert!(!(r.touched_side || r.touched_top || r.touched_bottom));
        assert!(reach(&f, &[Site::new(vec![5, 0])], &b, StepSet::Full, None).is_err());
    }

    #[test]
    fn sandwich_single_closed_site() {
        let f = PatternField::all_open(2).with_closed(&[0, 1]);
        let b = BoxRegion::new(vec![-3, 0], vec![3, 3]).unwrap();
        let s = g_sandwich(&f, &b).unwrap();
        let above: BTreeSet<_> = s.g_opt.sites().into_iter().filter(|x| x.height() >= 1).collect();
        assert_eq!(above, set(&[&[0, 1]]));
        assert!(s.g_opt.is_subset_of(&s.g_pes));
    }

    #[test]
    fn sandwich_all_open_has_nothing_above_zero() {
        let f = PatternField::all_open(3);
        let b = BoxRegion::centered(3, 4, 0, 5).unwrap();
        let s = g_sandwich(&f, &b).unwrap();
        assert!(s.g_opt.sites().iter().all(|x| x.height() == 0));
    }

    #[test]
    fn degenerate_g_box_rejected() {
        let f = PatternField::all_open(2);
        let b = BoxRegion::new(vec![-2, 0], vec![2, 0]).unwrap();
        assert!(matches!(g_sandwich(&f, &b), Err(ReachError::DegenerateBox { .. })));
        let b = BoxRegion::new(vec![-2, -1], vec![2, 3]).unwrap();
        assert!(matches!(g_sandwich(&f, &b), Err(ReachError::DegenerateBox { .. })));
    }

    #[test]
    fn sandwich_invariants_on_random_fields() {
        let b = BoxRegion::centered(2, 8, 0, 8).unwrap();
        for r in 0..1000 {
            let f = PercolationField::new(2, 0.8, 99, r).unwrap();
            let s = g_sandwich(&f, &b).unwrap();
            assert!(s.g_opt.is_subset_of(&s.g_pes));
            for g in [&s.g_opt, &s.g_pes] {
                for site in g.sites() {
                    if site.height() >= 1 {
                        assert!(g.contains(&site.offset(&[0, -1]).0), "downward closure at {site}");
                    }
                }
            }
        }
    }

    #[test]
    fn frontier_order_does_not_matter() {
        let b = BoxRegion::centered(2, 6, -3, 6).unwrap();
        let f = PercolationField::new(2, 0.6, 3, 0).unwrap();
        let srcs = vec![Site::new(vec![0, 0]), Site::new(vec![2, 1]), Site::new(vec![-3, -1])];
        let a = reach(&f, &srcs, &b, StepSet::Full, None).unwrap();
        let mut rev = srcs.clone();
        rev.reverse();
        let r = reach(&f, &rev, &b, StepSet::Full, None).unwrap();
        assert_eq!(a.sites(), r.sites());
        // union of single-source reaches
        let mut union = BTreeSet::new();
        for s in &srcs {
            union.extend(reach(&f, std::slice::from_ref(s), &b, StepSet::Full, None).unwrap().sites());
        }
        assert_eq!(a.sites().into_iter().collect::<BTreeSet<_>>(), union);
    }

    #[test]
    fn climbing_needs_closed_sites() {
        let b = BoxRegion::centered(2, 5, 0, 10).unwrap();
        for r in 0..200 {
            let f = PercolationField::new(2, 0.7, 1, r).unwrap();
            let closed = b.sites().filter(|s| !f.is_open(&s.0)).count() as i64;
            let res = reach(&f, &[Site::origin(2)], &b, StepSet::Full, Some(0)).unwrap();
            for s in res.sites() {
                assert!(s.height() <= closed);
            }
        }
    }

    #[test]
    fn tau_at_origin_is_one() {
        let b = BoxRegion::centered(2, 3, -3, 3).unwrap();
        let t = tau_hat(2, 0.9, 1, &Site::origin(2), &b, StepSet::Full, 50).unwrap();
        assert_eq!((t.hits_lo, t.hits_hi), (50, 50));
    }

    proptest::proptest! {
        #[test]
        fn opening_a_site_never_adds_reach(seed in 0u64..1000, x in -4i64..=4, h in -2i64..=5) {
            let b = BoxRegion::centered(2, 4, -2, 5).unwrap();
            let f = PercolationField::new(2, 0.6, seed, 0).unwrap();
            let mut closed = crate::lattice::ExplicitConfig::sample(&f, b.clone());
            closed.set(&[x, h], crate::lattice::SiteState::Closed);
            let mut opened = closed.clone();
            opened.set(&[x, h], crate::lattice::SiteState::Open);
            let src = [Site::origin(2)];
            let a = reach(&closed, &src, &b, StepSet::Full, None).unwrap();
            let o = reach(&opened, &src, &b, StepSet::Full, None).unwrap();
            proptest::prop_assert!(o.is_subset_of(&a));
        }

        #[test]
        fn box_monotonicity(seed in 0u64..500) {
            let f = PercolationField::new(2, 0.75, seed, 0).unwrap();
            let small = BoxRegion::centered(2, 5, 0, 5).unwrap();
            let big = BoxRegion::centered(2, 8, 0, 5).unwrap();
            let s = g_sandwich(&f, &small).unwrap();
            let l = g_sandwich(&f, &big).unwrap();
            for site in small.sites() {
                if s.g_opt.contains(&site.0) {
                    proptest::prop_assert!(l.g_opt.contains(&site.0));
                }
                if l.g_pes.contains(&site.0) {
                    proptest::prop_assert!(s.g_pes.contains(&site.0));
                }
            }
        }
    }
}

//! Lattice geometry and the site percolation probability space.
//!
//! Site states are never stored: a [`PercolationField`] hashes
//! `(master_seed, replicate, coords)` into a 64-bit uniform and compares it
//! against a threshold derived from `p`. The state of a site therefore does
//! not depend on which box it is observed through, and two fields that share
//! seed and replicate but differ in `p` are monotonically coupled.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("box axis {axis} is empty: lo {lo} > hi {hi}")]
    EmptyAxis { axis: usize, lo: i64, hi: i64 },
    #[error("explicit configuration has {got} states for a box of {expected} sites")]
    StateCount { expected: usize, got: usize },
    #[error("explicit configuration too large for exhaustive enumeration: {0} sites")]
    TooManySites(usize),
}

/// A point of `Z^d`; the last coordinate is the height.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn origin(d: usize) -> Self {
        Site(vec![0; d])
    }

    /// `h * e_d`.
    pub fn vertical(d: usize, h: i64) -> Self {
        let mut c = vec![0; d];
        c[d - 1] = h;
        Site(c)
    }

    /// A column `x` of `Z^{d-1}` lifted to height `h`.
    pub fn lift(column: &[i64], h: i64) -> Self {
        let mut c = column.to_vec();
        c.push(h);
        Site(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn height(&self) -> i64 {
        height(&self.0)
    }

    pub fn radial(&self) -> u64 {
        radial(&self.0)
    }

    pub fn norm(&self) -> u64 {
        l1_norm(&self.0)
    }

    pub fn column(&self) -> &[i64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn offset(&self, delta: &[i64]) -> Site {
        Site(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Last coordinate.
#[inline]
pub fn height(coords: &[i64]) -> i64 {
    coords[coords.len() - 1]
}

/// 1-norm of the first `d-1` coordinates.
#[inline]
pub fn radial(coords: &[i64]) -> u64 {
    coords[..coords.len() - 1].iter().map(|c| c.unsigned_abs()).sum()
}

#[inline]
pub fn l1_norm(coords: &[i64]) -> u64 {
    coords.iter().map(|c| c.unsigned_abs()).sum()
}

/// Exact number of points of `Z^dim` with 1-norm equal to `n`.
///
/// Choosing which `j` coordinates are nonzero, their signs, and a
/// composition of `n` into `j` positive parts gives
/// `sum_j 2^j C(dim, j) C(n-1, j-1)`.
pub fn count_l1_sphere(dim: usize, n: u64) -> u64 {
    assert!(dim >= 1, "count_l1_sphere needs dim >= 1");
    if n == 0 {
        return 1;
    }
    let mut total: u128 = 0;
    for j in 1..=dim.min(n as usize) {
        let term = (1u128 << j) * binomial(dim as u64, j as u64) * binomial(n - 1, j as u64 - 1);
        total += term;
    }
    u64::try_from(total).expect("l1 sphere count overflows u64")
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Axis-aligned box `prod [lo_i, hi_i]`, flattened row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRegion {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self, LatticeError> {
        if lo.len() != hi.len() {
            return Err(LatticeError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if l > h {
                return Err(LatticeError::EmptyAxis { axis, lo: l, hi: h });
            }
        }
        Ok(BoxRegion { lo, hi })
    }

    /// Columns `[-margin, margin]^{d-1}` and heights `[h_lo, h_hi]`.
    pub fn centered(d: usize, margin: i64, h_lo: i64, h_hi: i64) -> Result<Self, LatticeError> {
        let mut lo = vec![-margin; d - 1];
        let mut hi = vec![margin; d - 1];
        lo.push(h_lo);
        hi.push(h_hi);
        BoxRegion::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|a| self.extent(a)).product()
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        coords.len() == self.dim()
            && coords.iter().zip(self.lo.iter().zip(&self.hi)).all(|(c, (l, h))| l <= c && c <= h)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.extent(a + 1);
        }
        s
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        if !self.contains(coords) {
            return None;
        }
        let mut idx = 0usize;
        for a in 0..self.dim() {
            idx = idx * self.extent(a) + (coords[a] - self.lo[a]) as usize;
        }
        Some(idx)
    }

    pub fn coords_into(&self, mut idx: usize, out: &mut [i64]) {
        for a in (0..self.dim()).rev() {
            let e = self.extent(a);
            out[a] = self.lo[a] + (idx % e) as i64;
            idx /= e;
        }
    }

    pub fn site_at(&self, idx: usize) -> Site {
        let mut c = vec![0; self.dim()];
        self.coords_into(idx, &mut c);
        Site(c)
    }

    /// Sites in lexicographic order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.volume()).map(move |i| self.site_at(i))
    }

    /// True when some horizontal coordinate sits on the box's lateral faces.
    pub fn on_side(&self, coords: &[i64]) -> bool {
        let d = self.dim();
        (0..d - 1).any(|a| coords[a] == self.lo[a] || coords[a] == self.hi[a])
    }

    pub fn on_top(&self, coords: &[i64]) -> bool {
        height(coords) == self.hi[self.dim() - 1]
    }

    pub fn on_bottom(&self, coords: &[i64]) -> bool {
        height(coords) == self.lo[self.dim() - 1]
    }

    /// Base columns of the box, i.e. its projection to `Z^{d-1}`.
    pub fn columns(&self) -> Vec<Vec<i64>> {
        let d = self.dim();
        let base = BoxRegion::new(self.lo[..d - 1].to_vec(), self.hi[..d - 1].to_vec())
            .expect("projection of a valid box");
        base.sites().map(|s| s.0).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteState {
    Open,
    Closed,
}

impl SiteState {
    pub fn is_open(self) -> bool {
        matches!(self, SiteState::Open)
    }
}

/// Anything that assigns a state to every site of `Z^d`.
pub trait SiteField: Sync {
    fn dim(&self) -> usize;
    fn is_open(&self, coords: &[i64]) -> bool;

    fn state(&self, coords: &[i64]) -> SiteState {
        if self.is_open(coords) {
            SiteState::Open
        } else {
            SiteState::Closed
        }
    }
}

impl<F: SiteField + ?Sized> SiteField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn is_open(&self, coords: &[i64]) -> bool {
        (**self).is_open(coords)
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent 64-bit stream key for `(master, index)`.
#[inline]
pub fn stream_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master ^ 0x5851_f42d_4c95_7f2d).wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// `p` quantized to a 64-bit threshold: a site is open iff its uniform is below it.
pub fn open_threshold(p: f64) -> u64 {
    // 2^64 as f64; the cast saturates at u64::MAX.
    (p * 18_446_744_073_709_551_616.0) as u64
}

/// The i.i.d. site configuration `P_p` on `Z^d`, addressed by `(master_seed, replicate)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercolationField {
    d: usize,
    p: f64,
    master_seed: u64,
    replicate: u64,
    #[serde(skip)]
    key: u64,
    #[serde(skip)]
    threshold: u64,
}

impl PercolationField {
    pub fn new(d: usize, p: f64, master_seed: u64, replicate: u64) -> Result<Self, LatticeError> {
        if d < 2 {
            return Err(LatticeError::DimensionTooSmall(d));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(LatticeError::ProbabilityOutOfRange(p));
        }
        Ok(PercolationField {
            d,
            p,
            master_seed,
            replicate,
            key: stream_seed(master_seed, replicate),
            threshold: open_threshold(p),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// Same uniforms, different `p`.
    pub fn with_p(&self, p: f64) -> Result<Self, LatticeError> {
        PercolationField::new(self.d, p, self.master_seed, self.replicate)
    }

    /// The shared per-site uniform, as a raw 64-bit integer.
    #[inline]
    pub fn uniform_bits(&self, coords: &[i64]) -> u64 {
        let mut h = self.key;
        for (i, &c) in coords.iter().enumerate() {
            h = mix64(h ^ (c as u64).wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
        }
        h
    }

    pub fn site_state(&self, site: &Site) -> Result<SiteState, LatticeError> {
        if site.dim() != self.d {
            return Err(LatticeError::DimensionMismatch { expected: self.d, got: site.dim() });
        }
        Ok(self.state(&site.0))
    }
}

impl SiteField for PercolationField {
    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn is_open(&self, coords: &[i64]) -> bool {
        debug_assert_eq!(coords.len(), self.d);
        self.uniform_bits(coords) < self.threshold
    }
}

/// A constant background with finitely many exceptions; used for hand-built scenarios.
#[derive(Clone, Debug, Default)]
pub struct PatternField {
    d: usize,
    background_open: bool,
    exceptions: HashMap<Vec<i64>, SiteState>,
}

impl PatternField {
    pub fn all_open(d: usize) -> Self {
        PatternField { d, background_open: true, exceptions: HashMap::new() }
    }

    pub fn all_closed(d: usize) -> Self {
        PatternField { d, background_open: false, exceptions: HashMap::new() }
    }

    pub fn with(mut self, coords: &[i64], state: SiteState) -> Self {
        assert_eq!(coords.len(), self.d);
        self.exceptions.insert(coords.to_vec(), state);
        self
    }

    pub fn with_closed(self, coords: &[i64]) -> Self {
        self.with(coords, SiteState::Closed)
    }

    pub fn with_open(self, coords: &[i64]) -> Self {
        self.with(coords, SiteState::Open)
    }
}

impl SiteField for PatternField {
    fn dim(&self) -> usize {
        self.d
    }

    fn is_open(&self, coords: &[i64]) -> bool {
        match self.exceptions.get(coords) {
            Some(s) => s.is_open(),
            None => self.background_open,
        }
    }
}

/// A materialized configuration of a box. Sites outside the box read as open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplicitConfig {
    region: BoxRegion,
    open: Vec<bool>,
}

/// Upper limit on box size for `2^N` sweeps.
pub const MAX_EXHAUSTIVE_SITES: usize = 30;

impl ExplicitConfig {
    pub fn new(region: BoxRegion, open: Vec<bool>) -> Result<Self, LatticeError> {
        if open.len() != region.volume() {
            return Err(LatticeError::StateCount { expected: region.volume(), got: open.len() });
        }
        Ok(ExplicitConfig { region, open })
    }

    /// Bit `i` of `bits` is the state (1 = open) of the `i`-th site in lexicographic order.
    pub fn from_bits(region: BoxRegion, bits: u64) -> Result<Self, LatticeError> {
        let n = region.volume();
        if n > MAX_EXHAUSTIVE_SITES {
            return Err(LatticeError::TooManySites(n));
        }
        let open = (0..n).map(|i| bits >> i & 1 == 1).collect();
        Ok(ExplicitConfig { region, open })
    }

    /// Snapshot of any field over `region`.
    pub fn sample<F: SiteField + ?Sized>(field: &F, region: BoxRegion) -> Self {
        let mut c = vec![0; region.dim()];
        let open = (0..region.volume())
            .map(|i| {
                region.coords_into(i, &mut c);
                field.is_open(&c)
            })
            .collect();
        ExplicitConfig { region, open }
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn open_flags(&self) -> &[bool] {
        &self.open
    }

    pub fn count_open(&self) -> usize {
        self.open.iter().filter(|&&o| o).count()
    }

    pub fn set(&mut self, coords: &[i64], state: SiteState) {
        let idx = self.region.index_of(coords).expect("site outside explicit configuration");
        self.open[idx] = state.is_open();
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "box": { "lo": self.region.lo(), "hi": self.region.hi() },
            "states": self.open.iter().map(|&o| o as u8).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "box")]
            region: BoxRegion,
            states: Vec<u8>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        let region = BoxRegion::new(raw.region.lo, raw.region.hi)
            .map_err(serde::de::Error::custom)?;
        ExplicitConfig::new(region, raw.states.into_iter().map(|s| s != 0).collect())
            .map_err(serde::de::Error::custom)
    }
}

impl SiteField for ExplicitConfig {
    fn dim(&self) -> usize {
        self.region.dim()
    }

    fn is_open(&self, coords: &[i64]) -> bool {
        match self.region.index_of(coords) {
            Some(i) => self.open[i],
            None => true,
        }
    }
}

/// A signed permutation of the horizontal axes `Z^{d-1}`; fixes the origin and heights.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HorizontalIsometry {
    perm: Vec<usize>,
    signs: Vec<i64>,
}

impl HorizontalIsometry {
    pub fn identity(dim: usize) -> Self {
        HorizontalIsometry { perm: (0..dim).collect(), signs: vec![1; dim] }
    }

    /// Output axis `i` takes `signs[i] * input[perm[i]]`.
    pub fn new(perm: Vec<usize>, signs: Vec<i64>) -> Self {
        assert_eq!(perm.len(), signs.len());
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            assert!(!seen[p], "not a permutation");
            seen[p] = true;
        }
        assert!(signs.iter().all(|s| s.abs() == 1));
        HorizontalIsometry { perm, signs }
    }

    /// All `2^k k!` signed permutations of `Z^k`.
    pub fn all(dim: usize) -> Vec<Self> {
        let mut perms = Vec::new();
        permutations(&mut (0..dim).collect::<Vec<_>>(), 0, &mut perms);
        let mut out = Vec::new();
        for perm in perms {
            for mask in 0..(1u32 << dim) {
                let signs = (0..dim).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
                out.push(HorizontalIsometry { perm: perm.clone(), signs });
            }
        }
        out
    }

    pub fn apply_column(&self, column: &[i64]) -> Vec<i64> {
        self.perm.iter().zip(&self.signs).map(|(&p, &s)| s * column[p]).collect()
    }

    /// Acts on the first `d-1` coordinates of a site, leaving the height alone.
    pub fn apply_site(&self, coords: &[i64]) -> Vec<i64> {
        let k = self.perm.len();
        let mut out = self.apply_column(&coords[..k]);
        out.push(coords[k]);
        out
    }

    pub fn inverse(&self) -> Self {
        let k = self.perm.len();
        let mut perm = vec![0; k];
        let mut signs = vec![1; k];
        for i in 0..k {
            perm[self.perm[i]] = i;
            signs[self.perm[i]] = self.signs[i];
        }
        HorizontalIsometry { perm, signs }
    }
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// The field `omega o theta^{-1}`: the configuration moved by `theta`.
pub struct Transformed<F> {
    inner: F,
    inverse: HorizontalIsometry,
}

impl<F: SiteField> Transformed<F> {
    pub fn new(inner: F, theta: &HorizontalIsometry) -> Self {
        Transformed { inner, inverse: theta.inverse() }
    }
}

impl<F: SiteField> SiteField for Transformed<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn is_open(&self, coords: &[i64]) -> bool {
        self.inner.is_open(&self.inverse.apply_site(coords))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sphere(dim: usize, n: u64) -> u64 {
        let r = n as i64;
        let region = BoxRegion::new(vec![-r; dim], vec![r; dim]).unwrap();
        region.sites().filter(|s| s.norm() == n).count() as u64
    }

    #[test]
    fn height_and_radial() {
        let o = Site::origin(3);
        assert_eq!((o.height(), o.radial()), (0, 0));
        let s = Site::new(vec![2, -1, 5]);
        assert_eq!(s.height(), 5);
        assert_eq!(s.radial(), 3);
        assert_eq!(s.offset(&[0, 0, -1]).height(), 4);
    }

    #[test]
    fn sphere_counts_small() {
        assert_eq!(count_l1_sphere(1, 3), 2);
        assert_eq!(count_l1_sphere(2, 2), 8);
        for dim in 1..5 {
            assert_eq!(count_l1_sphere(dim, 0), 1);
        }
        assert_eq!(count_l1_sphere(2, 7), 28);
    }

    #[test]
    fn sphere_counts_match_enumeration_and_bound() {
        for dim in 1..=4usize {
            let n_max = if dim <= 2 { 20 } else if dim == 3 { 12 } else { 6 };
            for n in 0..=n_max {
                assert_eq!(count_l1_sphere(dim, n), brute_sphere(dim, n), "dim {dim} n {n}");
            }
            for n in 1..=20u64 {
                let bound = 2 * (2 * n + 1).pow(dim as u32);
                assert!(count_l1_sphere(dim, n) <= bound);
            }
        }
    }

    #[test]
    fn state_is_deterministic_and_box_free() {
        let f = PercolationField::new(3, 0.7, 42, 3).unwrap();
        let s = Site::new(vec![4, -7, 9]);
        assert_eq!(f.site_state(&s).unwrap(), f.site_state(&s).unwrap());
        let g = PercolationField::new(3, 0.7, 42, 3).unwrap();
        assert_eq!(f.site_state(&s).unwrap(), g.site_state(&s).unwrap());
        assert!(matches!(
            f.site_state(&Site::new(vec![1, 2])),
            Err(LatticeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PercolationField::new(1, 0.5, 0, 0).is_err());
        assert!(PercolationField::new(2, 0.0, 0, 0).is_err());
        assert!(PercolationField::new(2, 1.0, 0, 0).is_err());
        assert!(BoxRegion::new(vec![0, 3], vec![1, 2]).is_err());
    }

    #[test]
    fn box_index_roundtrip() {
        let b = BoxRegion::new(vec![-2, 0, -1], vec![1, 3, 2]).unwrap();
        for i in 0..b.volume() {
            let s = b.site_at(i);
            assert_eq!(b.index_of(&s.0), Some(i));
        }
        let sites: Vec<_> = b.sites().collect();
        let mut sorted = sites.clone();
        sorted.sort();
        assert_eq!(sites, sorted, "flat order is lexicographic");
    }

    #[test]
    fn explicit_config_json() {
        let b = BoxRegion::new(vec![-1, 0], vec![1, 1]).unwrap();
        let c = ExplicitConfig::from_bits(b, 0b101101).unwrap();
        let v = c.to_json();
        assert_eq!(v["states"], serde_json::json!([1, 0, 1, 1, 0, 1]));
        assert_eq!(ExplicitConfig::from_json(&v).unwrap(), c);
        assert!(ExplicitConfig::from_json(&serde_json::json!({"box": {"lo": [0,0], "hi": [1,1]}, "states": [1]})).is_err());
    }

    #[test]
    fn isometries_of_the_plane() {
        let all = HorizontalIsometry::all(2);
        assert_eq!(all.len(), 8);
        for t in &all {
            let x = vec![3, -5];
            assert_eq!(t.inverse().apply_column(&t.apply_column(&x)), x);
        }
    }

    #[test]
    fn transformed_field_moves_states() {
        let f = PatternField::all_open(3).with_closed(&[1, 0, 2]);
        let rot = HorizontalIsometry::new(vec![1, 0], vec![-1, 1]);
        let g = Transformed::new(&f, &rot);
        let moved = rot.apply_site(&[1, 0, 2]);
        assert!(!g.is_open(&moved));
        assert!(g.is_open(&[1, 0, 2]) || moved == vec![1, 0, 2]);
    }

    #[test]
    fn open_fraction_within_binomial_interval() {
        let p = 0.98;
        let f = PercolationField::new(3, p, 7, 0).unwrap();
        let n = 1_000_000u64;
        let region = BoxRegion::new(vec![0, 0, 0], vec![99, 99, 99]).unwrap();
        let open = ExplicitConfig::sample(&f, region).count_open() as f64;
        let (lo, hi) = crate::stats::wilson_interval(open as u64, n, 0.999);
        assert!(lo <= p && p <= hi, "open fraction {} outside [{lo}, {hi}]", open / n as f64);
    }

    #[test]
    fn replicates_are_independent() {
        let p = 0.9;
        let a = PercolationField::new(2, p, 11, 0).unwrap();
        let b = PercolationField::new(2, p, 11, 1).unwrap();
        let region = BoxRegion::new(vec![0, 0], vec![499, 399]).unwrap();
        let n = region.volume() as u64;
        let disagree = region.sites().filter(|s| a.is_open(&s.0) != b.is_open(&s.0)).count() as u64;
        let (lo, hi) = crate::stats::wilson_interval(disagree, n, 0.999);
        let expected = 2.0 * p * (1.0 - p);
        assert!(lo <= expected && expected <= hi, "disagreement {disagree}/{n}");
    }

    #[test]
    fn monotone_coupling() {
        let lo = PercolationField::new(2, 0.6, 5, 2).unwrap();
        let hi = lo.with_p(0.8).unwrap();
        let region = BoxRegion::new(vec![-30, -30], vec![30, 30]).unwrap();
        for s in region.sites() {
            if lo.is_open(&s.0) {
                assert!(hi.is_open(&s.0));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn state_does_not_depend_on_query_order(seed in proptest::prelude::any::<u64>(), xs in proptest::collection::vec((-50i64..50, -50i64..50), 1..40)) {
            let f = PercolationField::new(2, 0.5, seed, 0).unwrap();
            let forward: Vec<_> = xs.iter().map(|&(a, b)| f.is_open(&[a, b])).collect();
            let backward: Vec<_> = xs.iter().rev().map(|&(a, b)| f.is_open(&[a, b])).collect();
            let mut b2 = backward;
            b2.reverse();
            proptest::prop_assert_eq!(forward, b2);
        }
    }
}

//! Closed-form constants and tail bounds.
//!
//! With `a = 2d` (or `2d - 1` for the step set without `-e_d`) and
//! `q = 1 - p`, the expected number of admissible Λ-paths from the origin
//! ending at height `>= h` and radial distance `>= r` is at most
//! `A (aq)^h (a^2 q)^r` with `A = 1 / ((1 - aq)(1 - a^2 q))`, provided
//! `a^2 q < 1` and `r >= max(0, -h)`. The surface and cover tails are the
//! special cases `(h, r) = (k, 0)` and `(0, k)`.
//!
//! The branching random walk section evaluates the Laplace functional
//! `alpha(mu) = q * sum_n tau_n e^{-mu n} * p e^mu / (1 - q e^mu)`, where
//! `tau_n` counts the points of `Z^{d-1}` at 1-norm `n`.

use serde::Serialize;
use thiserror::Error;

use crate::reach::StepSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    Probability(f64),
    #[error("hypothesis a^2 q < 1 violated: a^2 q = {a2q}")]
    Hypothesis { a2q: f64 },
    #[error("radial bound r = {r} is below the negative part of h = {h}")]
    RadialTooSmall { h: i64, r: u64 },
    #[error("mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("series diverges for mu = {0} (below the evaluation threshold)")]
    Diverges(f64),
    #[error("q e^mu = {0} >= 1: geometric tower law has no finite moment")]
    Infeasible(f64),
    #[error("no bracket for p1 in dimension {0}")]
    NoBracket(usize),
}

/// Smallest `mu` at which the Laplace series is still evaluated.
pub const MU_MIN: f64 = 1e-6;
/// Absolute accuracy of the summed `alpha` series.
pub const SERIES_TOL: f64 = 1e-13;

fn check(d: usize, p: f64) -> Result<(), BoundError> {
    if d < 2 {
        return Err(BoundError::Dimension(d));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(BoundError::Probability(p));
    }
    Ok(())
}

/// `2d`, or `2d - 1` without the straight-down step.
pub fn step_constant(d: usize, mode: StepSet) -> u32 {
    mode.size(d) as u32
}

/// `nu = 2d(1 - p)`.
pub fn nu(d: usize, p: f64) -> f64 {
    2.0 * d as f64 * (1.0 - p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub a: u32,
    pub nu: f64,
    pub aq: f64,
    pub a2q: f64,
    pub mode: StepSet,
}

impl BoundParams {
    pub fn new(d: usize, p: f64, mode: StepSet) -> Result<Self, BoundError> {
        check(d, p)?;
        let q = 1.0 - p;
        let a = step_constant(d, mode);
        let af = a as f64;
        Ok(BoundParams { d, p, q, a, nu: nu(d, p), aq: af * q, a2q: af * af * q, mode })
    }

    pub fn in_regime(&self) -> bool {
        self.a2q < 1.0
    }

    /// `A = 1 / ((1 - aq)(1 - a^2 q))`.
    pub fn tail_constant(&self) -> Result<f64, BoundError> {
        if !self.in_regime() {
            return Err(BoundError::Hypothesis { a2q: self.a2q });
        }
        Ok(1.0 / ((1.0 - self.aq) * (1.0 - self.a2q)))
    }
}

pub fn tail_constant(d: usize, p: f64, mode: StepSet) -> Result<f64, BoundError> {
    BoundParams::new(d, p, mode)?.tail_constant()
}

/// `A (aq)^h (a^2 q)^r`.
pub fn sum2_bound(d: usize, p: f64, h: i64, r: u64, mode: StepSet) -> Result<f64, BoundError> {
    let b = BoundParams::new(d, p, mode)?;
    let a_const = b.tail_constant()?;
    if (r as i64) < (-h).max(0) {
        return Err(BoundError::RadialTooSmall { h, r });
    }
    Ok(a_const * b.aq.powi(h as i32) * b.a2q.powi(r as i32))
}

/// Bound on `P(F(0) > k)`.
pub fn f_tail_bound(d: usize, p: f64, k: u64, mode: StepSet) -> Result<f64, BoundError> {
    sum2_bound(d, p, k as i64, 0, mode)
}

/// Bound on `P(rad(H_0) >= k)`.
pub fn radh_tail_bound(d: usize, p: f64, k: u64, mode: StepSet) -> Result<f64, BoundError> {
    sum2_bound(d, p, 0, k, mode)
}

/// Bound on `P(rho_0 >= n)` obtained from `rho <= rad(H) + 1`.
pub fn rho_tail_bound(d: usize, p: f64, n: u64, mode: StepSet) -> Result<f64, BoundError> {
    radh_tail_bound(d, p, n.saturating_sub(1), mode)
}

/// `E e^{mu G}` for `G` geometric on `{1, 2, ...}` with success probability `p`.
pub fn geometric_mgf(p: f64, mu: f64) -> Result<f64, BoundError> {
    let q = 1.0 - p;
    let t = q * mu.exp();
    if t >= 1.0 {
        return Err(BoundError::Infeasible(t));
    }
    Ok(p * mu.exp() / (1.0 - t))
}

/// `tau_n` as a float, valid far beyond the range of `u64`.
fn sphere_count_f64(k: usize, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut c_kj = 1.0; // C(k, j)
    let mut c_nj = 1.0; // C(n-1, j-1)
    for j in 1..=k.min(n as usize) {
        c_kj = c_kj * (k - j + 1) as f64 / j as f64;
        if j > 1 {
            c_nj = c_nj * (n as f64 - j as f64 + 1.0) / (j - 1) as f64;
        }
        total += 2f64.powi(j as i32) * c_kj * c_nj;
    }
    total
}

/// `sum_{n >= 1} tau_n e^{-mu n}` by direct summation, stopping once the
/// ratio bound `tau_{n+1}/tau_n <= n/(n-k+1)` certifies the remainder is
/// below `tol`.
pub fn sphere_series(k: usize, mu: f64, tol: f64) -> Result<f64, BoundError> {
    if mu <= 0.0 {
        return Err(BoundError::NonPositiveMu(mu));
    }
    if mu < MU_MIN {
        return Err(BoundError::Diverges(mu));
    }
    let r = (-mu).exp();
    let mut sum = 0.0;
    let mut n: u64 = 1;
    loop {
        let term = sphere_count_f64(k, n) * r.powf(n as f64);
        sum += term;
        if n as usize >= k {
            let ratio = r * n as f64 / (n as f64 - k as f64 + 1.0);
            if ratio < 1.0 && term * ratio / (1.0 - ratio) < tol {
                return Ok(sum);
            }
        }
        n += 1;
        if n > 500_000_000 {
            return Err(BoundError::Diverges(mu));
        }
    }
}

/// Generating function route: `((1 + r)/(1 - r))^k - 1` with `r = e^{-mu}`.
pub fn sphere_series_closed_form(k: usize, mu: f64) -> Result<f64, BoundError> {
    if mu <= 0.0 {
        return Err(BoundError::NonPositiveMu(mu));
    }
    let r = (-mu).exp();
    Ok(((1.0 + r) / (1.0 - r)).powi(k as i32) - 1.0)
}

fn alpha_prefactor(d: usize, p: f64, mu: f64) -> Result<f64, BoundError> {
    check(d, p)?;
    if mu <= 0.0 {
        return Err(BoundError::NonPositiveMu(mu));
    }
    Ok((1.0 - p) * geometric_mgf(p, mu)?)
}

/// `alpha(mu)` by direct series summation.
pub fn brw_alpha(d: usize, p: f64, mu: f64) -> Result<f64, BoundError> {
    let pre = alpha_prefactor(d, p, mu)?;
    Ok(pre * sphere_series(d - 1, mu, SERIES_TOL / pre.max(1.0))?)
}

/// `alpha(mu)` through the generating function of the 1-norm spheres.
pub fn brw_alpha_closed_form(d: usize, p: f64, mu: f64) -> Result<f64, BoundError> {
    let pre = alpha_prefactor(d, p, mu)?;
    Ok(pre * sphere_series_closed_form(d - 1, mu)?)
}

/// `alpha` restricted to depths `1..=depth_cap`, and the omitted remainder.
pub fn brw_alpha_truncated(d: usize, p: f64, mu: f64, depth_cap: u64) -> Result<(f64, f64), BoundError> {
    let pre = alpha_prefactor(d, p, mu)?;
    let r = (-mu).exp();
    let kept: f64 = (1..=depth_cap).map(|n| sphere_count_f64(d - 1, n) * r.powf(n as f64)).sum();
    let full = brw_alpha(d, p, mu)?;
    let kept = pre * kept;
    Ok((kept, (full - kept).max(0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrwParams {
    pub d: usize,
    pub p: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl BrwParams {
    pub fn new(d: usize, p: f64, mu: f64) -> Result<Self, BoundError> {
        Ok(BrwParams { d, p, mu, alpha: brw_alpha(d, p, mu)? })
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

/// Search interval for `mu`: strictly inside `(0, -ln q)`.
pub fn mu_interval(p: f64) -> (f64, f64) {
    let top = -(1.0 - p).ln();
    ((top * 1e-4).max(MU_MIN), top * (1.0 - 1e-9))
}

/// Minimizes `alpha(mu)` by golden-section search; `alpha` is log-convex in `mu`.
pub fn optimize_mu(d: usize, p: f64) -> Result<(f64, f64), BoundError> {
    check(d, p)?;
    let (mut lo, mut hi) = mu_interval(p);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = brw_alpha(d, p, x1)?;
    let mut f2 = brw_alpha(d, p, x2)?;
    while hi - lo > 1e-9 * 0.5 * (lo + hi) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = brw_alpha(d, p, x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = brw_alpha(d, p, x2)?;
        }
    }
    let mu = 0.5 * (lo + hi);
    Ok((mu, brw_alpha(d, p, mu)?))
}

pub fn alpha_star(d: usize, p: f64) -> Result<f64, BoundError> {
    Ok(optimize_mu(d, p)?.1)
}

/// One bisection step `(lo, hi)`, with `alpha*(lo) >= 1 > alpha*(hi)`.
pub type Bracket = (f64, f64);

/// Bisection for `alpha*(p) = 1`, returning the midpoint and every bracket visited.
pub fn p1_with_trace(d: usize, tol: f64) -> Result<(f64, Vec<Bracket>), BoundError> {
    if d < 2 {
        return Err(BoundError::Dimension(d));
    }
    let mut lo = 0.5;
    while alpha_star(d, lo)? < 1.0 {
        lo /= 2.0;
        if lo < 1e-6 {
            return Err(BoundError::NoBracket(d));
        }
    }
    let mut hi = 1.0 - 1e-12;
    if alpha_star(d, hi)? >= 1.0 {
        return Err(BoundError::NoBracket(d));
    }
    let mut trace = vec![(lo, hi)];
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if alpha_star(d, mid)? >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        trace.push((lo, hi));
    }
    Ok((0.5 * (lo + hi), trace))
}

/// Threshold `p1(d)` above which `alpha* < 1`, to width `tol`.
pub fn p1(d: usize, tol: f64) -> Result<f64, BoundError> {
    Ok(p1_with_trace(d, tol)?.0)
}

/// Every constant for `(d, p, mode)` as a JSON object.
pub fn report(d: usize, p: f64, mode: StepSet, k_max: u64) -> Result<serde_json::Value, BoundError> {
    let params = BoundParams::new(d, p, mode)?;
    let a = params.a as f64;
    let tails = |f: &dyn Fn(u64) -> Result<f64, BoundError>| -> serde_json::Value {
        if params.in_regime() {
            (0..=k_max).map(|k| f(k).ok()).collect::<Vec<_>>().into()
        } else {
            serde_json::Value::Null
        }
    };
    let (mu_star, alpha_min) = optimize_mu(d, p)?;
    let ln2 = std::f64::consts::LN_2;
    Ok(serde_json::json!({
        "d": d,
        "p": p,
        "q": params.q,
        "mode": mode,
        "a": params.a,
        "nu": params.nu,
        "nu_below_one": params.nu < 1.0,
        "aq": params.aq,
        "a2q": params.a2q,
        "counting_hypothesis_holds": params.in_regime(),
        "tail_constant_A": params.tail_constant().ok(),
        "proven_threshold": 1.0 - 1.0 / (a * a),
        "f_tail_bound": tails(&|k| f_tail_bound(d, p, k, mode)),
        "radh_tail_bound": tails(&|k| radh_tail_bound(d, p, k, mode)),
        "rho_tail_bound": tails(&|k| rho_tail_bound(d, p, k, mode)),
        "brw": {
            "alpha_at_ln2": brw_alpha(d, p, ln2).ok(),
            "mu_star": mu_star,
            "alpha_star": alpha_min,
            "p1": p1(d, 1e-6).ok(),
        },
        "metadata": {
            "tail_constant": "A = 1/((1-aq)(1-a^2 q)), obtained by summing the path-count bound over heights and radii",
            "k_max": k_max,
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::count_l1_sphere;
    use std::f64::consts::LN_2;

    const FULL: StepSet = StepSet::Full;

    #[test]
    fn nu_values() {
        assert!((nu(2, 0.99) - 0.04).abs() < 1e-15);
        assert!((nu(3, 35.0 / 36.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!(nu(2, 0.7) >= 1.0);
        assert!(nu(2, 0.8) < 1.0);
    }

    #[test]
    fn sum2_values() {
        let b00 = sum2_bound(2, 0.99, 0, 0, FULL).unwrap();
        assert!((b00 - 1.0 / (0.96 * 0.84)).abs() < 1e-12);
        assert!((b00 - 1.240079).abs() < 1e-6);
        assert!((sum2_bound(2, 0.99, 1, 0, FULL).unwrap() - 0.0496032).abs() < 1e-7);
        assert!(matches!(sum2_bound(2, 0.9, 0, 0, FULL), Err(BoundError::Hypothesis { .. })));
        assert!(matches!(sum2_bound(2, 0.99, -2, 1, FULL), Err(BoundError::RadialTooSmall { .. })));
    }

    #[test]
    fn tail_values() {
        let a = 1.0 / (0.96 * 0.84);
        assert_eq!(f_tail_bound(2, 0.99, 0, FULL).unwrap(), radh_tail_bound(2, 0.99, 0, FULL).unwrap());
        assert!((f_tail_bound(2, 0.99, 3, FULL).unwrap() - 7.9365e-5).abs() < 1e-9);
        assert!((radh_tail_bound(2, 0.99, 5, FULL).unwrap() - 1.30032e-4).abs() < 1e-9);
        assert!((rho_tail_bound(2, 0.99, 1, FULL).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn factorization_and_monotonicity() {
        for &(d, p) in &[(2, 0.99), (3, 0.99), (2, 0.95), (4, 0.999)] {
            let base = sum2_bound(d, p, 0, 0, FULL).unwrap();
            let b = BoundParams::new(d, p, FULL).unwrap();
            for h in -3i64..=4 {
                for r in (-h).max(0) as u64..=4 {
                    let v = sum2_bound(d, p, h, r, FULL).unwrap();
                    let w = base * b.aq.powi(h as i32) * b.a2q.powi(r as i32);
                    assert!((v - w).abs() <= 1e-14 * w.abs().max(1e-300));
                    let v2 = sum2_bound(d, p + (1.0 - p) / 2.0, h, r, FULL).unwrap();
                    assert!(v2 < v);
                }
            }
        }
    }

    #[test]
    fn restricted_constant() {
        let b = BoundParams::new(3, 0.99, StepSet::NoStraightDown).unwrap();
        assert_eq!(b.a, 5);
        assert!((b.a2q - 0.25).abs() < 1e-12);
    }

    #[test]
    fn alpha_at_ln2_in_the_plane() {
        let a = brw_alpha(2, 0.99, LN_2).unwrap();
        let closed = 0.01 * 2.0 * (1.98 / 0.98);
        assert!((a - closed).abs() < 1e-12);
        assert!((a - 0.0404082).abs() < 1e-7);
        assert!((brw_alpha_closed_form(2, 0.99, LN_2).unwrap() - a).abs() < 1e-10);
    }

    #[test]
    fn series_matches_closed_form() {
        // tau_n = 2 for d = 2 and 4n for d = 3
        for n in 1..50 {
            assert_eq!(count_l1_sphere(1, n), 2);
            assert_eq!(count_l1_sphere(2, n), 4 * n);
            for k in 1..6 {
                assert_eq!(sphere_count_f64(k, n), count_l1_sphere(k, n) as f64);
            }
        }
        for d in 2..=5 {
            for &mu in &[0.05, 0.3, LN_2, 1.5, 3.0] {
                let s = brw_alpha(d, 0.99, mu).unwrap();
                let c = brw_alpha_closed_form(d, 0.99, mu).unwrap();
                assert!((s - c).abs() <= 1e-10 * c.max(1.0), "d {d} mu {mu}: {s} vs {c}");
            }
        }
    }

    #[test]
    fn alpha_errors() {
        assert!(matches!(brw_alpha(2, 0.99, 0.0), Err(BoundError::NonPositiveMu(_))));
        assert!(matches!(brw_alpha(2, 0.99, 1e-9), Err(BoundError::Diverges(_))));
        assert!(matches!(brw_alpha(2, 0.5, 1.0), Err(BoundError::Infeasible(_))));
        assert!(brw_alpha(2, 0.99, 1e-3).unwrap() > brw_alpha(2, 0.99, 1e-2).unwrap());
    }

    #[test]
    fn optimizer_beats_grid() {
        for &(d, p) in &[(2, 0.99), (3, 0.99), (2, 0.95), (4, 0.999)] {
            let (mu, a) = optimize_mu(d, p).unwrap();
            let (lo, hi) = mu_interval(p);
            let grid_min = (0..1000)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / 1000.0)
                .map(|m| brw_alpha(d, p, m).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(a <= grid_min + 1e-8, "d {d} p {p}: {a} vs {grid_min} at mu {mu}");
        }
        assert!(optimize_mu(2, 0.99).unwrap().1 < 0.0404082);
    }

    #[test]
    fn alpha_star_decreasing_in_p() {
        let grid = [0.95, 0.96, 0.97, 0.98, 0.99, 0.995, 0.999];
        for d in 2..=4 {
            let vals: Vec<f64> = grid.iter().map(|&p| alpha_star(d, p).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]), "d {d}: {vals:?}");
        }
        assert!(alpha_star(2, 0.999_999).unwrap() < 1e-4);
    }

    #[test]
    fn alpha_pointwise_decreasing_in_p() {
        for &mu in &[0.2, LN_2, 1.2] {
            let mut prev = f64::INFINITY;
            for p in [0.8, 0.9, 0.95, 0.99] {
                let a = brw_alpha(3, p, mu).unwrap();
                assert!(a <= prev);
                prev = a;
            }
        }
    }

    #[test]
    fn p1_postconditions() {
        for d in 2..=4 {
            let tol = 1e-6;
            let (p, trace) = p1_with_trace(d, tol).unwrap();
            assert!(alpha_star(d, p + tol).unwrap() < 1.0);
            assert!(alpha_star(d, p - tol).unwrap() >= 1.0);
            for (lo, hi) in trace {
                assert!(alpha_star(d, lo).unwrap() >= 1.0 && alpha_star(d, hi).unwrap() < 1.0);
            }
        }
    }

    #[test]
    fn truncated_alpha_remainder() {
        let (kept, rem) = brw_alpha_truncated(2, 0.99, LN_2, 40).unwrap();
        assert!(rem < 1e-12);
        assert!((kept + rem - brw_alpha(2, 0.99, LN_2).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn report_has_constants() {
        let r = report(2, 0.99, FULL, 5).unwrap();
        assert_eq!(r["a"], 4);
        assert!(r["counting_hypothesis_holds"].as_bool().unwrap());
        let r = report(2, 0.9, FULL, 5).unwrap();
        assert!(r["f_tail_bound"].is_null());
    }
}

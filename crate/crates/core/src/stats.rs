//! Binomial confidence intervals and small summary helpers.

use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided confidence level used for every reported interval.
pub const CONFIDENCE: f64 = 0.99;

/// Standard normal quantile for a two-sided interval at `confidence`.
pub fn z_two_sided(confidence: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

/// Wilson score interval for `hits` successes out of `trials`.
///
/// With no trials the interval is the whole of `[0, 1]`.
pub fn wilson_interval(hits: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = z_two_sided(confidence);
    let n = trials as f64;
    let phat = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = phat + z2 / (2.0 * n);
    let spread = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = ((centre - spread) / denom).max(0.0);
    let hi = ((centre + spread) / denom).min(1.0);
    (if hits == 0 { 0.0 } else { lo }, if hits == trials { 1.0 } else { hi })
}

/// Mean and standard error of the mean, summed in slice order.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_values() {
        assert!((z_two_sided(0.95) - 1.959964).abs() < 1e-5);
        assert!((z_two_sided(0.99) - 2.575829).abs() < 1e-5);
    }

    #[test]
    fn wilson_zero_hits() {
        let (lo, hi) = wilson_interval(0, 100_000, 0.99);
        assert_eq!(lo, 0.0);
        let z2 = z_two_sided(0.99).powi(2);
        assert!((hi - z2 / (100_000.0 + z2)).abs() < 1e-12);
    }

    #[test]
    fn wilson_contains_phat() {
        for &(k, n) in &[(1u64, 10u64), (50, 100), (999, 1000), (3, 100_000)] {
            let (lo, hi) = wilson_interval(k, n, 0.99);
            let ph = k as f64 / n as f64;
            assert!(lo <= ph && ph <= hi);
        }
        assert_eq!(wilson_interval(5, 5, 0.99).1, 1.0);
        assert_eq!(wilson_interval(0, 0, 0.99), (0.0, 1.0));
    }

    #[test]
    fn se_of_constant_is_zero() {
        let (m, se) = mean_and_se(&[2.0; 10]);
        assert_eq!((m, se), (2.0, 0.0));
    }
}

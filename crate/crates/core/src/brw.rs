//! The dominating branching random walk.
//!
//! A particle at location `z` has, for every depth `n >= 1`, a
//! `Binomial(tau_n, q)` number of children, each placed at `z - n + G` with
//! `G` geometric on `{1, 2, ...}` (success probability `p`). The weighted
//! population `S_n = sum exp(mu z)` has mean `alpha^n S_0`.
//!
//! Simulation keeps depths `1..=depth_cap` only and may prune children whose
//! weight falls below `weight_floor`. Both omissions are accounted for: the
//! expected weight lost to the depth cap and the exact weight of pruned
//! children are recorded per generation.
//!
//! Every particle draws from its own stream keyed by its genealogy, so
//! pruning a subtree never perturbs the randomness of the rest of the run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{self, BoundError, BrwParams};
use crate::lattice::{count_l1_sphere, mix64, stream_seed};
use crate::stats::{mean_and_se, wilson_interval, CONFIDENCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrwError {
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrwConfig {
    pub params: BrwParams,
    pub depth_cap: u64,
    pub weight_floor: f64,
    /// Population size at which a run is stopped and flagged.
    pub particle_cap: usize,
}

impl BrwConfig {
    pub fn new(d: usize, p: f64, mu: f64) -> Result<Self, BrwError> {
        Ok(BrwConfig {
            params: BrwParams::new(d, p, mu)?,
            depth_cap: 40,
            weight_floor: 0.0,
            particle_cap: 1_000_000,
        })
    }

    pub fn with_depth_cap(mut self, cap: u64) -> Result<Self, BrwError> {
        if cap == 0 {
            return Err(BrwError::Config("depth cap must be at least 1".into()));
        }
        self.depth_cap = cap;
        Ok(self)
    }

    pub fn with_weight_floor(mut self, floor: f64) -> Result<Self, BrwError> {
        if !(floor >= 0.0) {
            return Err(BrwError::Config(format!("weight floor must be non-negative, got {floor}")));
        }
        self.weight_floor = floor;
        Ok(self)
    }

    pub fn with_particle_cap(mut self, cap: usize) -> Self {
        self.particle_cap = cap;
        self
    }

    pub fn mu(&self) -> f64 {
        self.params.mu
    }

    /// `(alpha restricted to the depth cap, omitted remainder)`.
    pub fn truncated_alpha(&self) -> Result<(f64, f64), BrwError> {
        let p = &self.params;
        Ok(bounds::brw_alpha_truncated(p.d, p.p, p.mu, self.depth_cap)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub location: i64,
    key: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Offspring {
    pub children: Vec<Particle>,
    /// Exact total weight `exp(mu * location)` of pruned children.
    pub discarded_weight: f64,
}

impl Offspring {
    pub fn locations(&self) -> Vec<i64> {
        self.children.iter().map(|c| c.location).collect()
    }
}

fn particle_rng(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Draws the children of one particle.
pub fn sample_offspring(parent: &Particle, cfg: &BrwConfig) -> Offspring {
    let mut rng = particle_rng(parent.key);
    sample_offspring_with(parent, cfg, &mut rng)
}

fn sample_offspring_with<R: Rng>(parent: &Particle, cfg: &BrwConfig, rng: &mut R) -> Offspring {
    let BrwParams { d, p, mu, .. } = cfg.params;
    let q = 1.0 - p;
    let tower = Geometric::new(p).expect("p in (0,1)");
    let mut out = Offspring::default();
    let mut ordinal = 0u64;
    for n in 1..=cfg.depth_cap {
        let tau = count_l1_sphere(d - 1, n);
        let k = Binomial::new(tau, q).expect("valid binomial").sample(rng);
        for _ in 0..k {
            let g = 1 + tower.sample(rng) as i64;
            let location = parent.location - n as i64 + g;
            ordinal += 1;
            let child = Particle { location, key: mix64(parent.key ^ ordinal.wrapping_mul(0xd6e8_feb8_6659_fd93)) };
            let w = (mu * location as f64).exp();
            if w < cfg.weight_floor {
                out.discarded_weight += w;
            } else {
                out.children.push(child);
            }
        }
    }
    out
}

/// One realization of the walk, optionally shifted by the height `C` of the
/// lowest open site above the origin.
#[derive(Clone, Debug)]
pub struct BrwRun {
    pub config: BrwConfig,
    /// Shift `C`, drawn from the run's stream whether or not it is applied.
    pub shift: u64,
    pub shifted: bool,
    current: Vec<Particle>,
    /// `S_n` with unshifted locations, `n = 0..=N`.
    pub s_base: Vec<f64>,
    /// Some particle of generation `n` lies above zero (in the run's frame).
    pub survival: Vec<bool>,
    /// Weight of children pruned while forming generation `n` (index 0 is 0).
    pub discarded: Vec<f64>,
    /// Expected weight of children beyond the depth cap, per generation.
    pub cap_remainder: Vec<f64>,
    /// The particle cap stopped the run.
    pub truncated: bool,
}

impl BrwRun {
    pub fn start(config: &BrwConfig, seed: u64, run_index: u64, shifted: bool) -> Self {
        let key = stream_seed(seed, run_index);
        let mut rng = particle_rng(key);
        let tower = Geometric::new(config.params.p).expect("p in (0,1)");
        let shift = 1 + tower.sample(&mut rng);
        let root = Particle { location: 0, key: mix64(key ^ 0x243f_6a88_85a3_08d3) };
        let mut run = BrwRun {
            config: config.clone(),
            shift,
            shifted,
            current: vec![root],
            s_base: vec![1.0],
            survival: Vec::new(),
            discarded: vec![0.0],
            cap_remainder: vec![0.0],
            truncated: false,
        };
        let alive = run.frame_offset() > 0;
        run.survival.push(alive);
        run
    }

    fn frame_offset(&self) -> i64 {
        if self.shifted {
            self.shift as i64
        } else {
            0
        }
    }

    pub fn generation(&self) -> usize {
        self.s_base.len() - 1
    }

    /// Current particle locations in the run's frame.
    pub fn locations(&self) -> Vec<i64> {
        let off = self.frame_offset();
        self.current.iter().map(|p| p.location + off).collect()
    }

    /// `S_n` in the run's frame: `S_0 = e^{mu C}` when shifted.
    pub fn s_sequence(&self) -> Vec<f64> {
        let factor = (self.config.mu() * self.frame_offset() as f64).exp();
        self.s_base.iter().map(|s| s * factor).collect()
    }

    pub fn extinct(&self) -> bool {
        self.current.is_empty()
    }

    /// Advances `generations` steps.
    pub fn evolve(&mut self, generations: usize) -> Result<(), BrwError> {
        if generations == 0 {
            return Err(BrwError::Config("evolve needs at least one generation".into()));
        }
        let (_, remainder) = self.config.truncated_alpha()?;
        let mu = self.config.mu();
        let off = self.frame_offset();
        for _ in 0..generations {
            let mut next = Vec::new();
            let mut discarded = 0.0;
            let mut omitted = 0.0;
            if !self.truncated {
                for parent in &self.current {
                    let o = sample_offspring(parent, &self.config);
                    discarded += o.discarded_weight;
                    omitted += remainder * (mu * parent.location as f64).exp();
                    next.extend(o.children);
                    if next.len() > self.config.particle_cap {
                        self.truncated = true;
                        break;
                    }
                }
            }
            if self.truncated {
                next.clear();
            }
            self.s_base.push(next.iter().map(|p| (mu * p.location as f64).exp()).sum());
            self.survival.push(next.iter().any(|p| p.location + off > 0));
            self.discarded.push(discarded);
            self.cap_remainder.push(omitted);
            self.current = next;
        }
        Ok(())
    }
}

/// Exact moments of `S_n` (with `S_0 = 1`) under the depth-truncated law and
/// no pruning: `(E S_n, E S_n^2)` for `n = 0..=generations`.
pub fn exact_moments(cfg: &BrwConfig, generations: usize) -> Result<Vec<(f64, f64)>, BrwError> {
    let BrwParams { d, p, mu, .. } = cfg.params;
    let q = 1.0 - p;
    let m1 = bounds::geometric_mgf(p, mu)?;
    let m2 = bounds::geometric_mgf(p, 2.0 * mu)?;
    let mut alpha = 0.0;
    let mut beta = 0.0; // E sum_i w_i^2
    let mut var_w = 0.0;
    for n in 1..=cfg.depth_cap {
        let tau = count_l1_sphere(d - 1, n) as f64;
        let e1 = (-mu * n as f64).exp();
        alpha += tau * q * e1 * m1;
        beta += tau * q * e1 * e1 * m2;
        // compound binomial: E K Var Y + Var K (E Y)^2
        var_w += tau * q * e1 * e1 * (m2 - q * m1 * m1);
    }
    let second_w = var_w + alpha * alpha;
    let mut out = vec![(1.0, 1.0)];
    for n in 1..=generations {
        let s_prev = out[n - 1].1;
        let mean = alpha.powi(n as i32);
        let second = beta * s_prev + (second_w - beta) * alpha.powi(2 * (n as i32 - 1));
        out.push((mean, second));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub n: usize,
    pub mean_s: f64,
    pub se_sample: f64,
    /// `sqrt(Var S_n / R)` from the exact second moment.
    pub se_exact: f64,
    pub alpha_pow_n: f64,
    pub truncated_alpha_pow_n: f64,
    /// `alpha^n - alpha_cap^n`: expected weight lost to the depth cap.
    pub truncation_mass: f64,
    /// Expected contribution of pruned subtrees to `S_n`, averaged over runs.
    pub pruning_allowance: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub n: usize,
    pub trials: u64,
    pub hits: u64,
    pub survival_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `alpha^n E e^{mu C}` plus the pruning and depth-cap allowance.
    pub bound: f64,
    pub allowance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BrwSummary {
    pub config: BrwConfig,
    pub runs: u64,
    pub truncated_runs: u64,
    pub martingale: Vec<MartingaleRow>,
    pub survival: Vec<SurvivalRow>,
}

impl BrwSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,mean_S,se_S,alpha_pow_n,survival_hat,survival_ci_hi,bound\n");
        for (m, v) in self.martingale.iter().zip(&self.survival) {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                m.n, m.mean_s, m.se_exact, m.alpha_pow_n, v.survival_hat, v.ci_hi, v.bound
            ));
        }
        s
    }
}

/// Runs `runs` shifted walks for `generations` steps and summarizes the
/// martingale and the survival tail.
pub fn simulate(cfg: &BrwConfig, seed: u64, runs: u64, generations: usize) -> Result<BrwSummary, BrwError> {
    if runs == 0 {
        return Err(BrwError::Config("need at least one run".into()));
    }
    let all: Vec<BrwRun> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut r = BrwRun::start(cfg, seed, i, true);
            r.evolve(generations).map(|_| r)
        })
        .collect::<Result<_, _>>()?;
    let alpha = cfg.params.alpha;
    let (alpha_c, _) = cfg.truncated_alpha()?;
    let gamma = bounds::geometric_mgf(cfg.params.p, cfg.mu())?;
    let moments = exact_moments(cfg, generations)?;
    let mu = cfg.mu();

    let mut martingale = Vec::with_capacity(generations + 1);
    let mut survival = Vec::with_capacity(generations + 1);
    for n in 0..=generations {
        let s: Vec<f64> = all.iter().map(|r| r.s_base[n]).collect();
        let (mean_s, se_sample) = mean_and_se(&s);
        // subtree of weight w pruned at generation m contributes alpha_c^(n-m) w in mean
        let lost = |r: &BrwRun, v: &[f64], rate: f64| -> f64 {
            (1..=n).map(|m| v[m] * rate.powi((n - m) as i32)).sum::<f64>()
                * if r.shifted { (mu * r.shift as f64).exp() } else { 1.0 }
        };
        let pruning_allowance =
            all.iter().map(|r| (1..=n).map(|m| r.discarded[m] * alpha_c.powi((n - m) as i32)).sum::<f64>()).sum::<f64>()
                / runs as f64;
        let (m_exact, s_exact) = moments[n];
        let se_exact = ((s_exact - m_exact * m_exact).max(0.0) / runs as f64).sqrt();
        let alpha_pow_n = alpha.powi(n as i32);
        let truncated_alpha_pow_n = alpha_c.powi(n as i32);
        let truncation_mass = alpha_pow_n - truncated_alpha_pow_n;
        let within_3se = (mean_s - alpha_pow_n).abs() <= 3.0 * se_exact + truncation_mass + pruning_allowance;
        martingale.push(MartingaleRow {
            n,
            mean_s,
            se_sample,
            se_exact,
            alpha_pow_n,
            truncated_alpha_pow_n,
            truncation_mass,
            pruning_allowance,
            within_3se,
        });

        let hits = all.iter().filter(|r| r.survival[n]).count() as u64;
        let allowance = all
            .iter()
            .map(|r| lost(r, &r.discarded, alpha) + lost(r, &r.cap_remainder, alpha))
            .sum::<f64>()
            / runs as f64;
        let (ci_lo, ci_hi) = wilson_interval(hits, runs, CONFIDENCE);
        survival.push(SurvivalRow {
            n,
            trials: runs,
            hits,
            survival_hat: hits as f64 / runs as f64,
            ci_lo,
            ci_hi,
            bound: alpha_pow_n * gamma + allowance,
            allowance,
        });
    }
    Ok(BrwSummary {
        config: cfg.clone(),
        runs,
        truncated_runs: all.iter().filter(|r| r.truncated).count() as u64,
        martingale,
        survival,
    })
}

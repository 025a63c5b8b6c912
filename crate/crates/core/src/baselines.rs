//! Comparison policies driven by the same Gaussian posterior: uniform, Thompson,
//! top-two Thompson and density Thompson sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::allocation::EpochAllocation;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::model::Design;
use crate::objectives::argmax;
use crate::planner::qmc::normal_scenarios;
use crate::posterior::PosteriorState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Uniform,
    Ts,
    Ttts { beta: f64 },
    Dts { mc_draws: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    #[serde(default = "default_cap")]
    pub resample_cap: usize,
}

fn default_cap() -> usize {
    100
}

pub const DEFAULT_DTS_DRAWS: usize = 4096;

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineSpec {
            kind,
            resample_cap: default_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BaselineKind::Ttts { beta } if !(beta > 0.0 && beta <= 1.0) => Err(Error::param("beta", "must lie in (0, 1]")),
            BaselineKind::Dts { mc_draws } if mc_draws < 100 => Err(Error::param("mc_draws", "at least 100")),
            _ => Ok(()),
        }
    }
}

/// Every context gets `1/K` on each arm.
pub fn uniform_alloc(epoch: usize, num_arms: usize, num_contexts: usize) -> Result<EpochAllocation<f64>> {
    if num_arms == 0 {
        return Err(Error::param("num_arms", "at least one arm"));
    }
    let row = vec![1.0 / num_arms as f64; num_arms];
    EpochAllocation::new(epoch, vec![row; num_contexts.max(1)], false)
}

/// Draws `theta ~ N(beta, Sigma)` through a fixed square root of `Sigma`.
pub struct PosteriorSampler<'a> {
    beta: &'a [f64],
    root: SymMatrix<f64>,
    zero: bool,
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(state: &'a PosteriorState<f64>) -> Result<Self> {
        let root = psd_sqrt(&state.sigma)?;
        let zero = root.as_mat().max_abs() == 0.0;
        Ok(PosteriorSampler {
            beta: &state.beta,
            root,
            zero,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.beta.len();
        if self.zero {
            return self.beta.to_vec();
        }
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let lz = self.root.matvec(&z);
        self.beta.iter().zip(lz).map(|(b, v)| b + v).collect()
    }
}

/// Counter-based substream for unit `unit` of a batch.
fn unit_rng(seed: u64, unit: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit as u64);
    rng
}

fn best_arm(design: &Design<f64>, theta: &[f64], x: usize) -> usize {
    let f: Vec<f64> = (0..design.num_arms()).map(|a| design.mean_reward(theta, x, a)).collect();
    argmax(&f)
}

/// Thompson sampling: each unit plays the best arm under its own posterior draw.
pub fn ts_assign(state: &PosteriorState<f64>, design: &Design<f64>, contexts: &[usize], seed: u64) -> Result<Vec<usize>> {
    let sampler = PosteriorSampler::new(state)?;
    Ok(contexts
        .iter()
        .enumerate()
        .map(|(u, &x)| {
            let mut rng = unit_rng(seed, u);
            best_arm(design, &sampler.sample(&mut rng), x)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TttsAssignments {
    pub arms: Vec<usize>,
    /// Units where the resample cap was hit and the first draw was kept.
    pub fallbacks: usize,
}

/// Top-two Thompson sampling. The first draw's arm is kept with probability
/// `beta`; otherwise the posterior is resampled until a different arm wins.
pub fn ttts_assign(
    state: &PosteriorState<f64>,
    design: &Design<f64>,
    contexts: &[usize],
    beta: f64,
    resample_cap: usize,
    seed: u64,
) -> Result<TttsAssignments> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::param("beta", "must lie in (0, 1]"));
    }
    let sampler = PosteriorSampler::new(state)?;
    let mut fallbacks = 0;
    let arms = contexts
        .iter()
        .enumerate()
        .map(|(u, &x)| {
            let mut rng = unit_rng(seed, u);
            let first = best_arm(design, &sampler.sample(&mut rng), x);
            if rng.random::<f64>() < beta {
                return first;
            }
            for _ in 0..resample_cap {
                let other = best_arm(design, &sampler.sample(&mut rng), x);
                if other != first {
                    return other;
                }
            }
            fallbacks += 1;
            first
        })
        .collect();
    Ok(TttsAssignments { arms, fallbacks })
}

/// Empirical assignment frequencies per context, for logging.
pub fn empirical_allocation(epoch: usize, num_arms: usize, num_contexts: usize, contexts: &[usize], arms: &[usize]) -> Result<EpochAllocation<f64>> {
    let mut counts = vec![vec![0.0; num_arms]; num_contexts];
    for (&x, &a) in contexts.iter().zip(arms) {
        counts[x][a] += 1.0;
    }
    let rows = counts
        .into_iter()
        .map(|c| {
            let n: f64 = c.iter().sum();
            if n == 0.0 {
                vec![1.0 / num_arms as f64; num_arms]
            } else {
                c.into_iter().map(|v| v / n).collect()
            }
        })
        .collect();
    EpochAllocation::new(epoch, rows, false)
}

/// Monte Carlo estimate of `E[(1/sigma_a) phi((theta*_a - mu_a) / sigma_a)]`,
/// where `theta*_a` is the best competitor in a joint posterior draw.
pub fn dts_indices(mu: &[f64], sigma: &[f64], mc_draws: usize, seed: u64) -> Result<Vec<f64>> {
    let k = mu.len();
    if sigma.len() != k {
        return Err(Error::DimensionMismatch {
            what: "posterior scales",
            expected: k,
            found: sigma.len(),
        });
    }
    if let Some(a) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::DegeneratePosterior(format!("arm {a} has scale {}", sigma[a])));
    }
    if mc_draws < 100 {
        return Err(Error::param("mc_draws", "at least 100"));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let normal = Normal::standard();
    let z: Vec<Vec<f64>> = normal_scenarios(mc_draws, k, seed, true)?;
    let mut acc = vec![0.0; k];
    let mut theta = vec![0.0; k];
    for zj in &z {
        for a in 0..k {
            theta[a] = mu[a] + sigma[a] * zj[a];
        }
        // best and runner-up of the joint draw
        let (mut i1, mut i2) = if theta[0] >= theta[1] { (0, 1) } else { (1, 0) };
        for (a, &t) in theta.iter().enumerate().skip(2) {
            if t > theta[i1] {
                i2 = i1;
                i1 = a;
            } else if t > theta[i2] {
                i2 = a;
            }
        }
        for a in 0..k {
            let star = if a == i1 { theta[i2] } else { theta[i1] };
            acc[a] += normal.pdf((star - mu[a]) / sigma[a]) / sigma[a];
        }
    }
    Ok(acc.into_iter().map(|v| v / mc_draws as f64).collect())
}

/// Allocation proportional to `s_a * index_a^{1/2}`.
pub fn dts_alloc(mu: &[f64], sigma: &[f64], noise_sd: &[f64], mc_draws: usize, seed: u64) -> Result<Vec<f64>> {
    if noise_sd.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            what: "noise scales",
            expected: mu.len(),
            found: noise_sd.len(),
        });
    }
    let idx = dts_indices(mu, sigma, mc_draws, seed)?;
    let w: Vec<f64> = idx.iter().zip(noise_sd).map(|(i, s)| s * i.sqrt()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegeneratePosterior("all density indices vanished".into()));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Per-arm `(mu, sigma)` of an independent non-contextual posterior.
pub fn independent_marginals(state: &PosteriorState<f64>) -> (Vec<f64>, Vec<f64>) {
    (state.beta.clone(), state.sigma.diag().into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Closed-form bounds `(lower, upper)` on the log density index of each arm
/// for an independent posterior with distinct means.
///
/// The upper bound drops every other competitor's CDF factor. The lower bound
/// keeps one competitor (the best arm, or the runner-up for the best arm),
/// integrates above a threshold where the remaining CDF factors exceed 1/2,
/// and evaluates the truncated Gaussian product integral exactly.
pub fn dts_log_index_bounds(mu: &[f64], sigma: &[f64]) -> Vec<(f64, f64)> {
    let k = mu.len();
    let normal = Normal::standard();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mu[b].partial_cmp(&mu[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (top, second) = (order[0], order[1]);
    let log_pair = |a: usize, b: usize| {
        let v = sigma[a].powi(2) + sigma[b].powi(2);
        -(mu[a] - mu[b]).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
    };
    (0..k)
        .map(|a| {
            let upper = ((k - 1) as f64).ln()
                + (0..k)
                    .filter(|&b| b != a)
                    .map(|b| log_pair(a, b))
                    .fold(f64::NEG_INFINITY, f64::max);
            let partner = if a == top { second } else { top };
            let threshold = if a == top || a == second { mu[second] } else { mu[top] };
            let (sa2, sb2) = (sigma[a].powi(2), sigma[partner].powi(2));
            let centre = (mu[a] * sb2 + mu[partner] * sa2) / (sa2 + sb2);
            let tau = (sa2 * sb2 / (sa2 + sb2)).sqrt();
            let tail = normal.sf((threshold - centre) / tau);
            let lower = (k as f64 - 2.0) * 0.5f64.ln() + log_pair(a, partner) + tail.ln();
            (lower, upper)
        })
        .collect()
}

//! Ground-truth environments: context sampling, arm assignment, noisy rewards
//! and per-batch fits.

pub mod asos;
pub mod ranking;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Gumbel, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::allocation::EpochAllocation;
use crate::error::{Error, Result};
use crate::model::{fit_batch, sigmoid, BatchData, ContextSet, Design, EstimateSummary, LossFamily, ModelSpec, Observation};
use crate::posterior::HorizonSpec;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Reward noise, centred and scaled to the requested variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Gumbel,
    StudentT { df: f64 },
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseFamily::StudentT { df } if !(*df > 2.0) => Err(Error::param("df", "Student-t needs more than 2 degrees of freedom")),
            _ => Ok(()),
        }
    }

    /// One draw with mean zero and variance `var`.
    pub fn sample<R: Rng + ?Sized>(&self, var: f64, rng: &mut R) -> f64 {
        let s = var.sqrt();
        match *self {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            }
            NoiseFamily::Gumbel => {
                let g = Gumbel::new(0.0, 1.0).expect("unit scale").sample(rng);
                s * (g - EULER_GAMMA) * 6f64.sqrt() / std::f64::consts::PI
            }
            NoiseFamily::StudentT { df } => {
                let t = StudentT::new(df).expect("validated df").sample(rng);
                s * t * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

/// A simulated experiment: true parameter, contexts, noise and horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    pub truth: ModelSpec<f64>,
    pub theta_star: Vec<f64>,
    pub ctx: ContextSet<f64>,
    pub noise: NoiseFamily,
    /// Reward variance per `[context][arm]`.
    pub noise_var: Vec<Vec<f64>>,
    pub horizon: HorizonSpec,
}

/// Outcome of one simulated batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub data: BatchData<f64>,
    pub summary: EstimateSummary<f64>,
    pub total_reward: f64,
}

/// Independent RNG substream for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.horizon.validate()?;
        self.ctx.validate()?;
        self.ctx.validate_horizon(self.horizon.epochs())?;
        if self.theta_star.len() != self.truth.dim() {
            return Err(Error::DimensionMismatch {
                what: "theta_star",
                expected: self.truth.dim(),
                found: self.theta_star.len(),
            });
        }
        if self.noise_var.len() != self.ctx.len() || self.noise_var.iter().any(|r| r.len() != self.truth.num_arms) {
            return Err(Error::param("noise_var", "one variance per context and arm"));
        }
        if self.noise_var.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("noise_var", "variances must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn num_arms(&self) -> usize {
        self.truth.num_arms
    }

    pub fn truth_design(&self) -> Result<Design<f64>> {
        self.truth.design(&self.ctx)
    }

    /// Context indices of `n` units drawn from the epoch's context weights.
    pub fn sample_contexts<R: Rng + ?Sized>(&self, epoch: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        let w = self.ctx.weights_at(epoch);
        if w.len() == 1 {
            return Ok(vec![0; n]);
        }
        let dist = WeightedIndex::new(w).map_err(|e| Error::InvalidContexts(e.to_string()))?;
        Ok((0..n).map(|_| dist.sample(rng)).collect())
    }

    /// Observed rewards of the given units under the true parameter.
    pub fn observe<R: Rng + ?Sized>(&self, truth: &Design<f64>, epoch: usize, contexts: &[usize], arms: &[usize], rng: &mut R) -> BatchData<f64> {
        let units = contexts
            .iter()
            .zip(arms)
            .map(|(&x, &a)| {
                let rewards = truth
                    .rows(x, a)
                    .iter()
                    .map(|r| {
                        let u = r.dot(&self.theta_star);
                        match self.truth.loss {
                            LossFamily::SquaredError => u + self.noise.sample(self.noise_var[x][a], rng),
                            LossFamily::Logistic => {
                                if Bernoulli::new(sigmoid(u)).expect("probability").sample(rng) {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                Observation { context: x, arm: a, rewards }
            })
            .collect();
        BatchData { epoch, units }
    }

    /// Samples a batch of `n_t` units under `alloc`, observes rewards and fits
    /// the agent's model.
    pub fn run_batch<R: Rng + ?Sized>(
        &self,
        truth: &Design<f64>,
        agent: &Design<f64>,
        alloc: &EpochAllocation<f64>,
        epoch: usize,
        rng: &mut R,
    ) -> Result<BatchOutcome> {
        if epoch >= self.horizon.epochs() {
            return Err(Error::param("epoch", "past the end of the horizon"));
        }
        let n = self.horizon.batch_sizes[epoch];
        let contexts = self.sample_contexts(epoch, n, rng)?;
        let arms = assign_from_allocation(alloc, &contexts, rng)?;
        self.run_assigned(truth, agent, epoch, &contexts, &arms, rng)
    }

    /// As [`Environment::run_batch`] with arms already chosen per unit.
    pub fn run_assigned<R: Rng + ?Sized>(
        &self,
        truth: &Design<f64>,
        agent: &Design<f64>,
        epoch: usize,
        contexts: &[usize],
        arms: &[usize],
        rng: &mut R,
    ) -> Result<BatchOutcome> {
        let data = self.observe(truth, epoch, contexts, arms, rng);
        let summary = if data.is_empty() {
            EstimateSummary::empty(agent.dim(), epoch)
        } else {
            fit_batch(agent, &data)?
        };
        let total_reward = data.total_reward();
        Ok(BatchOutcome {
            data,
            summary,
            total_reward,
        })
    }
}

/// Draws one arm per unit from its context's allocation row.
pub fn assign_from_allocation<R: Rng + ?Sized>(alloc: &EpochAllocation<f64>, contexts: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let rows = alloc.num_rows();
    let dists = (0..rows)
        .map(|r| WeightedIndex::new(alloc.row(r)).map_err(|e| Error::InvalidAllocation(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok(contexts
        .iter()
        .map(|&x| {
            let r = if alloc.is_shared() { 0 } else { x };
            dists[r].sample(rng)
        })
        .collect())
}

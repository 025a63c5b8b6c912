//! Ranker selection: each arm is a weight vector that picks the top-b contents
//! for a user, and the reward sums `(x * z)^T theta*` over the picked items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BatchOutcome, Environment, NoiseFamily};
use crate::error::{Error, Result};
use crate::model::{ContextSet, Design, FeatureMap, LossFamily, ModelSpec};
use crate::posterior::HorizonSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingEnv {
    pub user_mean: Vec<f64>,
    /// Per-coordinate standard deviation of user features.
    pub user_sd: Vec<f64>,
    pub contents: Vec<Vec<f64>>,
    pub rankers: Vec<Vec<f64>>,
    pub items_per_user: usize,
    pub theta_star: Vec<f64>,
    pub noise_var: f64,
}

fn normal_vec<R: Rng + ?Sized>(d: usize, mean: f64, sd: f64, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        })
        .collect()
}

impl RankingEnv {
    /// Random instance: contents, rankers and `theta*` with standard normal
    /// coordinates, users around `user_mean = 1`.
    pub fn generate(dim: usize, num_contents: usize, num_rankers: usize, items_per_user: usize, noise_var: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = RankingEnv {
            user_mean: vec![1.0; dim],
            user_sd: vec![1.0; dim],
            contents: (0..num_contents).map(|_| normal_vec(dim, 0.0, 1.0, &mut rng)).collect(),
            rankers: (0..num_rankers).map(|_| normal_vec(dim, 0.0, 1.0, &mut rng)).collect(),
            items_per_user,
            theta_star: normal_vec(dim, 0.0, 1.0, &mut rng),
            noise_var,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.items_per_user == 0 || self.items_per_user > self.contents.len() {
            return Err(Error::param("items_per_user", "between 1 and the number of contents"));
        }
        let vecs = self.contents.iter().chain(&self.rankers).chain([&self.user_mean, &self.user_sd]);
        for v in vecs {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("ranking", "feature vectors must be finite with a common dimension"));
            }
        }
        if self.rankers.is_empty() {
            return Err(Error::param("rankers", "at least one ranker"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec<f64>> {
        let k = self.rankers.len();
        ModelSpec::new(
            FeatureMap::Ranking {
                contents: self.contents.clone(),
                rankers: self.rankers.clone(),
                items_per_user: self.items_per_user,
            },
            LossFamily::SquaredError,
            k,
            vec![self.noise_var; k],
        )
    }

    /// Samples `num_users` users as the finite context set shared by every epoch
    /// and the post-experiment population.
    pub fn user_pool(&self, num_users: usize, seed: u64) -> Result<ContextSet<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..num_users)
            .map(|_| {
                self.user_mean
                    .iter()
                    .zip(&self.user_sd)
                    .map(|(&m, &s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect()
            })
            .collect();
        ContextSet::uniform(users, 1)
    }

    /// Environment over a user pool with the given horizon.
    pub fn environment(&self, pool: ContextSet<f64>, horizon: HorizonSpec) -> Result<Environment> {
        let epochs = horizon.epochs();
        let ctx = ContextSet::new(pool.contexts, vec![pool.population.clone(); epochs], pool.population)?;
        let env = Environment {
            truth: self.model()?,
            theta_star: self.theta_star.clone(),
            noise_var: vec![vec![self.noise_var; self.rankers.len()]; ctx.len()],
            ctx,
            noise: NoiseFamily::Gaussian,
            horizon,
        };
        env.validate()?;
        Ok(env)
    }
}

/// One batch of users with their chosen rankers: one data row per displayed
/// item, fitted under the `x * z` feature model.
pub fn ranking_step<R: Rng + ?Sized>(
    env: &Environment,
    design: &Design<f64>,
    epoch: usize,
    users: &[usize],
    rankers: &[usize],
    rng: &mut R,
) -> Result<BatchOutcome> {
    if let Some(&bad) = rankers.iter().find(|&&a| a >= env.num_arms()) {
        return Err(Error::param("ranker", format!("ranker {bad} out of range")));
    }
    env.run_assigned(design, design, epoch, users, rankers, rng)
}

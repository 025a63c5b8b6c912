//! Problem instances and single-episode simulation for every policy.

use std::io::Read;

use bldp_core::allocation::EpochAllocation;
use bldp_core::baselines::{dts_alloc, empirical_allocation, independent_marginals, ts_assign, ttts_assign, BaselineKind};
use bldp_core::model::Design;
use bldp_core::objectives::{argmax, final_decision, marginal, realized_regret, ObjectiveSpec};
use bldp_core::planner::rho_policy_step;
use bldp_core::posterior::{default_prior_scale, update, PosteriorState};
use bldp_core::simulator::asos::{agent_model, gen_asos_like, read_csv, synthetic_instance, AsosInstance};
use bldp_core::simulator::ranking::RankingEnv;
use bldp_core::simulator::{assign_from_allocation, substream, Environment};
use bldp_core::posterior::HorizonSpec;
use rayon::prelude::*;

use crate::config::{BenchConfig, EnvConfig, Policy};
use crate::error::{HarnessError, Result};

/// splitmix64 over a sequence of words.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const POLICY_SALT: u64 = 0x0A11_0CA7_E5EE_D000;

/// One environment with its designs, true mean table and prior scale.
#[derive(Clone, Debug)]
pub struct Instance {
    pub id: usize,
    pub env: Environment,
    pub truth: Design<f64>,
    pub contextual: Design<f64>,
    pub arm_only: Option<Design<f64>>,
    /// True mean reward per `[context][arm]`.
    pub means: Vec<Vec<f64>>,
    pub prior_scale: f64,
}

impl Instance {
    pub fn new(id: usize, env: Environment, arm_only: bool, c_prior: Option<f64>) -> Result<Self> {
        let truth = env.truth_design()?;
        let contextual = truth.clone();
        let arm_only = if arm_only {
            Some(agent_model(&env, false)?.design(&env.ctx)?)
        } else {
            None
        };
        let means = (0..env.ctx.len())
            .map(|x| (0..env.num_arms()).map(|a| truth.mean_reward(&env.theta_star, x, a)).collect())
            .collect();
        let nv = &env.truth.noise_var;
        let mean_noise = nv.iter().sum::<f64>() / nv.len() as f64;
        let n_bar = env.horizon.mean_batch();
        let prior_scale = match c_prior {
            Some(c) => c / n_bar,
            None => default_prior_scale(mean_noise, n_bar),
        };
        if !(prior_scale > 0.0 && prior_scale.is_finite()) {
            return Err(HarnessError::config("prior.c_prior", format!("instance {id} has a degenerate prior scale {prior_scale}")));
        }
        Ok(Instance {
            id,
            env,
            truth,
            contextual,
            arm_only,
            means,
            prior_scale,
        })
    }

    pub fn agent(&self, contextual: bool) -> Result<&Design<f64>> {
        if contextual {
            Ok(&self.contextual)
        } else {
            self.arm_only
                .as_ref()
                .ok_or_else(|| HarnessError::config("policy.contextual", "this environment has no non-contextual model"))
        }
    }

    pub fn prior(&self, contextual: bool) -> Result<PosteriorState<f64>> {
        Ok(PosteriorState::isotropic_prior(self.agent(contextual)?.dim(), self.prior_scale)?)
    }
}

fn read_sources(path: &std::path::Path) -> Result<Vec<AsosInstance>> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| HarnessError::io(path, e))?;
    Ok(read_csv(text.as_bytes())?)
}

/// Builds every configured instance, seeded from the master seed.
pub fn build_instances(cfg: &BenchConfig) -> Result<Vec<Instance>> {
    let c_prior = cfg.prior.c_prior;
    match &cfg.environment {
        EnvConfig::Asos {
            instances,
            arms,
            batch,
            intervals,
            source,
        } => {
            let sources = match source {
                Some(p) => {
                    let s = read_sources(p)?;
                    if s.len() < *instances {
                        return Err(HarnessError::config(
                            "environment.instances",
                            format!("{} requested but {} has only {}", instances, p.display(), s.len()),
                        ));
                    }
                    s.into_iter().take(*instances).collect()
                }
                None => (0..*instances).map(|i| synthetic_instance(i, *intervals, *batch, cfg.seed)).collect::<Vec<_>>(),
            };
            sources
                .par_iter()
                .enumerate()
                .map(|(i, src)| {
                    let env = gen_asos_like(src, *arms, *batch, mix_seed(&[cfg.seed, i as u64, 1]))?;
                    Instance::new(i, env, true, c_prior)
                })
                .collect()
        }
        EnvConfig::Ranking {
            instances,
            dim,
            contents,
            rankers,
            items_per_user,
            users,
            epochs,
            batch,
            noise_var,
        } => (0..*instances)
            .into_par_iter()
            .map(|i| {
                let s = mix_seed(&[cfg.seed, i as u64, 2]);
                let r = RankingEnv::generate(*dim, *contents, *rankers, *items_per_user, *noise_var, s)?;
                let pool = r.user_pool(*users, s ^ 1)?;
                let env = r.environment(pool, HorizonSpec::constant(*epochs, *batch))?;
                Instance::new(i, env, false, c_prior)
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Arm marginal of the deployed allocation, or empirical frequencies for
    /// per-unit policies.
    pub allocation: Vec<f64>,
    pub reward: f64,
    /// Realized within-batch regret of the assigned units.
    pub regret: f64,
    /// Arm with the highest posterior mean after the update.
    pub posterior_best: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub epochs: Vec<EpochTrace>,
    pub simple_regret: f64,
    pub cumulative_regret: f64,
    pub chosen_arm: usize,
    pub ttts_fallbacks: usize,
}

/// Runs one full experiment. `seed` drives contexts and rewards and, through
/// a salted stream, the policy's own randomness; equal seeds pair runs across
/// policies.
pub fn run_episode(inst: &Instance, policy: &Policy, seed: u64) -> Result<Episode> {
    let env = &inst.env;
    let horizon = &env.horizon;
    let agent = inst.agent(policy.contextual())?;
    let k = env.num_arms();
    let mut state = inst.prior(policy.contextual())?;
    let mut spec = match policy {
        Policy::Rho { spec, .. } => spec.clone(),
        Policy::Baseline { .. } => ObjectiveSpec::simple_regret(),
    };
    let policy_seed = seed ^ POLICY_SALT;
    let mut traces = Vec::with_capacity(horizon.epochs());
    let mut cumulative = 0.0;
    let mut fallbacks = 0;
    for t in 0..horizon.epochs() {
        let n = horizon.batch_sizes[t];
        let contexts = env.sample_contexts(t, n, &mut substream(seed, 2 * t as u64))?;
        let mut prng = substream(policy_seed, t as u64);
        let unit_seed = mix_seed(&[policy_seed, t as u64]);
        let weights = env.ctx.weights_at(t);
        let deploy = |alloc: &EpochAllocation<f64>, rng: &mut _| -> Result<(Vec<usize>, Vec<f64>)> {
            Ok((assign_from_allocation(alloc, &contexts, rng)?, marginal(alloc, weights)))
        };
        let (arms, allocation) = match policy {
            Policy::Rho { opt, .. } => {
                let mut o = opt.clone();
                o.seed = unit_seed;
                let step = rho_policy_step(&state, horizon, agent, &env.ctx, &spec, &o)?;
                spec = step.spec;
                deploy(&step.deploy, &mut prng)?
            }
            Policy::Baseline { spec: b, .. } => {
                let per_unit = |arms: Vec<usize>| -> Result<(Vec<usize>, Vec<f64>)> {
                    let emp = empirical_allocation(t, k, 1, &vec![0; arms.len()], &arms)?;
                    Ok((arms, emp.row(0).to_vec()))
                };
                match b.kind {
                    BaselineKind::Uniform => deploy(&EpochAllocation::uniform(t, k), &mut prng)?,
                    BaselineKind::Ts => per_unit(ts_assign(&state, agent, &contexts, unit_seed)?)?,
                    BaselineKind::Ttts { beta } => {
                        let out = ttts_assign(&state, agent, &contexts, beta, b.resample_cap, unit_seed)?;
                        fallbacks += out.fallbacks;
                        per_unit(out.arms)?
                    }
                    BaselineKind::Dts { mc_draws } => {
                        let (mu, sd) = independent_marginals(&state);
                        let s: Vec<f64> = agent.model.noise_var.iter().map(|v| v.sqrt()).collect();
                        let row = dts_alloc(&mu, &sd, &s, mc_draws, unit_seed)?;
                        deploy(&EpochAllocation::shared(t, row)?, &mut prng)?
                    }
                }
            }
        };
        let out = env.run_assigned(&inst.truth, agent, t, &contexts, &arms, &mut substream(seed, 2 * t as u64 + 1))?;
        out.summary.check_converged()?;
        let regret: f64 = contexts
            .iter()
            .zip(&arms)
            .map(|(&x, &a)| {
                let f = &inst.means[x];
                f[argmax(f)] - f[a]
            })
            .sum();
        cumulative += regret;
        state = update(&state, &out.summary)?;
        let post = agent.arm_means(&state.beta, &env.ctx.population);
        traces.push(EpochTrace {
            epoch: t,
            allocation,
            reward: out.total_reward,
            regret,
            posterior_best: argmax(&post),
        });
    }
    let decision = final_decision(&state, &spec, agent, &env.ctx);
    let report = realized_regret(&inst.truth, &env.theta_star, &env.ctx, horizon, &[], &decision, None);
    let chosen = decision.row(0);
    Ok(Episode {
        epochs: traces,
        simple_regret: report.simple,
        cumulative_regret: cumulative,
        chosen_arm: argmax(chosen),
        ttts_fallbacks: fallbacks,
    })
}

//! Executable checks of the posterior dynamics, the batch CLT, policy
//! improvement and the large-budget DTS limit. Each check emits
//! machine-readable `CheckReport`s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::allocation::{AllocationPlan, EpochAllocation};
use crate::baselines::{dts_alloc, independent_marginals};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_eigen, Mat, SymMatrix};
use crate::model::{fit_batch, BatchData, ContextSet, Design, FeatureMap, LossFamily, ModelSpec, Observation};
use crate::objectives::{planning_value, ObjectiveSpec};
use crate::planner::{qmc::normal_scenarios, solve_plan, OptimizerConfig};
use crate::posterior::{rollout, simulate_transition, HorizonSpec, InfoIncrement, PosteriorState};
use crate::simulator::{assign_from_allocation, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub params: Value,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn arm_only_design(k: usize, noise_var: Vec<f64>, epochs: usize) -> Result<(Design<f64>, ContextSet<f64>)> {
    let ctx = ContextSet::single(vec![], epochs);
    let design = ModelSpec::new(FeatureMap::ArmOnly, LossFamily::SquaredError, k, noise_var)?.design(&ctx)?;
    Ok((design, ctx))
}

fn random_psd(d: usize, ridge: f64, rng: &mut ChaCha8Rng) -> SymMatrix<f64> {
    let a = Mat::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let mut m = a.matmul_tr(&a).scale(1.0 / d as f64);
    for i in 0..d {
        m[(i, i)] += ridge;
    }
    SymMatrix::symmetrize(m)
}

// ---------------------------------------------------------------------------
// reparameterization

/// Increment covariance from the precision form `(Sigma^-1 + n H I^-1 H)^-1`.
fn precision_form_reduction(sigma: &SymMatrix<f64>, inc: &InfoIncrement<f64>) -> Result<Mat<f64>> {
    let prec = spd_inverse(sigma)?;
    let ih = spd_inverse(&inc.info)?;
    let gain = inc.hessian.as_mat().matmul(ih.as_mat()).matmul(inc.hessian.as_mat()).scale(inc.n);
    let next = spd_inverse(&SymMatrix::symmetrize(prec.as_mat().add(&gain)))?;
    Ok(sigma.as_mat().sub(next.as_mat()))
}

fn reparam_case(d: usize, rng: &mut ChaCha8Rng) -> Result<(PosteriorState<f64>, InfoIncrement<f64>)> {
    if d == 1 {
        return Ok((
            PosteriorState::new(vec![0.3], SymMatrix::from_diag(&[2.0]), 0)?,
            InfoIncrement {
                hessian: SymMatrix::from_diag(&[2.0]),
                info: SymMatrix::from_diag(&[4.0]),
                n: 3.0,
            },
        ));
    }
    let beta = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let state = PosteriorState::new(beta, random_psd(d, 0.2, rng), 0)?;
    let inc = InfoIncrement {
        hessian: random_psd(d, 0.1, rng),
        info: random_psd(d, 0.1, rng),
        n: 4.0,
    };
    Ok((state, inc))
}

/// Empirical covariance of `beta_{t+1} - beta_t` over `draws` simulated
/// transitions against `Sigma_t - Sigma_{t+1}`, per dimension.
pub fn check_reparam(dims: &[usize], draws: usize, seed: u64) -> Result<Vec<CheckReport>> {
    const TOL: f64 = 0.02;
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (d as u64) << 32);
        let (state, inc) = reparam_case(d, &mut rng)?;
        let target = precision_form_reduction(&state.sigma, &inc)?;
        let mut sum = vec![0.0; d];
        let mut cross = Mat::<f64>::zeros(d, d);
        let mut z = vec![0.0; d];
        for _ in 0..draws {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let next = simulate_transition(&state, &inc, &z)?;
            let step: Vec<f64> = next.beta.iter().zip(&state.beta).map(|(a, b)| a - b).collect();
            for i in 0..d {
                sum[i] += step[i];
                for j in 0..d {
                    cross[(i, j)] += step[i] * step[j];
                }
            }
        }
        let m = draws as f64;
        let emp = Mat::from_fn(d, d, |i, j| (cross[(i, j)] - sum[i] * sum[j] / m) / (m - 1.0));
        let dev = emp.sub(&target);
        let rel = dev.frobenius_norm() / target.frobenius_norm();
        out.push(CheckReport {
            check: "reparam".into(),
            params: json!({ "dim": d, "draws": draws, "seed": seed, "max_abs_deviation": dev.max_abs() }),
            metric: rel,
            threshold: TOL,
            pass: rel <= TOL,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// sequential CLT

/// Second-epoch allocation rule under test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CltPolicy {
    /// Uniform in both epochs.
    Uniform,
    /// Softmax of the first-epoch local estimates at `temperature`, mixed with
    /// `floor` per arm.
    ThompsonLike { temperature: f64, floor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    /// Batch scales `n`, strictly increasing.
    pub batch_scales: Vec<usize>,
    /// Epoch sizes are `round(b_t * n)` for the two epochs.
    pub batch_multipliers: [f64; 2],
    /// Local parameter `h`; arm means are `base_rate + h / sqrt(n)`.
    pub theta_base: Vec<f64>,
    /// Bernoulli reward rate at `h = 0`.
    pub base_rate: f64,
    pub policy: CltPolicy,
    pub replications: usize,
    pub seed: u64,
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig {
            batch_scales: vec![100, 1_000, 10_000],
            batch_multipliers: [1.0, 1.0],
            theta_base: vec![0.0, 0.1, -0.1],
            base_rate: 0.02,
            policy: CltPolicy::ThompsonLike {
                temperature: 0.2,
                floor: 0.1,
            },
            replications: 2000,
            seed: 0,
        }
    }
}

impl CltConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_scales.is_empty() || self.batch_scales.windows(2).any(|w| w[0] >= w[1]) || self.batch_scales[0] == 0 {
            return Err(Error::param("batch_scales", "non-empty, positive and strictly increasing"));
        }
        if self.batch_multipliers.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::param("batch_multipliers", "positive"));
        }
        if self.theta_base.len() < 2 {
            return Err(Error::param("theta_base", "at least two arms"));
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(Error::param("base_rate", "a probability"));
        }
        let n0 = self.batch_scales[0] as f64;
        if self.theta_base.iter().any(|h| !(0.0..=1.0).contains(&(self.base_rate + h / n0.sqrt()))) {
            return Err(Error::param("theta_base", "arm rates must stay in [0, 1] at the smallest scale"));
        }
        if let CltPolicy::ThompsonLike { temperature, floor } = self.policy {
            let k = self.theta_base.len() as f64;
            if !(temperature > 0.0) || !(0.0..1.0 / k).contains(&floor) {
                return Err(Error::param("policy", "temperature > 0 and floor in [0, 1/K)"));
            }
        }
        if self.replications < 3 {
            return Err(Error::param("replications", "at least 3"));
        }
        Ok(())
    }
}

/// One replication: the second-epoch statistic and its Gaussian-experiment law
/// given the realized second-epoch allocation.
#[derive(Clone, Debug)]
pub(crate) struct CltDraw {
    pub psi: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: SymMatrix<f64>,
}

/// `sqrt(n_t) H_n (theta_hat - base)` for one Bernoulli batch.
fn local_statistic(design: &Design<f64>, alloc: &EpochAllocation<f64>, rates: &[f64], base: f64, n: usize, epoch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let arms = assign_from_allocation(alloc, &vec![0; n], rng)?;
    let units = arms
        .into_iter()
        .map(|a| Observation {
            context: 0,
            arm: a,
            rewards: vec![if rng.random::<f64>() < rates[a] { 1.0 } else { 0.0 }],
        })
        .collect();
    let fit = fit_batch(design, &BatchData { epoch, units })?;
    let centred: Vec<f64> = fit.theta_hat.iter().map(|t| t - base).collect();
    Ok(fit.hessian.as_mat().matvec(&centred).into_iter().map(|v| v * (n as f64).sqrt()).collect())
}

pub(crate) fn clt_replication(cfg: &CltConfig, design: &Design<f64>, n: usize, rep: usize) -> Result<CltDraw> {
    let k = cfg.theta_base.len();
    let scale = (n as f64).sqrt();
    let rates: Vec<f64> = cfg.theta_base.iter().map(|h| cfg.base_rate + h / scale).collect();
    let sizes = cfg.batch_multipliers.map(|b| ((b * n as f64).round() as usize).max(1));
    let mut rng = substream(cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), rep as u64);

    let first = EpochAllocation::uniform(0, k);
    let psi0 = local_statistic(design, &first, &rates, cfg.base_rate, sizes[0], 0, &mut rng)?;
    let second = match cfg.policy {
        CltPolicy::Uniform => EpochAllocation::uniform(1, k),
        CltPolicy::ThompsonLike { temperature, floor } => {
            let (h0, _) = design.information(&[1.0], &first, &vec![0.0; k])?;
            let est: Vec<f64> = (0..k).map(|a| psi0[a] / (h0[(a, a)] * cfg.batch_multipliers[0].sqrt())).collect();
            let top = est.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = est.iter().map(|e| ((e - top) / temperature).exp()).collect();
            let total: f64 = w.iter().sum();
            let spread = 1.0 - floor * k as f64;
            EpochAllocation::shared(1, w.iter().map(|v| floor + spread * v / total).collect())?
        }
    };
    let psi = local_statistic(design, &second, &rates, cfg.base_rate, sizes[1], 1, &mut rng)?;
    let (h1, i1) = design.information(&[1.0], &second, &vec![0.0; k])?;
    let shift: Vec<f64> = cfg.theta_base.iter().map(|h| h * cfg.batch_multipliers[1].sqrt()).collect();
    Ok(CltDraw {
        psi,
        mean: h1.as_mat().matvec(&shift),
        cov: i1,
    })
}

/// Discrepancies of the standardized second-epoch statistic at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltPoint {
    pub n: usize,
    /// `|mean(r)|_2 / sqrt(K)`: the mean error relative to the statistic's RMS scale.
    pub mean_error: f64,
    /// `|cov(r) - I|_F / sqrt(K)`.
    pub cov_error: f64,
    /// Largest absolute marginal skewness of `r`.
    pub skew_error: f64,
    /// Largest of the three.
    pub law_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltOutcome {
    pub points: Vec<CltPoint>,
    pub monotone: bool,
    pub report: CheckReport,
}

fn clt_point(cfg: &CltConfig, design: &Design<f64>, n: usize) -> Result<CltPoint> {
    let k = cfg.theta_base.len();
    let draws = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| clt_replication(cfg, design, n, rep))
        .collect::<Result<Vec<_>>>()?;
    let resid: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| {
            let eig = sym_eigen(&d.cov);
            let tol = 1e-12 * eig.max_abs_value().max(f64::MIN_POSITIVE);
            let w = eig.map(|v| if v > tol { 1.0 / v.sqrt() } else { 0.0 });
            let dev: Vec<f64> = d.psi.iter().zip(&d.mean).map(|(p, m)| p - m).collect();
            w.as_mat().matvec(&dev)
        })
        .collect();
    let m = resid.len() as f64;
    let mean: Vec<f64> = (0..k).map(|a| resid.iter().map(|r| r[a]).sum::<f64>() / m).collect();
    let cov = Mat::from_fn(k, k, |a, b| resid.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (m - 1.0));
    let skew = (0..k)
        .map(|a| {
            let m2 = resid.iter().map(|r| (r[a] - mean[a]).powi(2)).sum::<f64>() / m;
            let m3 = resid.iter().map(|r| (r[a] - mean[a]).powi(3)).sum::<f64>() / m;
            if m2 > 0.0 {
                (m3 / m2.powf(1.5)).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let rk = (k as f64).sqrt();
    let mean_error = mean.iter().map(|v| v * v).sum::<f64>().sqrt() / rk;
    let cov_error = cov.sub(&Mat::identity(k)).frobenius_norm() / rk;
    Ok(CltPoint {
        n,
        mean_error,
        cov_error,
        skew_error: skew,
        law_error: mean_error.max(cov_error).max(skew),
    })
}

/// Two adaptive epochs per replication; the second-epoch statistic is compared
/// with its Gaussian-experiment law across increasing batch scales.
pub fn check_clt(cfg: &CltConfig) -> Result<CltOutcome> {
    const TOL: f64 = 0.05;
    cfg.validate()?;
    let k = cfg.theta_base.len();
    let noise = cfg.base_rate * (1.0 - cfg.base_rate);
    let (design, _) = arm_only_design(k, vec![noise; k], 2)?;
    let points = cfg
        .batch_scales
        .iter()
        .map(|&n| clt_point(cfg, &design, n))
        .collect::<Result<Vec<_>>>()?;
    let monotone = points.windows(2).all(|w| w[1].law_error < w[0].law_error);
    let last = points.last().expect("validated non-empty");
    let report = CheckReport {
        check: "clt".into(),
        params: json!({
            "config": cfg,
            "law_errors": points.iter().map(|p| p.law_error).collect::<Vec<_>>(),
            "monotone": monotone,
        }),
        metric: last.mean_error,
        threshold: TOL,
        pass: monotone && last.mean_error <= TOL,
    };
    Ok(CltOutcome { points, monotone, report })
}

// ---------------------------------------------------------------------------
// policy improvement

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementConfig {
    pub instances: usize,
    pub num_arms: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Grid step `1 / resolution` over the simplex.
    pub grid_resolution: usize,
    /// Size of the fresh scenario set used for evaluation.
    pub eval_scenarios: usize,
    pub optimizer: OptimizerConfig<f64>,
    pub seed: u64,
}

impl Default for ImprovementConfig {
    fn default() -> Self {
        ImprovementConfig {
            instances: 10,
            num_arms: 3,
            epochs: 5,
            batch: 10,
            grid_resolution: 5,
            eval_scenarios: 4096,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

/// Every point of the simplex grid with step `1 / resolution`.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() + 1 == k {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in (0..=left).rev() {
            cur.push(c);
            rec(k, left - c, cur, out);
            cur.pop();
        }
    }
    let mut counts = Vec::new();
    rec(k, resolution, &mut Vec::new(), &mut counts);
    counts
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f64 / resolution as f64).collect())
        .collect()
}

pub(crate) struct ImprovementInstance {
    pub state: PosteriorState<f64>,
    pub design: Design<f64>,
    pub ctx: ContextSet<f64>,
    pub horizon: HorizonSpec,
}

pub(crate) fn improvement_instance(cfg: &ImprovementConfig, index: usize) -> Result<ImprovementInstance> {
    let k = cfg.num_arms;
    let mut rng = substream(cfg.seed, index as u64);
    let noise: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let beta: Vec<f64> = (0..k).map(|_| 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
    let var: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let (design, ctx) = arm_only_design(k, noise, cfg.epochs)?;
    Ok(ImprovementInstance {
        state: PosteriorState::new(beta, SymMatrix::from_diag(&var), 0)?,
        design,
        ctx,
        horizon: HorizonSpec::constant(cfg.epochs, cfg.batch),
    })
}

/// Per-scenario planning values of `plan` by direct rollout.
pub fn plan_values(
    state: &PosteriorState<f64>,
    plan: &AllocationPlan<f64>,
    design: &Design<f64>,
    ctx: &ContextSet<f64>,
    horizon: &HorizonSpec,
    spec: &ObjectiveSpec<f64>,
    scenarios: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = state.dim();
    scenarios
        .iter()
        .map(|z| {
            let draws: Vec<Vec<f64>> = z.chunks(d).map(<[f64]>::to_vec).collect();
            let traj = rollout(state, plan, design, ctx, horizon, &draws)?;
            planning_value(&traj, plan, spec, design, ctx, horizon)
        })
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// RHO's plan against the best constant allocation on the simplex grid, both
/// scored on a fresh scenario set. The margin's standard error is paired.
pub fn check_policy_improvement(cfg: &ImprovementConfig) -> Result<Vec<CheckReport>> {
    if cfg.instances == 0 || cfg.grid_resolution == 0 || cfg.eval_scenarios < 2 {
        return Err(Error::param("improvement", "instances, grid resolution and evaluation size must be positive"));
    }
    let spec = ObjectiveSpec::simple_regret();
    let grid = simplex_grid(cfg.num_arms, cfg.grid_resolution);
    (0..cfg.instances)
        .into_par_iter()
        .map(|idx| {
            let inst = improvement_instance(cfg, idx)?;
            let mut opt = cfg.optimizer.clone();
            opt.seed = cfg.seed.wrapping_add(idx as u64);
            let solved = solve_plan(&inst.state, &inst.horizon, &inst.design, &inst.ctx, &spec, &opt)?;
            let eval_seed = opt.seed ^ 0x5EED_F00D_0000_0000;
            let z = normal_scenarios(cfg.eval_scenarios, cfg.epochs * inst.state.dim(), eval_seed, true)?;
            let values = |plan: &AllocationPlan<f64>| plan_values(&inst.state, plan, &inst.design, &inst.ctx, &inst.horizon, &spec, &z);
            let rho = values(&solved.plan)?;
            let mut best: Option<(f64, Vec<f64>, &Vec<f64>)> = None;
            for p in &grid {
                let plan = AllocationPlan {
                    epochs: (0..cfg.epochs).map(|t| EpochAllocation::shared(t, p.clone())).collect::<Result<_>>()?,
                };
                let v = values(&plan)?;
                let m = mean_se(&v).0;
                if best.as_ref().is_none_or(|b| m > b.0) {
                    best = Some((m, v, p));
                }
            }
            let (grid_mean, grid_vals, grid_best) = best.expect("grid is non-empty");
            let diff: Vec<f64> = rho.iter().zip(&grid_vals).map(|(a, b)| a - b).collect();
            let (margin, se) = mean_se(&diff);
            let rho_mean = mean_se(&rho).0;
            Ok(CheckReport {
                check: "policy_improvement".into(),
                params: json!({
                    "instance": idx,
                    "rho_value": rho_mean,
                    "grid_max": grid_mean,
                    "grid_argmax": grid_best,
                    "paired_se": se,
                    "first_allocation": solved.plan.epochs[0].row(0),
                }),
                metric: margin,
                threshold: -3.0 * se,
                pass: margin >= -3.0 * se,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// DTS limit

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtsLimitConfig {
    pub states: usize,
    pub num_arms: usize,
    /// Residual budgets, strictly increasing; each is spent in one remaining epoch.
    pub budgets: Vec<usize>,
    pub mc_draws: usize,
    pub tolerance: f64,
    pub optimizer: OptimizerConfig<f64>,
    pub seed: u64,
}

impl Default for DtsLimitConfig {
    fn default() -> Self {
        DtsLimitConfig {
            states: 5,
            num_arms: 3,
            budgets: vec![1_000, 10_000, 1_000_000],
            mc_draws: 1 << 14,
            tolerance: 0.05,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

pub(crate) fn dts_state(cfg: &DtsLimitConfig, index: usize) -> Result<(PosteriorState<f64>, Vec<f64>)> {
    let k = cfg.num_arms;
    let mut rng = substream(cfg.seed ^ 0xD75, index as u64);
    // posterior after `m_a` earlier units per arm, so residual budgets near
    // 10^3 are comparable to the information already held
    let noise: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let var: Vec<f64> = noise.iter().map(|s| s / rng.random_range(200.0..1000.0)).collect();
    let spread = (var.iter().sum::<f64>() / k as f64).sqrt();
    let beta: Vec<f64> = (0..k).map(|_| spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
    Ok((PosteriorState::new(beta, SymMatrix::from_diag(&var), 0)?, noise))
}

/// Sup distance between RHO's allocation for a single remaining epoch and the
/// DTS allocation of the same posterior.
pub fn dts_distance(state: &PosteriorState<f64>, noise_var: &[f64], budget: usize, mc_draws: usize, opt: &OptimizerConfig<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = noise_var.len();
    let (design, ctx) = arm_only_design(k, noise_var.to_vec(), 1)?;
    let horizon = HorizonSpec::constant(1, budget);
    let solved = solve_plan(state, &horizon, &design, &ctx, &ObjectiveSpec::simple_regret(), opt)?;
    let rho = solved.plan.epochs[0].row(0).to_vec();
    let (mu, sd) = independent_marginals(state);
    let s: Vec<f64> = noise_var.iter().map(|v| v.sqrt()).collect();
    let dts = dts_alloc(&mu, &sd, &s, mc_draws, opt.seed)?;
    let dist = rho.iter().zip(&dts).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((dist, rho, dts))
}

pub fn check_dts_limit(cfg: &DtsLimitConfig) -> Result<Vec<CheckReport>> {
    if cfg.budgets.len() < 2 || cfg.budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("budgets", "at least two, strictly increasing"));
    }
    (0..cfg.states)
        .into_par_iter()
        .map(|idx| {
            let (state, noise) = dts_state(cfg, idx)?;
            let mut opt = cfg.optimizer.clone();
            opt.seed = cfg.seed.wrapping_add(idx as u64);
            let runs = cfg
                .budgets
                .iter()
                .map(|&b| dts_distance(&state, &noise, b, cfg.mc_draws, &opt))
                .collect::<Result<Vec<_>>>()?;
            let dists: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let last = *dists.last().expect("at least two budgets");
            let shrinks = last < dists[0];
            Ok(CheckReport {
                check: "dts_limit".into(),
                params: json!({
                    "state": idx,
                    "budgets": cfg.budgets,
                    "distances": dists,
                    "rho": runs.last().map(|r| &r.1),
                    "dts": runs.last().map(|r| &r.2),
                }),
                metric: last,
                threshold: cfg.tolerance,
                pass: shrinks && last <= cfg.tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparam_passes_for_small_dims() {
        let reps = check_reparam(&[1, 2, 4], 100_000, 7).unwrap();
        for r in &reps {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn scalar_reduction_matches_formula() {
        // 1-d: Sigma' = 1 / (1/s + n h^2 / i)
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (state, inc) = reparam_case(1, &mut rng).unwrap();
        let red = precision_form_reduction(&state.sigma, &inc).unwrap();
        let next = 1.0 / (1.0 / 2.0 + 3.0 * 4.0 / 4.0);
        assert!((red[(0, 0)] - (2.0 - next)).abs() < 1e-12);
    }

    #[test]
    fn zero_draw_gives_zero_increment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (state, inc) = reparam_case(4, &mut rng).unwrap();
        let next = simulate_transition(&state, &inc, &[0.0; 4]).unwrap();
        assert_eq!(next.beta, state.beta);
    }

    #[test]
    fn simplex_grid_sizes() {
        let g = simplex_grid(3, 5);
        assert_eq!(g.len(), 21);
        assert!(g.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(simplex_grid(2, 4).len(), 5);
        assert_eq!(simplex_grid(1, 3), vec![vec![1.0]]);
    }

    #[test]
    fn clt_zero_noise_statistic_sits_at_its_mean() {
        let cfg = CltConfig {
            theta_base: vec![0.0, 0.0],
            base_rate: 0.0,
            ..CltConfig::default()
        };
        let (design, _) = arm_only_design(2, vec![1.0; 2], 2).unwrap();
        let d = clt_replication(&cfg, &design, 100, 0).unwrap();
        assert_eq!(d.psi, d.mean);
    }

    #[test]
    fn clt_uniform_policy_is_classical() {
        let cfg = CltConfig {
            batch_scales: vec![100, 1_000],
            policy: CltPolicy::Uniform,
            ..CltConfig::default()
        };
        let out = check_clt(&cfg).unwrap();
        let k = cfg.theta_base.len() as f64;
        // standardized mean per coordinate within 3 / sqrt(reps)
        let bound = 3.0 / (cfg.replications as f64).sqrt();
        assert!(out.points[1].mean_error * k.sqrt() <= bound * k.sqrt(), "{:?}", out.points);
        // skewness decays at the 1/sqrt(n) rate
        let ratio = out.points[1].skew_error / out.points[0].skew_error;
        let rate = (100.0f64 / 1000.0).sqrt();
        assert!(ratio > rate / 2.0 && ratio < rate * 2.0, "ratio {ratio}");
    }

    #[test]
    fn single_arm_improvement_is_trivial() {
        let cfg = ImprovementConfig {
            instances: 1,
            num_arms: 1,
            eval_scenarios: 64,
            ..ImprovementConfig::default()
        };
        let r = check_policy_improvement(&cfg).unwrap();
        assert_eq!(r[0].metric, 0.0);
        assert!(r[0].pass);
    }

    #[test]
    fn symmetric_two_arm_matches_uniform() {
        let cfg = ImprovementConfig {
            num_arms: 2,
            epochs: 2,
            eval_scenarios: 1024,
            grid_resolution: 4,
            optimizer: OptimizerConfig {
                num_steps: 50,
                num_scenarios: 128,
                ..OptimizerConfig::default()
            },
            ..ImprovementConfig::default()
        };
        let (design, ctx) = arm_only_design(2, vec![1.0; 2], 2).unwrap();
        let state = PosteriorState::new(vec![0.0; 2], SymMatrix::identity(2), 0).unwrap();
        let horizon = HorizonSpec::constant(2, 10);
        let spec = ObjectiveSpec::simple_regret();
        let z = normal_scenarios(1024, 4, 9, true).unwrap();
        let solved = solve_plan(&state, &horizon, &design, &ctx, &spec, &cfg.optimizer).unwrap();
        let uni = AllocationPlan {
            epochs: vec![EpochAllocation::uniform(0, 2), EpochAllocation::uniform(1, 2)],
        };
        let a = plan_values(&state, &solved.plan, &design, &ctx, &horizon, &spec, &z).unwrap();
        let b = plan_values(&state, &uni, &design, &ctx, &horizon, &spec, &z).unwrap();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (m, se) = mean_se(&diff);
        assert!(m.abs() <= 3.0 * se + 1e-9, "{m} {se}");
    }

    #[test]
    fn dts_symmetric_state_is_uniform() {
        let state = PosteriorState::new(vec![0.0; 3], SymMatrix::identity(3), 0).unwrap();
        let opt = OptimizerConfig {
            num_steps: 50,
            num_scenarios: 256,
            ..OptimizerConfig::default()
        };
        let (dist, rho, dts) = dts_distance(&state, &[1.0; 3], 10_000, 4096, &opt).unwrap();
        assert!(dist < 0.02, "{rho:?} {dts:?}");
    }

    #[test]
    fn reports_serialize_with_the_expected_keys() {
        let r = &check_reparam(&[1], 1000, 0).unwrap()[0];
        let v = serde_json::to_value(r).unwrap();
        for key in ["check", "params", "metric", "threshold", "pass"] {
            assert!(v.get(key).is_some());
        }
    }
}

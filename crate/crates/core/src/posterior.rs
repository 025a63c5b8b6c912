//! Gaussian posterior state and its conjugate and reparameterized transitions.

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationPlan, EpochAllocation};
use crate::error::{Error, Result};
use crate::linalg::{check_psd, components, psd_sqrt, spd_inverse, sym_eigen, KernelConfig, Mat, SymMatrix};
use crate::model::{ContextSet, Design, EstimateSummary};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PosteriorState<T> {
    pub beta: Vec<T>,
    pub sigma: SymMatrix<T>,
    pub epoch: usize,
}

impl<T: Scalar> PosteriorState<T> {
    pub fn new(beta: Vec<T>, sigma: SymMatrix<T>, epoch: usize) -> Result<Self> {
        let s = PosteriorState { beta, sigma, epoch };
        s.validate()?;
        Ok(s)
    }

    /// `N(0, lambda I)` at epoch 0.
    pub fn isotropic_prior(dim: usize, lambda: T) -> Result<Self> {
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(Error::param("prior scale", "must be positive and finite"));
        }
        Ok(PosteriorState {
            beta: vec![T::zero(); dim],
            sigma: SymMatrix::scaled_identity(dim, lambda),
            epoch: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.dim() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                what: "posterior covariance",
                expected: self.beta.len(),
                found: self.sigma.dim(),
            });
        }
        if self.beta.iter().any(|b| !b.is_finite()) || !self.sigma.as_mat().is_finite() {
            return Err(Error::DegeneratePosterior("non-finite entries".into()));
        }
        check_psd(&self.sigma, &KernelConfig::default()).map(|_| ())
    }

    pub fn cast<U: Scalar>(&self) -> PosteriorState<U> {
        PosteriorState {
            beta: self.beta.iter().map(|&b| U::lit(b.as_f64())).collect(),
            sigma: self.sigma.cast(),
            epoch: self.epoch,
        }
    }
}

/// Prior variance `c_prior / mean_batch` with `c_prior = 100 * mean_noise_var`.
pub fn default_prior_scale<T: Scalar>(mean_noise_var: T, mean_batch: T) -> T {
    T::lit(100.0) * mean_noise_var / mean_batch
}

/// Batch sizes of each epoch; the horizon is their count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub batch_sizes: Vec<usize>,
}

impl HorizonSpec {
    pub fn constant(epochs: usize, batch: usize) -> Self {
        HorizonSpec {
            batch_sizes: vec![batch; epochs],
        }
    }

    pub fn epochs(&self) -> usize {
        self.batch_sizes.len()
    }

    pub fn mean_batch(&self) -> f64 {
        if self.batch_sizes.is_empty() {
            0.0
        } else {
            self.batch_sizes.iter().sum::<usize>() as f64 / self.batch_sizes.len() as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() {
            return Err(Error::param("batch_sizes", "at least one epoch"));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::param("batch_sizes", "every batch needs at least one unit"));
        }
        Ok(())
    }
}

/// Information carried by one batch: `n`, the Hessian `H` and score covariance `I`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoIncrement<T> {
    pub hessian: SymMatrix<T>,
    pub info: SymMatrix<T>,
    pub n: T,
}

impl<T: Scalar> InfoIncrement<T> {
    pub fn from_summary(summary: &EstimateSummary<T>) -> Self {
        InfoIncrement {
            hessian: summary.hessian.clone(),
            info: summary.info.clone(),
            n: T::from_usize_lossy(summary.n_units),
        }
    }

    /// Population information of `n` units drawn under `alloc` and context weights.
    pub fn from_allocation(design: &Design<T>, weights: &[T], alloc: &EpochAllocation<T>, theta_ref: &[T], n: T) -> Result<Self> {
        let (hessian, info) = design.information(weights, alloc, theta_ref)?;
        Ok(InfoIncrement { hessian, info, n })
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.n == T::zero() || self.hessian.as_mat().as_slice().iter().all(|&h| h == T::zero())
    }

    /// Precision increment `n H I^+ H`.
    pub fn precision(&self) -> SymMatrix<T> {
        let cfg = KernelConfig::<T>::default();
        let eig = sym_eigen(&self.info);
        let cut = cfg.tol_rank * eig.max_abs_value();
        let ipinv = eig.map(|l| if l.abs() > cut { T::one() / l } else { T::zero() });
        ipinv.congruence(self.hessian.as_mat()).scale(self.n)
    }

    /// `F` with `F F^T = n H I^+ H`, namely `sqrt(n) H (I^+)^{1/2}`.
    fn factor(&self, idx: &[usize]) -> Mat<T> {
        let cfg = KernelConfig::<T>::default();
        let info = self.info.principal(idx);
        let eig = sym_eigen(&info);
        let cut = cfg.tol_rank * eig.max_abs_value();
        let s = eig.map(|l| if l > cut { T::one() / l.sqrt() } else { T::zero() });
        self.hessian.principal(idx).as_mat().matmul(s.as_mat()).scale(self.n.sqrt())
    }
}

/// Index groups on which `a` and `b` are jointly block diagonal.
pub(crate) fn joint_blocks<T: Scalar>(mats: &[&SymMatrix<T>]) -> Vec<Vec<usize>> {
    let n = mats[0].dim();
    components(n, |i, j| mats.iter().any(|m| m[(i, j)] != T::zero()))
}

struct BlockStep<T> {
    idx: Vec<usize>,
    /// `G = Sigma F`.
    g: Mat<T>,
    f: Mat<T>,
    /// `(I + F^T Sigma F)^{-1}`.
    a_inv: SymMatrix<T>,
}

impl<T: Scalar> BlockStep<T> {
    fn new(sigma: &SymMatrix<T>, inc: &InfoIncrement<T>, idx: Vec<usize>) -> Result<Self> {
        let f = inc.factor(&idx);
        let g = sigma.principal(&idx).as_mat().matmul(&f);
        let mut a = f.tr_matmul(&g);
        for i in 0..a.rows() {
            a[(i, i)] += T::one();
        }
        let a_inv = spd_inverse(&SymMatrix::symmetrize(a))?;
        Ok(BlockStep { idx, g, f, a_inv })
    }

    /// `Sigma_t - Sigma_{t+1} = G A^{-1} G^T`.
    fn reduction(&self) -> SymMatrix<T> {
        SymMatrix::symmetrize(self.g.matmul(self.a_inv.as_mat()).matmul_tr(&self.g))
    }
}

fn scatter<T: Scalar>(dst: &mut Mat<T>, idx: &[usize], src: &Mat<T>, sign: T) {
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            dst[(i, j)] += sign * src[(r, c)];
        }
    }
}

/// Conjugate update with the batch estimate.
///
/// Uses the gain form `beta' = beta + Sigma F (I + F^T Sigma F)^{-1} F^T (theta_hat - beta)`,
/// which agrees with the precision form and needs no inverse of `Sigma`.
pub fn update<T: Scalar>(state: &PosteriorState<T>, summary: &EstimateSummary<T>) -> Result<PosteriorState<T>> {
    let d = state.dim();
    if summary.theta_hat.len() != d || summary.hessian.dim() != d || summary.info.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "estimate summary",
            expected: d,
            found: summary.theta_hat.len(),
        });
    }
    let inc = InfoIncrement::from_summary(summary);
    if inc.is_zero() {
        return Ok(PosteriorState {
            epoch: state.epoch + 1,
            ..state.clone()
        });
    }
    let mut sigma = state.sigma.as_mat().clone();
    let mut beta = state.beta.clone();
    for idx in joint_blocks(&[&state.sigma, &inc.hessian, &inc.info]) {
        let step = BlockStep::new(&state.sigma, &inc, idx)?;
        scatter(&mut sigma, &step.idx, step.reduction().as_mat(), -T::one());
        let resid: Vec<T> = step.idx.iter().map(|&i| summary.theta_hat[i] - state.beta[i]).collect();
        let v = step.a_inv.matvec(&step.f.transpose().matvec(&resid));
        let delta = step.g.matvec(&v);
        for (r, &i) in step.idx.iter().enumerate() {
            beta[i] += delta[r];
        }
    }
    let out = PosteriorState {
        beta,
        sigma: SymMatrix::symmetrize(sigma),
        epoch: state.epoch + 1,
    };
    if out.beta.iter().any(|b| !b.is_finite()) || !out.sigma.as_mat().is_finite() {
        return Err(Error::DegeneratePosterior("update produced non-finite values".into()));
    }
    Ok(out)
}

/// Covariance of the next posterior mean, `Sigma_t - Sigma_{t+1}`, and `Sigma_{t+1}`.
pub fn transition_covariances<T: Scalar>(sigma: &SymMatrix<T>, inc: &InfoIncrement<T>) -> Result<(SymMatrix<T>, SymMatrix<T>)> {
    let d = sigma.dim();
    let mut red = Mat::zeros(d, d);
    if !inc.is_zero() {
        for idx in joint_blocks(&[sigma, &inc.hessian, &inc.info]) {
            let step = BlockStep::new(sigma, inc, idx)?;
            scatter(&mut red, &step.idx, step.reduction().as_mat(), T::one());
        }
    }
    let red = SymMatrix::symmetrize(red);
    let next = sigma.sub(&red);
    Ok((red, next))
}

/// One step of the reparameterized dynamics:
/// `Sigma_{t+1}^{-1} = Sigma_t^{-1} + n H I^+ H`, `beta_{t+1} = beta_t + (Sigma_t - Sigma_{t+1})^{1/2} z`.
pub fn simulate_transition<T: Scalar>(state: &PosteriorState<T>, inc: &InfoIncrement<T>, z: &[T]) -> Result<PosteriorState<T>> {
    let d = state.dim();
    if z.len() != d || inc.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "transition noise",
            expected: d,
            found: z.len(),
        });
    }
    let (red, next) = transition_covariances(&state.sigma, inc)?;
    let l = psd_sqrt(&red)?;
    let step = l.matvec(z);
    Ok(PosteriorState {
        beta: state.beta.iter().zip(&step).map(|(&b, &s)| b + s).collect(),
        sigma: next,
        epoch: state.epoch + 1,
    })
}

/// Rolls `state` forward under `plan`, one transition per remaining epoch.
///
/// `H` and `I` are evaluated at the starting mean, so the covariance path does not
/// depend on the draws.
pub fn rollout<T: Scalar>(
    state: &PosteriorState<T>,
    plan: &AllocationPlan<T>,
    design: &Design<T>,
    ctx: &ContextSet<T>,
    horizon: &HorizonSpec,
    z_draws: &[Vec<T>],
) -> Result<Vec<PosteriorState<T>>> {
    if z_draws.len() != plan.epochs.len() {
        return Err(Error::DimensionMismatch {
            what: "rollout draws",
            expected: plan.epochs.len(),
            found: z_draws.len(),
        });
    }
    let mut traj = vec![state.clone()];
    for (alloc, z) in plan.epochs.iter().zip(z_draws) {
        let cur = traj.last().expect("trajectory starts non-empty");
        let t = cur.epoch;
        let n = *horizon.batch_sizes.get(t).ok_or(Error::DimensionMismatch {
            what: "horizon epochs",
            expected: t + 1,
            found: horizon.epochs(),
        })?;
        let inc = InfoIncrement::from_allocation(design, ctx.weights_at(t), alloc, &state.beta, T::from_usize_lossy(n))?;
        let next = simulate_transition(cur, &inc, z)?;
        traj.push(next);
    }
    Ok(traj)
}

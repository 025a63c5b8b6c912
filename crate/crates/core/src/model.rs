//! Reward models: feature maps, loss families, contexts and per-batch estimation.

use crate::allocation::EpochAllocation;
use crate::error::{Error, Result};
use crate::linalg::{dot, pseudo_inverse, Mat, SparseVec, SymMatrix};
use crate::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossFamily {
    SquaredError,
    Logistic,
}

/// Maps a (context, arm) pair to one or more feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap<T> {
    /// `phi = e_a`; ignores the context.
    ArmOnly,
    /// `phi = [x; e_a]`: shared context slopes plus arm intercepts.
    Additive { context_dim: usize },
    /// `phi = e_a (x) x`: separate context slopes per arm.
    Mixed { context_dim: usize },
    /// User supplied rows indexed `[context][arm]`.
    Table {
        dim: usize,
        rows: Vec<Vec<Vec<SparseVec<T>>>>,
    },
    /// Arms are rankers; each shows the `items_per_user` contents with the
    /// largest weighted score `sum_j w_j x_j z_j` and emits `x * z` per item.
    Ranking {
        contents: Vec<Vec<T>>,
        rankers: Vec<Vec<T>>,
        items_per_user: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    pub feature_map: FeatureMap<T>,
    pub loss: LossFamily,
    pub num_arms: usize,
    /// Per-arm measurement variance `s_a^2` used by the squared-error information.
    pub noise_var: Vec<T>,
}

#[inline]
pub fn sigmoid<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(feature_map: FeatureMap<T>, loss: LossFamily, num_arms: usize, noise_var: Vec<T>) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::param("num_arms", "at least one arm"));
        }
        if noise_var.len() != num_arms {
            return Err(Error::DimensionMismatch {
                what: "noise variances",
                expected: num_arms,
                found: noise_var.len(),
            });
        }
        if noise_var.iter().any(|v| !(*v >= T::zero() && v.is_finite())) {
            return Err(Error::param("noise_var", "variances must be finite and non-negative"));
        }
        if let FeatureMap::Ranking { rankers, items_per_user, contents } = &feature_map {
            if rankers.len() != num_arms {
                return Err(Error::DimensionMismatch {
                    what: "rankers",
                    expected: num_arms,
                    found: rankers.len(),
                });
            }
            if *items_per_user == 0 || *items_per_user > contents.len() {
                return Err(Error::param("items_per_user", "between 1 and the number of contents"));
            }
        }
        if let FeatureMap::Table { rows, .. } = &feature_map {
            if rows.iter().any(|r| r.len() != num_arms) {
                return Err(Error::param("table", "every context needs one entry per arm"));
            }
        }
        Ok(ModelSpec {
            feature_map,
            loss,
            num_arms,
            noise_var,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.feature_map {
            FeatureMap::ArmOnly => self.num_arms,
            FeatureMap::Additive { context_dim } => context_dim + self.num_arms,
            FeatureMap::Mixed { context_dim } => context_dim * self.num_arms,
            FeatureMap::Table { dim, .. } => *dim,
            FeatureMap::Ranking { contents, .. } => contents.first().map_or(0, Vec::len),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.loss == LossFamily::SquaredError
    }

    /// Feature rows of `(x, a)` for context index `x` of `ctx`.
    pub fn feature_rows(&self, ctx: &ContextSet<T>, x: usize, a: usize) -> Result<Vec<SparseVec<T>>> {
        let k = self.num_arms;
        if a >= k {
            return Err(Error::param("arm", format!("arm {a} out of range for {k} arms")));
        }
        let xv = ctx.contexts.get(x).ok_or_else(|| Error::param("context", format!("context {x} out of range")))?;
        let check_dim = |p: usize| {
            if xv.len() != p {
                Err(Error::DimensionMismatch {
                    what: "context vector",
                    expected: p,
                    found: xv.len(),
                })
            } else {
                Ok(())
            }
        };
        Ok(match &self.feature_map {
            FeatureMap::ArmOnly => vec![SparseVec {
                idx: vec![a],
                val: vec![T::one()],
            }],
            FeatureMap::Additive { context_dim } => {
                check_dim(*context_dim)?;
                let mut v = xv.clone();
                v.extend((0..k).map(|b| if a == b { T::one() } else { T::zero() }));
                vec![SparseVec::from_dense(&v)]
            }
            FeatureMap::Mixed { context_dim } => {
                check_dim(*context_dim)?;
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for (j, &xj) in xv.iter().enumerate() {
                    if xj != T::zero() {
                        idx.push(a * context_dim + j);
                        val.push(xj);
                    }
                }
                vec![SparseVec { idx, val }]
            }
            FeatureMap::Table { rows, .. } => rows
                .get(x)
                .ok_or_else(|| Error::param("table", format!("no rows for context {x}")))?[a]
                .clone(),
            FeatureMap::Ranking {
                contents,
                rankers,
                items_per_user,
            } => {
                check_dim(contents[0].len())?;
                ranked_items(xv, &rankers[a], contents, *items_per_user)
                    .into_iter()
                    .map(|i| {
                        let v: Vec<T> = xv.iter().zip(&contents[i]).map(|(&p, &q)| p * q).collect();
                        SparseVec::from_dense(&v)
                    })
                    .collect()
            }
        })
    }

    #[inline]
    fn link(&self, u: T) -> T {
        match self.loss {
            LossFamily::SquaredError => u,
            LossFamily::Logistic => sigmoid(u),
        }
    }

    #[inline]
    fn link_deriv(&self, u: T) -> T {
        match self.loss {
            LossFamily::SquaredError => T::one(),
            LossFamily::Logistic => {
                let s = sigmoid(u);
                s * (T::one() - s)
            }
        }
    }

    /// Mean reward of `(x, a)` under `theta`, summed over feature rows.
    pub fn mean_reward(&self, theta: &[T], ctx: &ContextSet<T>, x: usize, a: usize) -> Result<T> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: self.dim(),
                found: theta.len(),
            });
        }
        Ok(self
            .feature_rows(ctx, x, a)?
            .iter()
            .map(|r| self.link(r.dot(theta)))
            .sum())
    }

    /// Precomputes feature rows for every (context, arm) of `ctx`.
    pub fn design(&self, ctx: &ContextSet<T>) -> Result<Design<T>> {
        let k = self.num_arms;
        let mut rows = Vec::with_capacity(ctx.len() * k);
        for x in 0..ctx.len() {
            for a in 0..k {
                let r = self.feature_rows(ctx, x, a)?;
                if let Some(bad) = r.iter().flat_map(|s| s.idx.iter()).find(|&&i| i >= self.dim()) {
                    return Err(Error::param("features", format!("feature index {bad} exceeds dimension")));
                }
                rows.push(r);
            }
        }
        let psi = rows
            .iter()
            .map(|rs: &Vec<SparseVec<T>>| {
                let mut v = vec![T::zero(); self.dim()];
                for r in rs {
                    r.axpy_into(T::one(), &mut v);
                }
                SparseVec::from_dense(&v)
            })
            .collect();
        Ok(Design {
            model: self.clone(),
            num_contexts: ctx.len(),
            rows,
            psi,
        })
    }
}

/// Indices of the `b` contents with the largest score, ties to the lower index.
pub fn ranked_items<T: Scalar>(x: &[T], w: &[T], contents: &[Vec<T>], b: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, T)> = contents
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let s = x.iter().zip(w).zip(z).map(|((&xi, &wi), &zi)| xi * wi * zi).sum::<T>();
            (i, s)
        })
        .collect();
    scored.sort_by(|l, r| r.1.partial_cmp(&l.1).unwrap_or(std::cmp::Ordering::Equal).then(l.0.cmp(&r.0)));
    let mut top: Vec<usize> = scored.into_iter().take(b).map(|(i, _)| i).collect();
    top.sort_unstable();
    top
}

/// Context vectors with per-epoch and post-experiment weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSet<T> {
    pub contexts: Vec<Vec<T>>,
    /// `epoch_weights[t][x]`, one row per epoch.
    pub epoch_weights: Vec<Vec<T>>,
    pub population: Vec<T>,
}

impl<T: Scalar> ContextSet<T> {
    pub fn new(contexts: Vec<Vec<T>>, epoch_weights: Vec<Vec<T>>, population: Vec<T>) -> Result<Self> {
        let set = ContextSet {
            contexts,
            epoch_weights,
            population,
        };
        set.validate()?;
        Ok(set)
    }

    /// A single context used at every epoch.
    pub fn single(x: Vec<T>, epochs: usize) -> Self {
        ContextSet {
            contexts: vec![x],
            epoch_weights: vec![vec![T::one()]; epochs],
            population: vec![T::one()],
        }
    }

    /// `n` contexts with uniform weights at every epoch and in the population.
    pub fn uniform(contexts: Vec<Vec<T>>, epochs: usize) -> Result<Self> {
        let n = contexts.len();
        if n == 0 {
            return Err(Error::InvalidContexts("no contexts".into()));
        }
        let w = vec![T::one() / T::from_usize_lossy(n); n];
        Self::new(contexts, vec![w.clone(); epochs], w)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn num_epochs(&self) -> usize {
        self.epoch_weights.len()
    }

    fn check_weights(&self, w: &[T], what: &str) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::InvalidContexts(format!(
                "{what} has {} weights for {} contexts",
                w.len(),
                self.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::InvalidContexts(format!("{what} has a negative weight")));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0) * T::from_usize_lossy(self.len().max(1)));
        let s: T = w.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::InvalidContexts(format!("{what} sums to {s}")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidContexts("no contexts".into()));
        }
        for (t, w) in self.epoch_weights.iter().enumerate() {
            self.check_weights(w, &format!("epoch {t} weights"))?;
        }
        self.check_weights(&self.population, "population weights")
    }

    /// Checks there is one weight row per epoch of the horizon.
    pub fn validate_horizon(&self, epochs: usize) -> Result<()> {
        if self.num_epochs() != epochs {
            return Err(Error::InvalidContexts(format!(
                "{} epoch weight rows for a horizon of {epochs}",
                self.num_epochs()
            )));
        }
        Ok(())
    }

    /// Weights for epoch `t`, or the population weights at `t = T`.
    pub fn weights_at(&self, t: usize) -> &[T] {
        self.epoch_weights.get(t).unwrap_or(&self.population)
    }
}

/// Feature rows of a model bound to a context set.
#[derive(Clone, Debug)]
pub struct Design<T> {
    pub model: ModelSpec<T>,
    num_contexts: usize,
    rows: Vec<Vec<SparseVec<T>>>,
    psi: Vec<SparseVec<T>>,
}

impl<T: Scalar> Design<T> {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn num_arms(&self) -> usize {
        self.model.num_arms
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    #[inline]
    pub fn rows(&self, x: usize, a: usize) -> &[SparseVec<T>] {
        &self.rows[x * self.model.num_arms + a]
    }

    /// Sum of the feature rows of `(x, a)`; the mean reward is `psi^T theta`
    /// for squared error.
    #[inline]
    pub fn psi(&self, x: usize, a: usize) -> &SparseVec<T> {
        &self.psi[x * self.model.num_arms + a]
    }

    #[inline]
    pub fn mean_reward(&self, theta: &[T], x: usize, a: usize) -> T {
        match self.model.loss {
            LossFamily::SquaredError => self.psi(x, a).dot(theta),
            LossFamily::Logistic => self.rows(x, a).iter().map(|r| sigmoid(r.dot(theta))).sum(),
        }
    }

    /// Adds `w * grad_theta f(theta, x, a)` into `out`.
    pub fn add_mean_reward_grad(&self, theta: &[T], x: usize, a: usize, w: T, out: &mut [T]) {
        match self.model.loss {
            LossFamily::SquaredError => self.psi(x, a).axpy_into(w, out),
            LossFamily::Logistic => {
                for r in self.rows(x, a) {
                    r.axpy_into(w * self.model.link_deriv(r.dot(theta)), out);
                }
            }
        }
    }

    /// Population-weighted mean reward of each arm.
    pub fn arm_means(&self, theta: &[T], weights: &[T]) -> Vec<T> {
        (0..self.num_arms())
            .map(|a| {
                weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != T::zero())
                    .map(|(x, &w)| w * self.mean_reward(theta, x, a))
                    .sum()
            })
            .collect()
    }

    /// Per-(x, a) contributions to `(H, I)` at `theta_ref`, before weighting.
    pub fn pair_information(&self, x: usize, a: usize, theta_ref: &[T]) -> (Mat<T>, Mat<T>) {
        let d = self.dim();
        let mut h = Mat::zeros(d, d);
        let mut i = Mat::zeros(d, d);
        self.add_pair_information(x, a, theta_ref, T::one(), &mut h, &mut i);
        (h, i)
    }

    pub(crate) fn add_pair_information(&self, x: usize, a: usize, theta_ref: &[T], w: T, h: &mut Mat<T>, i: &mut Mat<T>) {
        for r in self.rows(x, a) {
            let (ch, ci) = self.curvatures(a, r.dot(theta_ref));
            r.add_outer_into(w * ch, h);
            r.add_outer_into(w * ci, i);
        }
    }

    /// Hessian and score-variance weights of one feature row with index `u = phi^T theta`.
    #[inline]
    pub(crate) fn curvatures(&self, a: usize, u: T) -> (T, T) {
        match self.model.loss {
            LossFamily::SquaredError => (T::lit(2.0), T::lit(4.0) * self.model.noise_var[a]),
            LossFamily::Logistic => {
                let s = sigmoid(u);
                let v = s * (T::one() - s);
                (v, v)
            }
        }
    }

    /// Population information matrices `(H, I)` of an allocation under context weights.
    pub fn information(&self, weights: &[T], alloc: &EpochAllocation<T>, theta_ref: &[T]) -> Result<(SymMatrix<T>, SymMatrix<T>)> {
        if weights.len() != self.num_contexts {
            return Err(Error::DimensionMismatch {
                what: "context weights",
                expected: self.num_contexts,
                found: weights.len(),
            });
        }
        if alloc.num_arms() != self.num_arms() {
            return Err(Error::DimensionMismatch {
                what: "allocation arms",
                expected: self.num_arms(),
                found: alloc.num_arms(),
            });
        }
        let d = self.dim();
        let mut h = Mat::zeros(d, d);
        let mut i = Mat::zeros(d, d);
        for (x, &mu) in weights.iter().enumerate() {
            if mu == T::zero() {
                continue;
            }
            for a in 0..self.num_arms() {
                let p = alloc.prob(x, a);
                if p != T::zero() {
                    self.add_pair_information(x, a, theta_ref, mu * p, &mut h, &mut i);
                }
            }
        }
        Ok((SymMatrix::symmetrize(h), SymMatrix::symmetrize(i)))
    }
}

/// One experimental unit: its context, assigned arm and one reward per feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T> {
    pub context: usize,
    pub arm: usize,
    pub rewards: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchData<T> {
    pub epoch: usize,
    pub units: Vec<Observation<T>>,
}

impl<T: Scalar> BatchData<T> {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Total reward collected in the batch.
    pub fn total_reward(&self) -> T {
        self.units.iter().flat_map(|u| u.rewards.iter().copied()).sum()
    }
}

/// Per-batch M-estimate with its Hessian and score covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSummary<T> {
    pub theta_hat: Vec<T>,
    /// `H_n`, the average loss Hessian at `theta_hat`.
    pub hessian: SymMatrix<T>,
    /// `I_n`, the average outer product of per-unit scores at `theta_hat`.
    pub info: SymMatrix<T>,
    pub n_units: usize,
    pub epoch: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Scalar> EstimateSummary<T> {
    /// Summary of a batch that carried no information.
    pub fn empty(dim: usize, epoch: usize) -> Self {
        EstimateSummary {
            theta_hat: vec![T::zero(); dim],
            hessian: SymMatrix::zeros(dim),
            info: SymMatrix::zeros(dim),
            n_units: 0,
            epoch,
            converged: true,
            iterations: 0,
        }
    }

    pub fn check_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                what: "logistic fit",
                iterations: self.iterations,
            })
        }
    }
}

const MAX_NEWTON: usize = 50;

/// Fits the model to one batch. A logistic fit that hits the iteration cap is
/// returned at its last iterate with `converged == false`.
pub fn fit_batch<T: Scalar>(design: &Design<T>, data: &BatchData<T>) -> Result<EstimateSummary<T>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = design.dim();
    for u in &data.units {
        if u.context >= design.num_contexts() || u.arm >= design.num_arms() {
            return Err(Error::param("observation", format!("unit ({}, {}) out of range", u.context, u.arm)));
        }
        let nrows = design.rows(u.context, u.arm).len();
        if u.rewards.len() != nrows {
            return Err(Error::DimensionMismatch {
                what: "rewards per unit",
                expected: nrows,
                found: u.rewards.len(),
            });
        }
        if u.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                what: "observed reward",
                scenario: None,
            });
        }
    }
    let n = T::from_usize_lossy(data.len());
    let (theta, converged, iterations) = match design.model.loss {
        LossFamily::SquaredError => {
            let mut g = Mat::zeros(d, d);
            let mut b = vec![T::zero(); d];
            for u in &data.units {
                for (row, &r) in design.rows(u.context, u.arm).iter().zip(&u.rewards) {
                    row.add_outer_into(T::one(), &mut g);
                    row.axpy_into(r, &mut b);
                }
            }
            (pseudo_inverse(&SymMatrix::symmetrize(g)).matvec(&b), true, 1)
        }
        LossFamily::Logistic => logistic_newton(design, data),
    };
    let mut h = Mat::zeros(d, d);
    let mut info = Mat::zeros(d, d);
    let mut score = vec![T::zero(); d];
    for u in &data.units {
        score.iter_mut().for_each(|s| *s = T::zero());
        for (row, &r) in design.rows(u.context, u.arm).iter().zip(&u.rewards) {
            let z = row.dot(&theta);
            let (ch, _) = design.curvatures(u.arm, z);
            row.add_outer_into(ch / n, &mut h);
            let resid = match design.model.loss {
                LossFamily::SquaredError => T::lit(-2.0) * (r - z),
                LossFamily::Logistic => sigmoid(z) - r,
            };
            row.axpy_into(resid, &mut score);
        }
        let sv = SparseVec::from_dense(&score);
        sv.add_outer_into(T::one() / n, &mut info);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "batch estimate",
            scenario: None,
        });
    }
    Ok(EstimateSummary {
        theta_hat: theta,
        hessian: SymMatrix::symmetrize(h),
        info: SymMatrix::symmetrize(info),
        n_units: data.len(),
        epoch: data.epoch,
        converged,
        iterations,
    })
}

fn logistic_loss<T: Scalar>(design: &Design<T>, data: &BatchData<T>, theta: &[T]) -> T {
    let mut l = T::zero();
    for u in &data.units {
        for (row, &y) in design.rows(u.context, u.arm).iter().zip(&u.rewards) {
            let z = row.dot(theta);
            // log(1 + e^z) - y z, evaluated stably
            let softplus = if z > T::zero() { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            l += softplus - y * z;
        }
    }
    l
}

fn logistic_newton<T: Scalar>(design: &Design<T>, data: &BatchData<T>) -> (Vec<T>, bool, usize) {
    let d = design.dim();
    let mut theta = vec![T::zero(); d];
    let mut loss = logistic_loss(design, data, &theta);
    for it in 1..=MAX_NEWTON {
        let mut grad = vec![T::zero(); d];
        let mut hess = Mat::zeros(d, d);
        for u in &data.units {
            for (row, &y) in design.rows(u.context, u.arm).iter().zip(&u.rewards) {
                let s = sigmoid(row.dot(&theta));
                row.axpy_into(s - y, &mut grad);
                row.add_outer_into(s * (T::one() - s), &mut hess);
            }
        }
        let gmax = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
        if gmax <= T::lit(1e-10) * T::one().max(T::from_usize_lossy(data.len())).sqrt() {
            return (theta, true, it - 1);
        }
        let step = pseudo_inverse(&SymMatrix::symmetrize(hess)).matvec(&grad);
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<T> = theta.iter().zip(&step).map(|(&th, &s)| th - t * s).collect();
            let cl = logistic_loss(design, data, &cand);
            if cl <= loss + T::epsilon() * T::lit(64.0) * (T::one() + loss.abs()) {
                let small = dot(&step, &step).sqrt() * t <= T::lit(1e-12) * (T::one() + dot(&theta, &theta).sqrt());
                theta = cand;
                loss = cl;
                accepted = true;
                if small {
                    return (theta, true, it);
                }
                break;
            }
            t *= T::lit(0.5);
        }
        if !accepted {
            return (theta, true, it);
        }
    }
    (theta, false, MAX_NEWTON)
}

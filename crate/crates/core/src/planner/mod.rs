//! Residual horizon optimization: static allocation sequences solved by sample
//! average approximation over fixed normal scenarios, with pathwise gradients.

mod adam;
pub mod qmc;
pub mod tape;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use adam::Adam;

use crate::allocation::{softmax_rows, AllocationPlan, EpochAllocation};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat, SparseVec, UnionFind};
use crate::model::{ContextSet, Design, FeatureMap, LossFamily};
use crate::objectives::{
    apply_coverage, enforce_budget, final_decision, marginal, min_unit_cost, ObjectiveSpec, TerminalEvaluator,
};
use crate::posterior::{HorizonSpec, PosteriorState};
use crate::Scalar;
use tape::{LinearTerm, NodeId, Spectral, Tape};

use serde::{Deserialize, Serialize};

const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct OptimizerConfig<T> {
    pub learning_rate: T,
    pub adam_betas: (T, T),
    pub adam_eps: T,
    pub num_steps: usize,
    /// Number of fixed normal scenarios in the sample average.
    pub num_scenarios: usize,
    pub qmc: bool,
    pub seed: u64,
    /// One allocation row per context; `None` picks per-context rows whenever the
    /// model depends on the context.
    pub per_context: Option<bool>,
}

impl<T: Scalar> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: T::lit(0.1),
            adam_betas: (T::lit(0.9), T::lit(0.999)),
            adam_eps: T::lit(1e-8),
            num_steps: 200,
            num_scenarios: 512,
            qmc: true,
            seed: 0,
            per_context: None,
        }
    }
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero() && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.num_scenarios < 2 {
            return Err(Error::param("num_scenarios", "at least 2"));
        }
        Ok(())
    }
}

/// A planning problem from a posterior at epoch `t` to the end of the horizon.
pub struct PlanningProblem<'a, T> {
    state: &'a PosteriorState<T>,
    design: &'a Design<T>,
    ctx: &'a ContextSet<T>,
    remaining: usize,
    rows: usize,
    k: usize,
    n: Vec<T>,
    blocks: Vec<Vec<usize>>,
    sigma_blocks: Vec<Mat<T>>,
    /// `[epoch][block]` coefficient lists of `H` and `I`.
    h_terms: Vec<Vec<Vec<LinearTerm<T>>>>,
    i_terms: Vec<Vec<Vec<LinearTerm<T>>>>,
    terminal: TerminalEvaluator<'a, T>,
    w_cum: T,
    /// Linear models: `[epoch]` of `(row, arm, sum_x mu(x) psi(x, a))`.
    cum_linear: Vec<Vec<(usize, usize, SparseVec<T>)>>,
    coverage: T,
    budget: Option<(Vec<T>, T, T)>,
}

impl<'a, T: Scalar> PlanningProblem<'a, T> {
    pub fn new(
        state: &'a PosteriorState<T>,
        horizon: &'a HorizonSpec,
        design: &'a Design<T>,
        ctx: &'a ContextSet<T>,
        spec: &'a ObjectiveSpec<T>,
        per_context: Option<bool>,
    ) -> Result<Self> {
        horizon.validate()?;
        ctx.validate_horizon(horizon.epochs())?;
        let k = design.num_arms();
        spec.validate(k)?;
        let d = design.dim();
        if state.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "posterior dimension",
                expected: d,
                found: state.dim(),
            });
        }
        if design.num_contexts() != ctx.len() {
            return Err(Error::DimensionMismatch {
                what: "design contexts",
                expected: ctx.len(),
                found: design.num_contexts(),
            });
        }
        let t0 = state.epoch;
        if t0 >= horizon.epochs() {
            return Err(Error::param("horizon", "no remaining epochs to plan"));
        }
        let remaining = horizon.epochs() - t0;
        let contextual = !matches!(design.model.feature_map, FeatureMap::ArmOnly) && ctx.len() > 1;
        let shared = !per_context.unwrap_or(contextual);
        let rows = if shared { 1 } else { ctx.len() };
        let row_of = |x: usize| if shared { 0 } else { x };
        let n: Vec<T> = (t0..horizon.epochs()).map(|s| T::from_usize_lossy(horizon.batch_sizes[s])).collect();

        let mut uf = UnionFind::new(d);
        for i in 0..d {
            for j in (i + 1)..d {
                if state.sigma[(i, j)] != T::zero() {
                    uf.union(i, j);
                }
            }
        }
        for s in t0..horizon.epochs() {
            for (x, &mu) in ctx.weights_at(s).iter().enumerate() {
                if mu == T::zero() {
                    continue;
                }
                for a in 0..k {
                    for r in design.rows(x, a) {
                        for w in r.idx.windows(2) {
                            uf.union(w[0], w[1]);
                        }
                    }
                }
            }
        }
        let blocks = uf.groups();
        let mut block_of = vec![(0usize, 0usize); d];
        for (b, blk) in blocks.iter().enumerate() {
            for (l, &i) in blk.iter().enumerate() {
                block_of[i] = (b, l);
            }
        }
        let sigma_blocks = blocks.iter().map(|blk| state.sigma.as_mat().submatrix(blk, blk)).collect();

        let mut h_terms = Vec::with_capacity(remaining);
        let mut i_terms = Vec::with_capacity(remaining);
        let mut cum_linear = Vec::with_capacity(remaining);
        for s in t0..horizon.epochs() {
            let mut acc: BTreeMap<(usize, usize, usize), (Mat<T>, Mat<T>)> = BTreeMap::new();
            let mut cum: BTreeMap<(usize, usize), Vec<T>> = BTreeMap::new();
            for (x, &mu) in ctx.weights_at(s).iter().enumerate() {
                if mu == T::zero() {
                    continue;
                }
                for a in 0..k {
                    for r in design.rows(x, a) {
                        if r.nnz() == 0 {
                            continue;
                        }
                        let (b, _) = block_of[r.idx[0]];
                        let nb = blocks[b].len();
                        let (ch, ci) = design.curvatures(a, r.dot(&state.beta));
                        let entry = acc
                            .entry((b, row_of(x), a))
                            .or_insert_with(|| (Mat::zeros(nb, nb), Mat::zeros(nb, nb)));
                        let local = SparseVec {
                            idx: r.idx.iter().map(|&i| block_of[i].1).collect(),
                            val: r.val.clone(),
                        };
                        local.add_outer_into(mu * ch, &mut entry.0);
                        local.add_outer_into(mu * ci, &mut entry.1);
                    }
                    if design.model.loss == LossFamily::SquaredError {
                        let v = cum.entry((row_of(x), a)).or_insert_with(|| vec![T::zero(); d]);
                        design.psi(x, a).axpy_into(mu, v);
                    }
                }
            }
            let mut hs: Vec<Vec<LinearTerm<T>>> = vec![Vec::new(); blocks.len()];
            let mut is: Vec<Vec<LinearTerm<T>>> = vec![Vec::new(); blocks.len()];
            for ((b, row, arm), (mh, mi)) in acc {
                hs[b].push(LinearTerm { row, arm, m: mh });
                is[b].push(LinearTerm { row, arm, m: mi });
            }
            h_terms.push(hs);
            i_terms.push(is);
            cum_linear.push(
                cum.into_iter()
                    .map(|((row, arm), v)| (row, arm, SparseVec::from_dense(&v)))
                    .collect(),
            );
        }
        let budget = spec.budget().map(|(c, b, l)| (c.to_vec(), b, l));
        let coverage = spec.coverage();
        if let Some((cost, bound, _)) = &budget {
            let floor: T = n.iter().map(|&ni| ni * min_unit_cost(cost, coverage)).sum();
            if floor > *bound * (T::one() + T::lit(1e-12)) {
                return Err(Error::InfeasibleConstraint(format!(
                    "remaining budget {bound} below the minimum spend {floor}"
                )));
            }
        }
        Ok(PlanningProblem {
            state,
            design,
            ctx,
            remaining,
            rows,
            k,
            n,
            blocks,
            sigma_blocks,
            h_terms,
            i_terms,
            terminal: TerminalEvaluator::new(design, &ctx.population, spec),
            w_cum: spec.cumulative_weight(),
            cum_linear,
            coverage,
            budget,
        })
    }

    pub fn remaining_epochs(&self) -> usize {
        self.remaining
    }

    /// Shape `(rows, arms)` of each epoch's logits.
    pub fn logits_shape(&self) -> (usize, usize) {
        (self.rows, self.k)
    }

    pub fn scenario_dim(&self) -> usize {
        self.remaining * self.design.dim()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    fn epoch_weights(&self, i: usize) -> &[T] {
        self.ctx.weights_at(self.state.epoch + i)
    }

    fn row_of(&self, x: usize) -> usize {
        if self.rows == 1 {
            0
        } else {
            x
        }
    }

    /// Allocation matrix implied by `logits` after the coverage map.
    pub fn probabilities(&self, logits: &Mat<T>) -> Mat<T> {
        let p = softmax_rows(logits);
        if self.coverage > T::zero() {
            let scale = T::one() - T::from_usize_lossy(self.k) * self.coverage;
            let mut q = p.scale(scale);
            q.as_mut_slice().iter_mut().for_each(|v| *v += self.coverage);
            q
        } else {
            p
        }
    }

    /// Sample-average planning value (minus any budget penalty) and its gradient
    /// with respect to each epoch's logits.
    pub fn value_and_gradient(&self, logits: &[Mat<T>], z: &[Vec<T>]) -> Result<(T, Vec<Mat<T>>)> {
        if logits.len() != self.remaining {
            return Err(Error::DimensionMismatch {
                what: "logit epochs",
                expected: self.remaining,
                found: logits.len(),
            });
        }
        let dim = self.scenario_dim();
        if let Some(bad) = z.iter().find(|row| row.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "scenario draw",
                expected: dim,
                found: bad.len(),
            });
        }
        let mut tape = Tape::new();
        let mut leaves = Vec::with_capacity(self.remaining);
        let mut probs = Vec::with_capacity(self.remaining);
        for l in logits {
            if l.rows() != self.rows || l.cols() != self.k {
                return Err(Error::DimensionMismatch {
                    what: "logit rows",
                    expected: self.rows,
                    found: l.rows(),
                });
            }
            let leaf = tape.leaf(l.clone());
            let sm = tape.softmax_rows(leaf);
            let p = if self.coverage > T::zero() {
                let scale = T::one() - T::from_usize_lossy(self.k) * self.coverage;
                tape.affine(sm, self.coverage, scale)
            } else {
                sm
            };
            leaves.push(leaf);
            probs.push(p);
        }
        let mut sig: Vec<NodeId> = self.sigma_blocks.iter().map(|m| tape.leaf(m.clone())).collect();
        let mut l_nodes: Vec<Vec<Option<NodeId>>> = Vec::with_capacity(self.remaining);
        for i in 0..self.remaining {
            let mut row = Vec::with_capacity(self.blocks.len());
            for b in 0..self.blocks.len() {
                if self.h_terms[i][b].is_empty() {
                    row.push(None);
                    continue;
                }
                let nb = self.blocks[b].len();
                let h = tape.linear(probs[i], &self.h_terms[i][b], nb);
                let info = tape.linear(probs[i], &self.i_terms[i][b], nb);
                let s = tape.spectral(info, Spectral::PinvSqrt);
                let f0 = tape.matmul(h, s);
                let f = tape.scale(f0, self.n[i].sqrt());
                let g = tape.matmul(sig[b], f);
                let ftg = tape.tr_matmul(f, g);
                let a = tape.add_identity(ftg);
                let a_inv = tape.spd_inverse(a)?;
                let ga = tape.matmul(g, a_inv);
                let dmat = tape.matmul_t(ga, g);
                sig[b] = tape.sub(sig[b], dmat);
                row.push(Some(tape.spectral(dmat, Spectral::Sqrt)));
            }
            l_nodes.push(row);
        }
        let l_vals: Vec<Vec<Option<Factor<'_, T>>>> = l_nodes
            .iter()
            .map(|r| r.iter().map(|o| o.map(|id| Factor::new(&tape, id))).collect())
            .collect();
        let p_vals: Vec<&Mat<T>> = probs.iter().map(|&id| tape.value(id)).collect();
        let sc = self.scenarios(&l_vals, &p_vals, z)?;
        let penalty = self
            .budget
            .as_ref()
            .map(|(cost, bound, lam)| self.budget_penalty(&p_vals, cost, *bound, *lam));
        let mut inputs = Vec::new();
        let mut grads = Vec::new();
        for (i, row) in l_nodes.iter().enumerate() {
            for (b, o) in row.iter().enumerate() {
                if let Some(id) = o {
                    inputs.push(*id);
                    grads.push(sc.l_bar[i][b].clone());
                }
            }
        }
        for (i, &p) in probs.iter().enumerate() {
            inputs.push(p);
            grads.push(sc.p_bar[i].clone());
        }
        let value_node = tape.scalar(sc.value, inputs, grads);
        let mut terms = vec![(value_node, T::one())];
        if let Some((pen, pg)) = penalty {
            let pen_node = tape.scalar(pen, probs.clone(), pg);
            terms.push((pen_node, -T::one()));
        }
        let out = tape.weighted_sum(terms);
        let total = tape.value(out)[(0, 0)];
        if !total.is_finite() {
            return Err(Error::NonFinite {
                what: "planning objective",
                scenario: None,
            });
        }
        let bars = tape.backward(out);
        let grads: Vec<Mat<T>> = leaves
            .iter()
            .map(|&l| bars[l].clone().unwrap_or_else(|| Mat::zeros(self.rows, self.k)))
            .collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "planning gradient",
                scenario: None,
            });
        }
        Ok((total, grads))
    }

    fn budget_penalty(&self, p: &[&Mat<T>], cost: &[T], bound: T, lam: T) -> (T, Vec<Mat<T>>) {
        let mut spend = T::zero();
        for (i, pi) in p.iter().enumerate() {
            for (x, &mu) in self.epoch_weights(i).iter().enumerate() {
                let r = self.row_of(x);
                spend += self.n[i] * mu * dot(pi.row(r), cost);
            }
        }
        let over = (spend - bound).max(T::zero());
        let grads = p
            .iter()
            .enumerate()
            .map(|(i, pi)| {
                let mut g = Mat::zeros(pi.rows(), pi.cols());
                if over > T::zero() {
                    for (x, &mu) in self.epoch_weights(i).iter().enumerate() {
                        let r = self.row_of(x);
                        for a in 0..self.k {
                            g[(r, a)] += T::lit(2.0) * lam * over * self.n[i] * mu * cost[a];
                        }
                    }
                }
                g
            })
            .collect();
        (lam * over * over, grads)
    }

    fn scenarios(&self, l: &[Vec<Option<Factor<'_, T>>>], p: &[&Mat<T>], z: &[Vec<T>]) -> Result<ScenarioOut<T>> {
        let d = self.design.dim();
        let r_ep = self.remaining;
        let linear = self.design.model.loss == LossFamily::SquaredError;
        let cum = self.w_cum != T::zero();
        // per-epoch cumulative coefficient c_i(p) for linear models
        let c_lin: Vec<Vec<T>> = if linear && cum {
            (0..r_ep)
                .map(|i| {
                    let mut c = vec![T::zero(); d];
                    for (row, arm, w) in &self.cum_linear[i] {
                        w.axpy_into(p[i][(*row, *arm)], &mut c);
                    }
                    c
                })
                .collect()
        } else {
            Vec::new()
        };
        let chunks: Vec<Result<ScenarioOut<T>>> = z
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, zc)| self.scenario_chunk(ci * CHUNK, zc, l, p, &c_lin))
            .collect();
        let mut total = ScenarioOut::zeros(self, p);
        for c in chunks {
            total.add(&c?);
        }
        let inv = T::one() / T::from_usize_lossy(z.len());
        total.scale(inv);
        if linear && cum {
            for i in 0..r_ep {
                let mean = &total.beta_sum[i];
                total.value += self.w_cum * self.n[i] * dot(&c_lin[i], mean);
                for (row, arm, w) in &self.cum_linear[i] {
                    total.p_bar[i][(*row, *arm)] += self.w_cum * self.n[i] * w.dot(mean);
                }
            }
        }
        Ok(total)
    }

    fn scenario_chunk(
        &self,
        offset: usize,
        zc: &[Vec<T>],
        l: &[Vec<Option<Factor<'_, T>>>],
        p: &[&Mat<T>],
        c_lin: &[Vec<T>],
    ) -> Result<ScenarioOut<T>> {
        let d = self.design.dim();
        let r_ep = self.remaining;
        let linear = self.design.model.loss == LossFamily::SquaredError;
        let cum = self.w_cum != T::zero();
        let mut out = ScenarioOut::zeros(self, p);
        let mut betas: Vec<Vec<T>> = vec![vec![T::zero(); d]; r_ep + 1];
        let mut gbar = vec![T::zero(); d];
        let mut zl = Vec::new();
        let mut coef = Vec::new();
        for (jj, z) in zc.iter().enumerate() {
            betas[0].copy_from_slice(&self.state.beta);
            for i in 0..r_ep {
                let (head, tail) = betas.split_at_mut(i + 1);
                let next = &mut tail[0];
                next.copy_from_slice(&head[i]);
                let zi = &z[i * d..(i + 1) * d];
                for (b, blk) in self.blocks.iter().enumerate() {
                    if let Some(f) = &l[i][b] {
                        zl.clear();
                        zl.extend(blk.iter().map(|&c| zi[c]));
                        f.apply_add(&zl, &mut coef, blk, next);
                    }
                }
            }
            gbar.iter_mut().for_each(|g| *g = T::zero());
            let mut v = self.terminal.eval(&betas[r_ep], Some(&mut gbar));
            if cum && !linear {
                for i in 0..r_ep {
                    v += self.w_cum * self.n[i] * self.nonlinear_cum(i, p[i], &betas[i], None, &mut out.p_bar[i]);
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "scenario value",
                    scenario: Some(offset + jj),
                });
            }
            out.value += v;
            for i in (0..r_ep).rev() {
                let zi = &z[i * d..(i + 1) * d];
                for (b, blk) in self.blocks.iter().enumerate() {
                    if l[i][b].is_some() {
                        let lb = &mut out.l_bar[i][b];
                        for (r, &gi) in blk.iter().enumerate() {
                            let g = gbar[gi];
                            if g == T::zero() {
                                continue;
                            }
                            for (c, &zc_) in blk.iter().enumerate() {
                                lb[(r, c)] += g * zi[zc_];
                            }
                        }
                    }
                }
                if cum {
                    if linear {
                        for (g, &c) in gbar.iter_mut().zip(&c_lin[i]) {
                            *g += self.w_cum * self.n[i] * c;
                        }
                    } else {
                        let mut tmp = Mat::zeros(0, 0);
                        let w = self.w_cum * self.n[i];
                        self.nonlinear_cum(i, p[i], &betas[i], Some((&mut gbar, w)), &mut tmp);
                    }
                }
            }
            if linear && cum {
                for i in 0..r_ep {
                    for (s, &b) in out.beta_sum[i].iter_mut().zip(&betas[i]) {
                        *s += b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Per-unit expected reward at epoch `i`. With `grad`, adds its `beta`
    /// gradient; otherwise accumulates the allocation gradient into `p_bar`.
    fn nonlinear_cum(&self, i: usize, p: &Mat<T>, beta: &[T], grad: Option<(&mut [T], T)>, p_bar: &mut Mat<T>) -> T {
        let mut total = T::zero();
        let scale = self.w_cum * self.n[i];
        match grad {
            Some((g, w)) => {
                for (x, &mu) in self.epoch_weights(i).iter().enumerate() {
                    if mu == T::zero() {
                        continue;
                    }
                    for a in 0..self.k {
                        let pa = p[(self.row_of(x), a)];
                        self.design.add_mean_reward_grad(beta, x, a, w * mu * pa, g);
                    }
                }
            }
            None => {
                for (x, &mu) in self.epoch_weights(i).iter().enumerate() {
                    if mu == T::zero() {
                        continue;
                    }
                    for a in 0..self.k {
                        let f = self.design.mean_reward(beta, x, a);
                        let r = self.row_of(x);
                        total += mu * p[(r, a)] * f;
                        p_bar[(r, a)] += scale * mu * f;
                    }
                }
            }
        }
        total
    }

    /// Deployable plan from logits: softmax, coverage, then budget feasibility.
    pub fn plan_from_logits(&self, logits: &[Mat<T>]) -> Result<AllocationPlan<T>> {
        let t0 = self.state.epoch;
        let mut epochs = Vec::with_capacity(self.remaining);
        let mut left = self.budget.as_ref().map(|b| b.1);
        for (i, l) in logits.iter().enumerate() {
            let raw = EpochAllocation::from_mat_unchecked(t0 + i, softmax_rows(l), self.rows == 1);
            let mut alloc = apply_coverage(&raw, self.coverage)?;
            if let (Some((cost, _, _)), Some(b)) = (&self.budget, left.as_mut()) {
                let reserve: T = self.n[i + 1..].iter().map(|&ni| ni * min_unit_cost(cost, self.coverage)).sum();
                let ni = self.n[i].to_usize().unwrap_or(0);
                alloc = enforce_budget(&alloc, cost, *b - reserve, ni, self.epoch_weights(i), self.coverage)?;
                *b -= self.n[i] * dot(cost, &marginal(&alloc, self.epoch_weights(i)));
            }
            epochs.push(alloc);
        }
        Ok(AllocationPlan { epochs })
    }
}

/// Square-root factor `L = U diag(f) U^T`, applied densely or through its
/// non-null eigenvectors when that is cheaper.
struct Factor<'t, T> {
    dense: &'t Mat<T>,
    low_rank: Option<(Mat<T>, Vec<T>)>,
}

impl<'t, T: Scalar> Factor<'t, T> {
    fn new(tape: &'t Tape<'_, T>, id: NodeId) -> Self {
        let dense = tape.value(id);
        let low_rank = tape
            .spectral_factor(id)
            .filter(|(u, _)| 2 * u.cols() < u.rows())
            .map(|(u, f)| (u.transpose(), f));
        Factor { dense, low_rank }
    }

    /// `out[blk] += L z`.
    fn apply_add(&self, z: &[T], coef: &mut Vec<T>, blk: &[usize], out: &mut [T]) {
        match &self.low_rank {
            Some((ut, f)) => {
                coef.clear();
                coef.extend((0..ut.rows()).map(|k| f[k] * dot(ut.row(k), z)));
                for (k, &c) in coef.iter().enumerate() {
                    for (&gi, &u) in blk.iter().zip(ut.row(k)) {
                        out[gi] += c * u;
                    }
                }
            }
            None => {
                for (r, &gi) in blk.iter().enumerate() {
                    out[gi] += dot(self.dense.row(r), z);
                }
            }
        }
    }
}

struct ScenarioOut<T> {
    value: T,
    l_bar: Vec<Vec<Mat<T>>>,
    p_bar: Vec<Mat<T>>,
    beta_sum: Vec<Vec<T>>,
}

impl<T: Scalar> ScenarioOut<T> {
    fn zeros(prob: &PlanningProblem<'_, T>, p: &[&Mat<T>]) -> Self {
        let d = prob.design.dim();
        ScenarioOut {
            value: T::zero(),
            l_bar: (0..prob.remaining)
                .map(|_| prob.blocks.iter().map(|b| Mat::zeros(b.len(), b.len())).collect())
                .collect(),
            p_bar: p.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            beta_sum: vec![vec![T::zero(); d]; prob.remaining],
        }
    }

    fn add(&mut self, o: &ScenarioOut<T>) {
        self.value += o.value;
        for (a, b) in self.l_bar.iter_mut().flatten().zip(o.l_bar.iter().flatten()) {
            a.add_scaled_assign(b, T::one());
        }
        for (a, b) in self.p_bar.iter_mut().zip(&o.p_bar) {
            a.add_scaled_assign(b, T::one());
        }
        for (a, b) in self.beta_sum.iter_mut().zip(&o.beta_sum) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: T) {
        self.value *= s;
        for m in self.l_bar.iter_mut().flatten() {
            *m = m.scale(s);
        }
        for m in &mut self.p_bar {
            *m = m.scale(s);
        }
        for v in &mut self.beta_sum {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Result of one planning solve.
#[derive(Clone, Debug)]
pub struct SolveOutcome<T> {
    pub plan: AllocationPlan<T>,
    pub logits: Vec<Mat<T>>,
    /// Best sample-average objective found.
    pub objective: T,
    /// Best-so-far objective after each evaluation, starting at uniform logits.
    pub history: Vec<T>,
}

/// Gradient of the sample-average planning value with respect to the logits.
pub fn pathwise_gradient<T: Scalar>(
    logits: &[Mat<T>],
    state: &PosteriorState<T>,
    horizon: &HorizonSpec,
    design: &Design<T>,
    ctx: &ContextSet<T>,
    spec: &ObjectiveSpec<T>,
    z: &[Vec<T>],
) -> Result<(T, Vec<Mat<T>>)> {
    let prob = PlanningProblem::new(state, horizon, design, ctx, spec, None)?;
    prob.value_and_gradient(logits, z)
}

/// Optimizes static logits for the remaining epochs by Adam on the fixed-scenario objective.
pub fn solve_plan<T: Scalar>(
    state: &PosteriorState<T>,
    horizon: &HorizonSpec,
    design: &Design<T>,
    ctx: &ContextSet<T>,
    spec: &ObjectiveSpec<T>,
    opt: &OptimizerConfig<T>,
) -> Result<SolveOutcome<T>> {
    opt.validate()?;
    let prob = PlanningProblem::new(state, horizon, design, ctx, spec, opt.per_context)?;
    let (rows, k) = prob.logits_shape();
    let zero_logits = vec![Mat::zeros(rows, k); prob.remaining_epochs()];
    if k == 1 {
        let plan = prob.plan_from_logits(&zero_logits)?;
        return Ok(SolveOutcome {
            plan,
            logits: zero_logits,
            objective: T::zero(),
            history: vec![],
        });
    }
    let z = qmc::normal_scenarios(opt.num_scenarios, prob.scenario_dim(), opt.seed, opt.qmc)?;
    solve_with_scenarios(&prob, &z, opt)
}

/// Adam over logits on a given scenario set, tracking the best iterate.
pub fn solve_with_scenarios<T: Scalar>(prob: &PlanningProblem<'_, T>, z: &[Vec<T>], opt: &OptimizerConfig<T>) -> Result<SolveOutcome<T>> {
    let (rows, k) = prob.logits_shape();
    let r = prob.remaining_epochs();
    let mut logits = vec![Mat::zeros(rows, k); r];
    let mut adam = Adam::new(r * rows * k, opt.learning_rate, opt.adam_betas, opt.adam_eps);
    let mut best = T::neg_infinity();
    let mut best_logits = logits.clone();
    let mut history = Vec::with_capacity(opt.num_steps + 1);
    let mut flat = vec![T::zero(); r * rows * k];
    let mut gflat = vec![T::zero(); r * rows * k];
    for step in 0..=opt.num_steps {
        let (v, g) = prob.value_and_gradient(&logits, z)?;
        if v > best {
            best = v;
            best_logits.clone_from(&logits);
        }
        history.push(best);
        if step == opt.num_steps {
            break;
        }
        for (i, (l, gi)) in logits.iter().zip(&g).enumerate() {
            let n = rows * k;
            flat[i * n..(i + 1) * n].copy_from_slice(l.as_slice());
            gflat[i * n..(i + 1) * n].copy_from_slice(gi.as_slice());
        }
        adam.step(&mut flat, &gflat);
        for (i, l) in logits.iter_mut().enumerate() {
            let n = rows * k;
            l.as_mut_slice().copy_from_slice(&flat[i * n..(i + 1) * n]);
        }
    }
    let plan = prob.plan_from_logits(&best_logits)?;
    Ok(SolveOutcome {
        plan,
        logits: best_logits,
        objective: best,
        history,
    })
}

/// One step of the residual horizon policy.
#[derive(Clone, Debug)]
pub struct RhoStep<T> {
    /// Allocation to deploy now; the final decision once the horizon is spent.
    pub deploy: EpochAllocation<T>,
    pub plan: AllocationPlan<T>,
    /// Objective with the budget slack advanced past the deployed epoch.
    pub spec: ObjectiveSpec<T>,
    pub objective: T,
}

pub fn rho_policy_step<T: Scalar>(
    state: &PosteriorState<T>,
    horizon: &HorizonSpec,
    design: &Design<T>,
    ctx: &ContextSet<T>,
    spec: &ObjectiveSpec<T>,
    opt: &OptimizerConfig<T>,
) -> Result<RhoStep<T>> {
    if state.epoch >= horizon.epochs() {
        return Ok(RhoStep {
            deploy: final_decision(state, spec, design, ctx),
            plan: AllocationPlan { epochs: vec![] },
            spec: spec.clone(),
            objective: T::zero(),
        });
    }
    let out = solve_plan(state, horizon, design, ctx, spec, opt)?;
    let deploy = out.plan.epochs[0].clone();
    let mut next = spec.clone();
    for c in &mut next.constraints {
        if let crate::objectives::Constraint::Budget { cost, remaining, .. } = c {
            let n = T::from_usize_lossy(horizon.batch_sizes[state.epoch]);
            *remaining -= n * dot(cost, &marginal(&deploy, ctx.weights_at(state.epoch)));
            *remaining = remaining.max(T::zero());
        }
    }
    Ok(RhoStep {
        deploy,
        plan: out.plan,
        spec: next,
        objective: out.objective,
    })
}

#[cfg(test)]
mod tests;

//! Planning objectives, regret accounting, terminal decisions and allocation constraints.

use crate::allocation::{AllocationPlan, EpochAllocation};
use crate::error::{Error, Result};
use crate::linalg::SparseVec;
use crate::model::{ContextSet, Design, LossFamily};
use crate::posterior::{HorizonSpec, PosteriorState};
use crate::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    SimpleRegret,
    CumulativeRegret,
    PolicyRegret,
    TopKSum(usize),
}

impl TermKind {
    pub fn is_terminal(self) -> bool {
        !matches!(self, TermKind::CumulativeRegret)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Term<T> {
    pub kind: TermKind,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub enum Constraint<T> {
    /// Every arm keeps probability at least `epsilon`.
    Coverage { epsilon: T },
    /// Spend `sum_s n_s c^T p_s` over the remaining epochs at most `remaining`.
    Budget {
        cost: Vec<T>,
        remaining: T,
        /// Weight of the quadratic overspend penalty used while optimizing.
        penalty: T,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ObjectiveSpec<T> {
    pub terms: Vec<Term<T>>,
    #[serde(default)]
    pub constraints: Vec<Constraint<T>>,
}

impl<T: Scalar> ObjectiveSpec<T> {
    pub fn simple_regret() -> Self {
        Self::single(TermKind::SimpleRegret)
    }

    pub fn single(kind: TermKind) -> Self {
        ObjectiveSpec {
            terms: vec![Term { kind, weight: T::one() }],
            constraints: vec![],
        }
    }

    /// `w_cum * cumulative + w_terminal * simple`.
    pub fn weighted(w_cum: T, w_terminal: T) -> Self {
        ObjectiveSpec {
            terms: vec![
                Term {
                    kind: TermKind::CumulativeRegret,
                    weight: w_cum,
                },
                Term {
                    kind: TermKind::SimpleRegret,
                    weight: w_terminal,
                },
            ],
            constraints: vec![],
        }
    }

    pub fn with_constraint(mut self, c: Constraint<T>) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn validate(&self, num_arms: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::param("objective", "at least one term"));
        }
        for t in &self.terms {
            if !(t.weight.is_finite() && t.weight >= T::zero()) {
                return Err(Error::param("objective", "weights must be finite and non-negative"));
            }
            if let TermKind::TopKSum(k) = t.kind {
                if k == 0 || k > num_arms {
                    return Err(Error::param("objective", format!("top-k needs 1 <= k <= {num_arms}, got {k}")));
                }
            }
        }
        for c in &self.constraints {
            match c {
                Constraint::Coverage { epsilon } => {
                    if !(*epsilon >= T::zero()) || *epsilon * T::from_usize_lossy(num_arms) > T::one() {
                        return Err(Error::InfeasibleConstraint(format!(
                            "coverage {epsilon} times {num_arms} arms exceeds 1"
                        )));
                    }
                }
                Constraint::Budget { cost, remaining, penalty } => {
                    if cost.len() != num_arms {
                        return Err(Error::DimensionMismatch {
                            what: "budget costs",
                            expected: num_arms,
                            found: cost.len(),
                        });
                    }
                    if !(*remaining >= T::zero()) || !(*penalty >= T::zero()) {
                        return Err(Error::param("budget", "bound and penalty must be non-negative"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn coverage(&self) -> T {
        self.constraints
            .iter()
            .map(|c| match c {
                Constraint::Coverage { epsilon } => *epsilon,
                _ => T::zero(),
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn budget(&self) -> Option<(&[T], T, T)> {
        self.constraints.iter().find_map(|c| match c {
            Constraint::Budget { cost, remaining, penalty } => Some((cost.as_slice(), *remaining, *penalty)),
            _ => None,
        })
    }

    pub fn has_cumulative(&self) -> bool {
        self.terms.iter().any(|t| t.kind == TermKind::CumulativeRegret && t.weight != T::zero())
    }

    /// Terminal decision rule: the first terminal term, else simple regret.
    pub fn decision_kind(&self) -> TermKind {
        self.terms
            .iter()
            .map(|t| t.kind)
            .find(|k| k.is_terminal())
            .unwrap_or(TermKind::SimpleRegret)
    }

    pub fn cumulative_weight(&self) -> T {
        self.terms
            .iter()
            .filter(|t| t.kind == TermKind::CumulativeRegret)
            .map(|t| t.weight)
            .sum()
    }
}

/// Index of the maximum, ties to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ties to lower indices, in descending value order.
pub fn top_k_indices<T: Scalar>(v: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn top_k_sum<T: Scalar>(v: &[T], k: usize) -> T {
    top_k_indices(v, k).into_iter().map(|i| v[i]).sum()
}

/// Evaluates terminal terms and their gradients in the posterior mean.
pub struct TerminalEvaluator<'a, T> {
    design: &'a Design<T>,
    weights: &'a [T],
    terms: Vec<Term<T>>,
    /// `c_a = sum_x mu(x) psi(x, a)` for linear models.
    arm_features: Option<Vec<SparseVec<T>>>,
}

impl<'a, T: Scalar> TerminalEvaluator<'a, T> {
    pub fn new(design: &'a Design<T>, weights: &'a [T], spec: &ObjectiveSpec<T>) -> Self {
        let terms: Vec<Term<T>> = spec
            .terms
            .iter()
            .filter(|t| t.kind.is_terminal() && t.weight != T::zero())
            .copied()
            .collect();
        let arm_features = (design.model.loss == LossFamily::SquaredError).then(|| {
            (0..design.num_arms())
                .map(|a| {
                    let mut v = vec![T::zero(); design.dim()];
                    for (x, &w) in weights.iter().enumerate() {
                        if w != T::zero() {
                            design.psi(x, a).axpy_into(w, &mut v);
                        }
                    }
                    SparseVec::from_dense(&v)
                })
                .collect()
        });
        TerminalEvaluator {
            design,
            weights,
            terms,
            arm_features,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn arm_means(&self, beta: &[T]) -> Vec<T> {
        match &self.arm_features {
            Some(c) => c.iter().map(|ca| ca.dot(beta)).collect(),
            None => self.design.arm_means(beta, self.weights),
        }
    }

    fn add_arm_grad(&self, beta: &[T], a: usize, w: T, grad: &mut [T]) {
        match &self.arm_features {
            Some(c) => c[a].axpy_into(w, grad),
            None => {
                for (x, &mu) in self.weights.iter().enumerate() {
                    if mu != T::zero() {
                        self.design.add_mean_reward_grad(beta, x, a, w * mu, grad);
                    }
                }
            }
        }
    }

    /// Weighted sum of terminal terms; adds the (active-index) gradient into `grad`.
    pub fn eval(&self, beta: &[T], mut grad: Option<&mut [T]>) -> T {
        let mut total = T::zero();
        let needs_arm_means = self
            .terms
            .iter()
            .any(|t| matches!(t.kind, TermKind::SimpleRegret | TermKind::TopKSum(_)));
        let rbar = if needs_arm_means { self.arm_means(beta) } else { Vec::new() };
        for term in &self.terms {
            match term.kind {
                TermKind::SimpleRegret => {
                    let a = argmax(&rbar);
                    total += term.weight * rbar[a];
                    if let Some(g) = grad.as_deref_mut() {
                        self.add_arm_grad(beta, a, term.weight, g);
                    }
                }
                TermKind::TopKSum(k) => {
                    for a in top_k_indices(&rbar, k) {
                        total += term.weight * rbar[a];
                        if let Some(g) = grad.as_deref_mut() {
                            self.add_arm_grad(beta, a, term.weight, g);
                        }
                    }
                }
                TermKind::PolicyRegret => {
                    for (x, &mu) in self.weights.iter().enumerate() {
                        if mu == T::zero() {
                            continue;
                        }
                        let f: Vec<T> = (0..self.design.num_arms()).map(|a| self.design.mean_reward(beta, x, a)).collect();
                        let a = argmax(&f);
                        total += term.weight * mu * f[a];
                        if let Some(g) = grad.as_deref_mut() {
                            self.design.add_mean_reward_grad(beta, x, a, term.weight * mu, g);
                        }
                    }
                }
                TermKind::CumulativeRegret => {}
            }
        }
        total
    }
}

/// Expected within-epoch reward `sum_x mu(x) sum_a p(a|x) f(beta, x, a)` per unit.
pub fn epoch_reward<T: Scalar>(design: &Design<T>, weights: &[T], alloc: &EpochAllocation<T>, beta: &[T]) -> T {
    let mut r = T::zero();
    for (x, &mu) in weights.iter().enumerate() {
        if mu == T::zero() {
            continue;
        }
        for a in 0..design.num_arms() {
            let p = alloc.prob(x, a);
            if p != T::zero() {
                r += mu * p * design.mean_reward(beta, x, a);
            }
        }
    }
    r
}

/// Planning value of a rollout trajectory `traj[0..=R]` under `plan` (R epochs).
pub fn planning_value<T: Scalar>(
    traj: &[PosteriorState<T>],
    plan: &AllocationPlan<T>,
    spec: &ObjectiveSpec<T>,
    design: &Design<T>,
    ctx: &ContextSet<T>,
    horizon: &HorizonSpec,
) -> Result<T> {
    if traj.len() != plan.epochs.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "trajectory length",
            expected: plan.epochs.len() + 1,
            found: traj.len(),
        });
    }
    let d = design.dim();
    if let Some(bad) = traj.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch {
            what: "trajectory state",
            expected: d,
            found: bad.dim(),
        });
    }
    let w_cum = spec.cumulative_weight();
    let mut value = T::zero();
    if w_cum != T::zero() {
        for (state, alloc) in traj.iter().zip(&plan.epochs) {
            let n = T::from_usize_lossy(horizon.batch_sizes[state.epoch]);
            value += w_cum * n * epoch_reward(design, ctx.weights_at(state.epoch), alloc, &state.beta);
        }
    }
    let terminal = TerminalEvaluator::new(design, &ctx.population, spec);
    value += terminal.eval(&traj[traj.len() - 1].beta, None);
    Ok(value)
}

/// Terminal allocation from the final posterior mean.
pub fn final_decision<T: Scalar>(state: &PosteriorState<T>, spec: &ObjectiveSpec<T>, design: &Design<T>, ctx: &ContextSet<T>) -> EpochAllocation<T> {
    let k = design.num_arms();
    match spec.decision_kind() {
        TermKind::PolicyRegret => {
            let rows = (0..ctx.len())
                .map(|x| {
                    let f: Vec<T> = (0..k).map(|a| design.mean_reward(&state.beta, x, a)).collect();
                    let best = argmax(&f);
                    (0..k).map(|a| if a == best { T::one() } else { T::zero() }).collect()
                })
                .collect();
            EpochAllocation::new(state.epoch, rows, false).expect("point masses are valid rows")
        }
        TermKind::TopKSum(m) => {
            let rbar = design.arm_means(&state.beta, &ctx.population);
            let chosen = top_k_indices(&rbar, m);
            let w = T::one() / T::from_usize_lossy(m);
            let row = (0..k).map(|a| if chosen.contains(&a) { w } else { T::zero() }).collect();
            EpochAllocation::shared(state.epoch, row).expect("uniform over k arms is valid")
        }
        _ => {
            let rbar = design.arm_means(&state.beta, &ctx.population);
            EpochAllocation::point_mass(state.epoch, k, argmax(&rbar))
        }
    }
}

/// Ground-truth regrets of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegretReport<T> {
    pub simple: T,
    pub cumulative: T,
    pub policy: T,
    pub topk: Option<T>,
}

/// Regrets under the true parameter with expected within-epoch regret of each
/// epoch allocation and the final decision scored on the population.
pub fn realized_regret<T: Scalar>(
    truth: &Design<T>,
    theta_star: &[T],
    ctx: &ContextSet<T>,
    horizon: &HorizonSpec,
    epochs: &[EpochAllocation<T>],
    final_alloc: &EpochAllocation<T>,
    topk: Option<usize>,
) -> RegretReport<T> {
    let k = truth.num_arms();
    let rbar = truth.arm_means(theta_star, &ctx.population);
    let best = rbar[argmax(&rbar)];
    let mut chosen = T::zero();
    let mut policy = T::zero();
    for (x, &mu) in ctx.population.iter().enumerate() {
        if mu == T::zero() {
            continue;
        }
        let f: Vec<T> = (0..k).map(|a| truth.mean_reward(theta_star, x, a)).collect();
        let got: T = (0..k).map(|a| final_alloc.prob(x, a) * f[a]).sum();
        chosen += mu * got;
        policy += mu * (f[argmax(&f)] - got);
    }
    let mut cumulative = T::zero();
    for alloc in epochs {
        let t = alloc.epoch;
        let n = T::from_usize_lossy(horizon.batch_sizes[t]);
        for (x, &mu) in ctx.weights_at(t).iter().enumerate() {
            if mu == T::zero() {
                continue;
            }
            let f: Vec<T> = (0..k).map(|a| truth.mean_reward(theta_star, x, a)).collect();
            let fmax = f[argmax(&f)];
            let got: T = (0..k).map(|a| alloc.prob(x, a) * f[a]).sum();
            cumulative += n * mu * (fmax - got);
        }
    }
    let topk = topk.map(|m| {
        let chosen_sum = T::from_usize_lossy(m) * chosen;
        top_k_sum(&rbar, m) - chosen_sum
    });
    RegretReport {
        simple: best - chosen,
        cumulative,
        policy,
        topk,
    }
}

/// Coverage map `p <- eps + (1 - K eps) p` on every row.
pub fn apply_coverage<T: Scalar>(alloc: &EpochAllocation<T>, epsilon: T) -> Result<EpochAllocation<T>> {
    let k = alloc.num_arms();
    let scale = T::one() - T::from_usize_lossy(k) * epsilon;
    if scale < T::zero() {
        return Err(Error::InfeasibleConstraint(format!("coverage {epsilon} with {k} arms")));
    }
    if epsilon == T::zero() {
        return Ok(alloc.clone());
    }
    let mut probs = alloc.probs().clone();
    for v in probs.as_mut_slice() {
        *v = epsilon + scale * *v;
    }
    Ok(EpochAllocation::from_mat_unchecked(alloc.epoch, probs, alloc.is_shared()))
}

/// Average arm probabilities under context weights.
pub fn marginal<T: Scalar>(alloc: &EpochAllocation<T>, weights: &[T]) -> Vec<T> {
    (0..alloc.num_arms())
        .map(|a| weights.iter().enumerate().map(|(x, &w)| w * alloc.prob(x, a)).sum())
        .collect()
}

/// Applies coverage, then scores budget overspend of this epoch as
/// `penalty * max(0, n c^T p - B)^2`. Returns the allocation and the penalty value.
pub fn apply_constraints<T: Scalar>(
    raw: &EpochAllocation<T>,
    constraints: &[Constraint<T>],
    n: usize,
    weights: &[T],
) -> Result<(EpochAllocation<T>, T)> {
    let mut alloc = raw.clone();
    let mut penalty = T::zero();
    for c in constraints {
        if let Constraint::Coverage { epsilon } = c {
            alloc = apply_coverage(&alloc, *epsilon)?;
        }
    }
    for c in constraints {
        if let Constraint::Budget { cost, remaining, penalty: lam } = c {
            let spend = T::from_usize_lossy(n) * crate::linalg::dot(cost, &marginal(&alloc, weights));
            let over = (spend - *remaining).max(T::zero());
            penalty += *lam * over * over;
        }
    }
    Ok((alloc, penalty))
}

/// Lowest per-unit spend achievable under the coverage floor.
pub fn min_unit_cost<T: Scalar>(cost: &[T], epsilon: T) -> T {
    let k = T::from_usize_lossy(cost.len());
    let cmin = cost.iter().fold(T::infinity(), |m, &c| m.min(c));
    let csum: T = cost.iter().copied().sum();
    epsilon * csum + (T::one() - k * epsilon) * cmin
}

/// Mixes `alloc` toward the cheapest arm just enough that `n c^T p <= bound`.
pub fn enforce_budget<T: Scalar>(alloc: &EpochAllocation<T>, cost: &[T], bound: T, n: usize, weights: &[T], epsilon: T) -> Result<EpochAllocation<T>> {
    let nn = T::from_usize_lossy(n);
    let spend = nn * crate::linalg::dot(cost, &marginal(alloc, weights));
    if spend <= bound {
        return Ok(alloc.clone());
    }
    let floor = nn * min_unit_cost(cost, epsilon);
    if floor > bound * (T::one() + T::lit(1e-12)) {
        return Err(Error::InfeasibleConstraint(format!(
            "remaining budget {bound} below the minimum spend {floor}"
        )));
    }
    let cheapest = argmax(&cost.iter().map(|&c| -c).collect::<Vec<T>>());
    let k = cost.len();
    let target_row: Vec<T> = (0..k)
        .map(|a| {
            let base = if a == cheapest { T::one() } else { T::zero() };
            epsilon + (T::one() - T::from_usize_lossy(k) * epsilon) * base
        })
        .collect();
    // spend is affine in the mixing weight
    let alpha = ((spend - bound) / (spend - floor)).min(T::one()).max(T::zero());
    let mut probs = alloc.probs().clone();
    for r in 0..probs.rows() {
        for (a, v) in probs.row_mut(r).iter_mut().enumerate() {
            *v = (T::one() - alpha) * *v + alpha * target_row[a];
        }
    }
    Ok(EpochAllocation::from_mat_unchecked(alloc.epoch, probs, alloc.is_shared()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::model::{FeatureMap, ModelSpec};
    use proptest::prelude::*;

    fn arm_design(k: usize) -> (Design<f64>, ContextSet<f64>) {
        let model = ModelSpec::new(FeatureMap::ArmOnly, LossFamily::SquaredError, k, vec![1.0; k]).unwrap();
        let ctx = ContextSet::single(vec![], 2);
        (model.design(&ctx).unwrap(), ctx)
    }

    fn state(beta: Vec<f64>, epoch: usize) -> PosteriorState<f64> {
        let d = beta.len();
        PosteriorState::new(beta, SymMatrix::identity(d), epoch).unwrap()
    }

    #[test]
    fn simple_regret_value_and_choice() {
        let (design, ctx) = arm_design(2);
        let spec = ObjectiveSpec::simple_regret();
        let s = state(vec![1.0, 2.0], 2);
        let v = planning_value(&[s.clone()], &AllocationPlan { epochs: vec![] }, &spec, &design, &ctx, &HorizonSpec::constant(2, 10)).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(final_decision(&s, &spec, &design, &ctx).row(0), &[0.0, 1.0]);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_sum(&[3.0, 1.0, 2.0], 2), 5.0);
        let (design, ctx) = arm_design(3);
        let spec = ObjectiveSpec::single(TermKind::TopKSum(3));
        let d = final_decision(&state(vec![3.0, 1.0, 2.0], 2), &spec, &design, &ctx);
        assert!(d.row(0).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let (design, ctx) = arm_design(3);
        let d = final_decision(&state(vec![1.0, 2.0, 2.0], 2), &ObjectiveSpec::simple_regret(), &design, &ctx);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.0]);
        let (design1, ctx1) = arm_design(1);
        let d1 = final_decision(&state(vec![-4.0], 2), &ObjectiveSpec::simple_regret(), &design1, &ctx1);
        assert_eq!(d1.row(0), &[1.0]);
    }

    #[test]
    fn composite_equals_sum_of_terms() {
        let (design, ctx) = arm_design(2);
        let horizon = HorizonSpec::constant(2, 250);
        let traj = vec![state(vec![0.0, 0.5], 0), state(vec![0.3, 0.1], 1), state(vec![0.2, 0.9], 2)];
        let plan = AllocationPlan {
            epochs: vec![
                EpochAllocation::shared(0, vec![0.3, 0.7]).unwrap(),
                EpochAllocation::shared(1, vec![0.6, 0.4]).unwrap(),
            ],
        };
        let both = planning_value(&traj, &plan, &ObjectiveSpec::weighted(500.0, 500.0), &design, &ctx, &horizon).unwrap();
        let cum = planning_value(&traj, &plan, &ObjectiveSpec::single(TermKind::CumulativeRegret), &design, &ctx, &horizon).unwrap();
        let term = planning_value(&traj, &plan, &ObjectiveSpec::simple_regret(), &design, &ctx, &horizon).unwrap();
        // cumulative by hand: 250 (0.7 * 0.5) + 250 (0.6 * 0.3 + 0.4 * 0.1)
        assert!((cum - (250.0 * 0.35 + 250.0 * 0.22)).abs() < 1e-12);
        assert_eq!(term, 0.9);
        assert!((both - (500.0 * cum + 500.0 * term)).abs() < 1e-9);
    }

    #[test]
    fn realized_regret_uniform_example() {
        let (design, ctx) = arm_design(2);
        let horizon = HorizonSpec::constant(2, 100);
        let epochs: Vec<_> = (0..2).map(|t| EpochAllocation::uniform(t, 2)).collect();
        let fin = EpochAllocation::point_mass(2, 2, 1);
        let r = realized_regret(&design, &[0.0, 1.0], &ctx, &horizon, &epochs, &fin, Some(1));
        assert_eq!(r.cumulative, 100.0);
        assert_eq!(r.simple, 0.0);
        assert_eq!(r.policy, 0.0);
        assert_eq!(r.topk, Some(0.0));
    }

    #[test]
    fn coverage_example_and_identity() {
        let a = EpochAllocation::shared(0, vec![1.0, 0.0, 0.0]).unwrap();
        let (c, pen) = apply_constraints(&a, &[Constraint::Coverage { epsilon: 0.1 }], 10, &[1.0]).unwrap();
        for (p, e) in c.row(0).iter().zip([0.8f64, 0.1, 0.1]) {
            assert!((p - e).abs() < 1e-15);
        }
        assert_eq!(pen, 0.0);
        let (same, _) = apply_constraints(&a, &[], 10, &[1.0]).unwrap();
        assert_eq!(same, a);
        assert!(apply_coverage(&a, 0.4).is_err());
    }

    #[test]
    fn binding_budget_has_zero_penalty() {
        let a = EpochAllocation::uniform(0, 4);
        let budget = Constraint::Budget {
            cost: vec![2.0; 4],
            remaining: 200.0,
            penalty: 1.0,
        };
        let (_, pen) = apply_constraints(&a, &[budget], 100, &[1.0]).unwrap();
        assert_eq!(pen, 0.0);
    }

    #[test]
    fn enforce_budget_scales_toward_cheapest() {
        let a = EpochAllocation::shared(0, vec![0.0, 1.0]).unwrap();
        let fixed = enforce_budget(&a, &[1.0, 3.0], 200.0, 100, &[1.0], 0.0).unwrap();
        let spend: f64 = 100.0 * (fixed.row(0)[0] * 1.0 + fixed.row(0)[1] * 3.0);
        assert!((spend - 200.0).abs() < 1e-9);
        assert!(enforce_budget(&a, &[1.0, 3.0], 50.0, 100, &[1.0], 0.0).is_err());
    }

    #[test]
    fn decision_is_shift_invariant() {
        let (design, ctx) = arm_design(3);
        let spec = ObjectiveSpec::simple_regret();
        let d0 = final_decision(&state(vec![0.1, 0.4, -0.2], 2), &spec, &design, &ctx);
        let d1 = final_decision(&state(vec![5.1, 5.4, 4.8], 2), &spec, &design, &ctx);
        assert_eq!(d0, d1);
    }

    proptest! {
        #[test]
        fn top_k_sum_is_best_subset(v in proptest::collection::vec(-5.0f64..5.0, 1..8), kk in 1usize..8) {
            let k = kk.min(v.len());
            let n = v.len();
            let mut best = f64::NEG_INFINITY;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize == k {
                    let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| v[i]).sum();
                    best = best.max(s);
                }
            }
            prop_assert!((top_k_sum(&v, k) - best).abs() < 1e-12);
        }

        #[test]
        fn coverage_keeps_simplex_and_order(p in proptest::collection::vec(0.0f64..1.0, 2..6), eps in 0.0f64..0.15) {
            let s: f64 = p.iter().sum::<f64>() + 1e-9;
            let row: Vec<f64> = p.iter().map(|x| (x + 1e-9 / p.len() as f64) / s).collect();
            let k = row.len();
            prop_assume!(eps * k as f64 <= 1.0);
            let a = EpochAllocation::shared(0, row.clone()).unwrap();
            let c = apply_coverage(&a, eps).unwrap();
            let out = c.row(0);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k {
                prop_assert!(out[i] >= eps - 1e-15);
                for j in 0..k {
                    if row[i] <= row[j] {
                        prop_assert!(out[i] <= out[j] + 1e-15);
                    }
                }
            }
        }
    }
}

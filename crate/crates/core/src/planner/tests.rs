use super::*;
use crate::linalg::SymMatrix;
use crate::model::ModelSpec;
use crate::objectives::{Constraint, TermKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arm_only(k: usize, loss: LossFamily) -> (Design<f64>, ContextSet<f64>, usize) {
    let t = 4;
    let ctx = ContextSet::single(vec![], t);
    let model = ModelSpec::<f64>::new(FeatureMap::ArmOnly, loss, k, vec![1.0; k]).unwrap();
    (model.design(&ctx).unwrap(), ctx, t)
}

fn random_prior(d: usize, seed: u64) -> PosteriorState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Mat::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
    let mut s = SymMatrix::symmetrize(a.matmul_tr(&a));
    for i in 0..d {
        s = s.add(&SymMatrix::from_diag(&{
            let mut v = vec![0.0; d];
            v[i] = 0.3;
            v
        }));
    }
    let beta = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    PosteriorState::new(beta, s, 0).unwrap()
}

fn random_logits(r: usize, rows: usize, k: usize, seed: u64) -> Vec<Mat<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..r).map(|_| Mat::from_fn(rows, k, |_, _| rng.random_range(-1.0..1.0))).collect()
}

fn fd_check(design: &Design<f64>, ctx: &ContextSet<f64>, horizon: &HorizonSpec, spec: &ObjectiveSpec<f64>, seed: u64) {
    let state = random_prior(design.dim(), seed);
    let prob = PlanningProblem::new(&state, horizon, design, ctx, spec, None).unwrap();
    let (rows, k) = prob.logits_shape();
    let z = qmc::normal_scenarios(64, prob.scenario_dim(), seed, true).unwrap();
    let logits = random_logits(prob.remaining_epochs(), rows, k, seed + 1);
    let (_, g) = prob.value_and_gradient(&logits, &z).unwrap();
    let h = 1e-5;
    let mut num = Vec::new();
    let mut ana = Vec::new();
    for i in 0..logits.len() {
        for r in 0..rows {
            for a in 0..k {
                let mut up = logits.clone();
                up[i][(r, a)] += h;
                let mut dn = logits.clone();
                dn[i][(r, a)] -= h;
                let fu = prob.value_and_gradient(&up, &z).unwrap().0;
                let fd = prob.value_and_gradient(&dn, &z).unwrap().0;
                num.push((fu - fd) / (2.0 * h));
                ana.push(g[i][(r, a)]);
            }
        }
    }
    let err: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(scale > 1e-8, "degenerate gradient");
    assert!(err / scale < 1e-4, "relative error {} ({:?} vs {:?})", err / scale, ana, num);
}

#[test]
fn gradient_matches_finite_differences_simple_regret() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    for seed in 0..3 {
        fd_check(&design, &ctx, &horizon, &ObjectiveSpec::simple_regret(), seed);
    }
}

#[test]
fn gradient_matches_finite_differences_weighted() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let spec = ObjectiveSpec::weighted(1.0, 10.0).with_constraint(Constraint::Coverage { epsilon: 0.02 });
    fd_check(&design, &ctx, &horizon, &spec, 7);
}

#[test]
fn gradient_matches_finite_differences_logistic() {
    let (design, ctx, t) = arm_only(3, LossFamily::Logistic);
    let horizon = HorizonSpec::constant(t, 10);
    fd_check(&design, &ctx, &horizon, &ObjectiveSpec::weighted(0.5, 10.0), 11);
}

#[test]
fn gradient_matches_finite_differences_contextual() {
    let contexts = vec![vec![1.0, 0.0], vec![0.3, 1.0]];
    let ctx = ContextSet::uniform(contexts, 3).unwrap();
    let model = ModelSpec::<f64>::new(FeatureMap::Mixed { context_dim: 2 }, LossFamily::SquaredError, 2, vec![1.0; 2]).unwrap();
    let design = model.design(&ctx).unwrap();
    let horizon = HorizonSpec::constant(3, 20);
    fd_check(&design, &ctx, &horizon, &ObjectiveSpec::weighted(1.0, 20.0), 3);
}

#[test]
fn gradient_matches_finite_differences_top_k_with_budget() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let spec = ObjectiveSpec::single(TermKind::TopKSum(2)).with_constraint(Constraint::Budget {
        cost: vec![1.0, 2.0, 3.0],
        remaining: 60.0,
        penalty: 0.01,
    });
    fd_check(&design, &ctx, &horizon, &spec, 5);
}

#[test]
fn constant_objective_has_zero_gradient() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let state = random_prior(3, 1);
    let spec = ObjectiveSpec::weighted(0.0, 0.0);
    let logits = random_logits(t, 1, 3, 2);
    let z = qmc::normal_scenarios(16, 3 * t, 0, true).unwrap();
    let (_, g) = pathwise_gradient(&logits, &state, &horizon, &design, &ctx, &spec, &z).unwrap();
    assert!(g.iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
}

#[test]
fn gradient_is_orthogonal_to_logit_shifts() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let state = random_prior(3, 4);
    let logits = random_logits(t, 1, 3, 9);
    let z = qmc::normal_scenarios(32, 3 * t, 0, true).unwrap();
    let spec = ObjectiveSpec::weighted(1.0, 10.0);
    let (_, g) = pathwise_gradient(&logits, &state, &horizon, &design, &ctx, &spec, &z).unwrap();
    for m in &g {
        let s: f64 = m.as_slice().iter().sum();
        assert!(s.abs() < 1e-10, "{s}");
    }
}

#[test]
fn single_arm_plan_is_trivial() {
    let (design, ctx, t) = arm_only(1, LossFamily::SquaredError);
    let state = PosteriorState::isotropic_prior(1, 1.0).unwrap();
    let out = solve_plan(
        &state,
        &HorizonSpec::constant(t, 5),
        &design,
        &ctx,
        &ObjectiveSpec::simple_regret(),
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.plan.epochs.len(), t);
    assert!(out.plan.epochs.iter().all(|e| e.prob(0, 0) == 1.0));
}

#[test]
fn symmetric_two_arm_plan_is_balanced() {
    let (design, _, _) = arm_only(2, LossFamily::SquaredError);
    let state = PosteriorState::isotropic_prior(2, 1.0).unwrap();
    let spec = ObjectiveSpec::simple_regret();
    let opt = OptimizerConfig::default();
    let ctx = ContextSet::single(vec![], 1);
    let out = solve_plan(&state, &HorizonSpec::constant(1, 10), &design, &ctx, &spec, &opt).unwrap();
    let p = out.plan.epochs[0].row(0);
    assert!((p[0] - 0.5).abs() <= 0.05, "{p:?}");

    // Over several epochs only the per-arm totals are identified.
    let ctx = ContextSet::single(vec![], 4);
    let out = solve_plan(&state, &HorizonSpec::constant(4, 10), &design, &ctx, &spec, &opt).unwrap();
    let mean: f64 = out.plan.epochs.iter().map(|e| e.prob(0, 0)).sum::<f64>() / 4.0;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn degenerate_posterior_recovers_greedy() {
    let (design, _, _) = arm_only(3, LossFamily::SquaredError);
    let state = PosteriorState::new(vec![0.1, 0.4, -0.2], SymMatrix::zeros(3), 0).unwrap();
    let spec = ObjectiveSpec::single(TermKind::CumulativeRegret).with_constraint(Constraint::Coverage { epsilon: 0.01 });
    let ctx = ContextSet::single(vec![], 1);
    let out = solve_plan(&state, &HorizonSpec::constant(1, 10), &design, &ctx, &spec, &OptimizerConfig::default()).unwrap();
    let p = out.plan.epochs[0].row(0);
    // softmax logits only reach the vertex asymptotically
    assert!(p[1] > 0.975, "{p:?}");
    assert!(p.iter().all(|&v| v >= 0.01 - 1e-12));
}

#[test]
fn repeated_evaluations_are_bit_identical() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let state = random_prior(3, 2);
    let spec = ObjectiveSpec::weighted(1.0, 10.0);
    let prob = PlanningProblem::new(&state, &horizon, &design, &ctx, &spec, None).unwrap();
    let z = qmc::normal_scenarios(100, prob.scenario_dim(), 3, true).unwrap();
    let logits = random_logits(t, 1, 3, 1);
    let a = prob.value_and_gradient(&logits, &z).unwrap();
    let b = prob.value_and_gradient(&logits, &z).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn best_so_far_is_monotone_and_solves_are_deterministic() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let horizon = HorizonSpec::constant(t, 10);
    let state = random_prior(3, 6);
    let spec = ObjectiveSpec::simple_regret();
    let opt = OptimizerConfig {
        num_steps: 40,
        num_scenarios: 64,
        ..OptimizerConfig::default()
    };
    let a = solve_plan(&state, &horizon, &design, &ctx, &spec, &opt).unwrap();
    assert!(a.history.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(a.objective, *a.history.last().unwrap());
    let b = solve_plan(&state, &horizon, &design, &ctx, &spec, &opt).unwrap();
    assert_eq!(a.logits, b.logits);
}

#[test]
fn terminal_step_returns_final_decision() {
    let (design, ctx, t) = arm_only(3, LossFamily::SquaredError);
    let mut state = PosteriorState::isotropic_prior(3, 1.0).unwrap();
    state.beta = vec![0.0, 0.0, 1.0];
    state.epoch = t;
    let step = rho_policy_step(
        &state,
        &HorizonSpec::constant(t, 10),
        &design,
        &ctx,
        &ObjectiveSpec::simple_regret(),
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert!(step.plan.epochs.is_empty());
    assert_eq!(step.deploy.row(0), &[0.0, 0.0, 1.0]);
}

#[test]
fn budget_slack_is_advanced_by_the_deployed_spend() {
    let (design, ctx, t) = arm_only(2, LossFamily::SquaredError);
    let state = PosteriorState::isotropic_prior(2, 1.0).unwrap();
    let spec = ObjectiveSpec::simple_regret().with_constraint(Constraint::Budget {
        cost: vec![1.0, 3.0],
        remaining: 60.0,
        penalty: 1.0,
    });
    let opt = OptimizerConfig {
        num_steps: 20,
        num_scenarios: 32,
        ..OptimizerConfig::default()
    };
    let horizon = HorizonSpec::constant(t, 10);
    let step = rho_policy_step(&state, &horizon, &design, &ctx, &spec, &opt).unwrap();
    let p = step.deploy.row(0);
    let spent = 10.0 * (p[0] + 3.0 * p[1]);
    let (_, left, _) = step.spec.budget().unwrap();
    assert!((left - (60.0 - spent)).abs() < 1e-9);
    let total: f64 = step
        .plan
        .epochs
        .iter()
        .map(|e| 10.0 * (e.prob(0, 0) + 3.0 * e.prob(0, 1)))
        .sum();
    assert!(total <= 60.0 + 1e-9, "{total}");
}

#[test]
fn insufficient_budget_is_infeasible() {
    let (design, ctx, t) = arm_only(2, LossFamily::SquaredError);
    let state = PosteriorState::isotropic_prior(2, 1.0).unwrap();
    let spec = ObjectiveSpec::simple_regret().with_constraint(Constraint::Budget {
        cost: vec![1.0, 3.0],
        remaining: 5.0,
        penalty: 1.0,
    });
    let err = solve_plan(&state, &HorizonSpec::constant(t, 10), &design, &ctx, &spec, &OptimizerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InfeasibleConstraint(_)));
}


use bldp_core::linalg::{sym_eigen, Mat, SymMatrix};
use bldp_core::model::EstimateSummary;
use bldp_core::posterior::{transition_covariances, update, InfoIncrement, PosteriorState};
use proptest::prelude::*;

// A A^T + shift * I from a flat d*d entry vector.
fn spd(d: usize, entries: &[f64], shift: f64) -> SymMatrix<f64> {
    let mut m = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let s: f64 = (0..d).map(|k| entries[i * d + k] * entries[j * d + k]).sum();
            m[(i, j)] = s + if i == j { shift } else { 0.0 };
        }
    }
    SymMatrix::symmetrize(m)
}

fn summary(theta_hat: Vec<f64>, h: SymMatrix<f64>, info: SymMatrix<f64>, n: usize) -> EstimateSummary<f64> {
    EstimateSummary {
        theta_hat,
        hessian: h,
        info,
        n_units: n,
        epoch: 0,
        converged: true,
        iterations: 1,
    }
}

fn max_abs_diff(a: &SymMatrix<f64>, b: &SymMatrix<f64>) -> f64 {
    let d = a.dim();
    let mut m: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|d| {
        let m = prop::collection::vec(-1.0f64..1.0, d * d);
        let v = prop::collection::vec(-2.0f64..2.0, d);
        (Just(d), m.clone(), m.clone(), m.clone(), m, v.clone(), v)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_shrinks_covariance((d, s, h, i, _, th, _) in case(), n in 1usize..500) {
        let state = PosteriorState::new(vec![0.0; d], spd(d, &s, 0.5), 0).unwrap();
        let post = update(&state, &summary(th, spd(d, &h, 0.2), spd(d, &i, 0.2), n)).unwrap();
        let gap = state.sigma.sub(&post.sigma);
        prop_assert!(sym_eigen(&gap).min_value() > -1e-9);
        prop_assert!(sym_eigen(&post.sigma).min_value() > 0.0);
        prop_assert_eq!(post.epoch, 1);
    }

    #[test]
    fn transition_split_adds_back_to_prior((d, s, h, i, _, _, _) in case(), n in 1usize..500) {
        let sigma = spd(d, &s, 0.5);
        let inc = InfoIncrement { hessian: spd(d, &h, 0.2), info: spd(d, &i, 0.2), n: n as f64 };
        let (reduction, next) = transition_covariances(&sigma, &inc).unwrap();
        prop_assert!(max_abs_diff(&reduction.add(&next), &sigma) < 1e-9);
        prop_assert!(sym_eigen(&reduction).min_value() > -1e-9);
    }

    // Gaussian updates with independent batches commute.
    #[test]
    fn two_batches_commute((d, s, h, i, j, a, b) in case(), n in 1usize..200, m in 1usize..200) {
        let state = PosteriorState::new(vec![0.1; d], spd(d, &s, 0.5), 0).unwrap();
        let first = summary(a, spd(d, &h, 0.3), spd(d, &i, 0.3), n);
        let second = summary(b, spd(d, &j, 0.3), spd(d, &h, 0.3), m);
        let ab = update(&update(&state, &first).unwrap(), &second).unwrap();
        let ba = update(&update(&state, &second).unwrap(), &first).unwrap();
        prop_assert!(max_abs_diff(&ab.sigma, &ba.sigma) < 1e-8);
        for (x, y) in ab.beta.iter().zip(&ba.beta) {
            prop_assert!((x - y).abs() < 1e-7, "{} vs {}", x, y);
        }
    }
}

#[test]
fn zero_information_leaves_posterior_unchanged() {
    let state = PosteriorState::new(vec![1.0, -1.0], SymMatrix::identity(2), 3).unwrap();
    let zero = SymMatrix::from_diag(&[0.0, 0.0]);
    let post = update(&state, &summary(vec![5.0, 5.0], zero.clone(), zero, 0)).unwrap();
    assert_eq!(post.beta, state.beta);
    assert_eq!(post.epoch, 4);
}

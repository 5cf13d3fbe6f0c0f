use proptest::prelude::*;
use spectral_damp::data::synthetic_classification;
use spectral_damp::linalg::{LinearOperator, SymMatrix};
use spectral_damp::model::{Batch, Init, ModelSpec};
use spectral_damp::random::{random_symmetric, seeded};
use spectral_damp::shrinkage::*;

#[test]
fn mse_minimum_matches_closed_form() {
    for mu2 in [0.1, 1.0, 3.0, 10.0] {
        let (beta, delta) = optimal_damping(mu2).unwrap();
        assert!((beta - 1.0 / (1.0 + mu2)).abs() < 1e-15);
        assert!((delta - mu2).abs() < 1e-12);
        let e = shrinkage_mse(beta, mu2);
        for db in [-1e-3, 1e-3] {
            assert!(shrinkage_mse(beta + db, mu2) > e);
        }
        // E(beta*) = mu2 / (1 + mu2).
        assert!((e - mu2 / (1.0 + mu2)).abs() < 1e-12);
    }
    assert!(optimal_damping(-1.0).is_err());
}

#[test]
fn shrunk_matrix_is_a_convex_combination() {
    let h = random_symmetric(&mut seeded(1), 10);
    let s = shrunk_matrix(&h, 0.25).unwrap();
    for i in 0..10 {
        for j in 0..10 {
            let eye = if i == j { 1.0 } else { 0.0 };
            assert!((s.get(i, j) - (0.25 * h.get(i, j) + 0.75 * eye)).abs() < 1e-15);
        }
    }
    assert!(shrunk_matrix(&h, 1.5).is_err());
}

#[test]
fn second_moment_of_identity_is_one() {
    assert!((spectral_second_moment(&SymMatrix::identity(7)) - 1.0).abs() < 1e-15);
    let d = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
    assert!((spectral_second_moment(&d) - 14.0 / 3.0).abs() < 1e-14);
}

#[test]
fn variance_estimate_tracks_dense_oracle() {
    let ds = synthetic_classification(400, 12, 3, 7).unwrap();
    let m = ModelSpec::softmax_regression(12, 3);
    let w = m.init_params(Init::FanIn, 1);
    let batches: Vec<Batch> = (0..10)
        .map(|i| Batch::from_dataset(&ds, &((i * 40)..(i * 40 + 40)).collect::<Vec<_>>()))
        .collect();
    let hs: Vec<SymMatrix> = batches
        .iter()
        .map(|b| m.dense_hessian(&w, b).unwrap())
        .collect();
    let p = m.dim();
    let mut mean = SymMatrix::zeros(p);
    for h in &hs {
        mean.add_scaled(1.0 / hs.len() as f64, h).unwrap();
    }
    let oracle = hs
        .iter()
        .map(|h| {
            let mut d = h.clone();
            d.add_scaled(-1.0, &mean).unwrap();
            spectral_second_moment(&d)
        })
        .sum::<f64>()
        / hs.len() as f64;
    let est = estimate_hessian_variance(&m, &w, &batches, 64, 3, VarianceForm::Centered).unwrap();
    let rel = (est.sigma2 - oracle).abs() / oracle;
    assert!(rel < 0.15, "estimate {} oracle {oracle}", est.sigma2);
    assert_eq!(est.per_probe.len(), 64);
}

#[test]
fn identical_operators_have_zero_centered_variance() {
    let h = random_symmetric(&mut seeded(2), 15);
    let ops: Vec<&(dyn LinearOperator + Sync)> = vec![&h, &h, &h];
    let est = estimate_operator_variance(&ops, 4, 0, VarianceForm::Centered).unwrap();
    assert!(est.sigma2 < 1e-28);
    assert!(estimate_operator_variance(&ops, 0, 0, VarianceForm::Centered).is_err());
}

#[test]
fn listing_form_matches_its_formula() {
    // s2 - m^2 with s2 = mean |H_i v|^2 and m = v^T mean(H_i) v.
    let a = SymMatrix::from_diagonal(&[2.0, 0.0]);
    let b = SymMatrix::from_diagonal(&[0.0, 2.0]);
    let ops: Vec<&(dyn LinearOperator + Sync)> = vec![&a, &b];
    let est = estimate_operator_variance(&ops, 1, 11, VarianceForm::Listing).unwrap();
    let v = spectral_damp::random::unit_vector(&mut seeded(11), 2);
    let s2 = 0.5 * (4.0 * v[0] * v[0] + 4.0 * v[1] * v[1]);
    let m = v[0] * v[0] + v[1] * v[1];
    assert!((est.per_probe[0] - (s2 - m * m)).abs() < 1e-12);
}

#[test]
fn controller_follows_ema_and_floor() {
    let mut st = DampingState::new(0.1).unwrap().with_interval(10).unwrap();
    assert!(!st.update(1.0, 5).unwrap());
    assert!(st.update(1.0, 10).unwrap());
    assert!((st.current_delta - (0.7 * 0.1 + 0.3 * 1.0)).abs() < 1e-15);
    st.update(0.0, 20).unwrap();
    assert!((st.current_delta - 0.7 * 0.37).abs() < 1e-15);
    for step in (30..200).step_by(10) {
        st.update(0.0, step).unwrap();
    }
    assert_eq!(st.current_delta, 0.1);
    assert!(st.update(f64::NAN, 300).is_err());

    let mut relaxed = DampingState::new(0.1).unwrap().with_strict_floor(false);
    for step in (100..5000).step_by(100) {
        relaxed.update(0.0, step).unwrap();
    }
    assert!((relaxed.current_delta - 1e-3).abs() < 1e-15);
}

proptest! {
    #[test]
    fn shrinkage_identity(lambda in 1e-6f64..10.0, delta in 1e-6f64..10.0) {
        let p = shrinkage_from_delta(delta).unwrap();
        let direct = 1.0 / (lambda + delta);
        prop_assert!((direct - p.shrunk_inverse(lambda)).abs() < 1e-12 * direct.max(1.0));
        prop_assert!((ShrinkageParams::delta_from_beta(p.beta) - delta).abs() < 1e-9 * delta.max(1.0));
        prop_assert!((p.kappa - 1.0 / p.beta).abs() < 1e-12 * p.kappa);
    }

    #[test]
    fn damping_never_below_floor(
        initial in 1e-4f64..1.0,
        estimates in prop::collection::vec(0.0f64..2.0, 1..30),
        strict in any::<bool>(),
    ) {
        let mut st = DampingState::new(initial).unwrap().with_interval(1).unwrap().with_strict_floor(strict);
        for (i, s) in estimates.iter().enumerate() {
            st.update(*s, i + 1).unwrap();
            prop_assert!(st.current_delta >= st.floor_value());
            if strict {
                prop_assert!(st.current_delta >= initial);
            }
        }
        prop_assert_eq!(st.history.len(), estimates.len() + 1);
    }
}

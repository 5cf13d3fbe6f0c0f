use proptest::prelude::*;
use spectral_damp::data::synthetic_quadratic;
use spectral_damp::lanczos::{lanczos, SpectralDecomposition};
use spectral_damp::linalg::{dense_eigh, ParamVector, SymMatrix};
use spectral_damp::model::{Batch, ModelSpec};
use spectral_damp::optim::*;
use spectral_damp::random::{gaussian_vector, seeded};
use spectral_damp::shrinkage::shrinkage_from_delta;
use spectral_damp::Error;

/// Piecewise-linear interpolation through breakpoints `(t/T, lr/alpha0)`.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points.last().unwrap().1
}

fn exact_decomposition(h: &SymMatrix) -> SpectralDecomposition {
    let e = dense_eigh(h).unwrap();
    let p = h.dim();
    SpectralDecomposition {
        ritz_values: e.values.clone(),
        ritz_vectors: e.vectors().map(ParamVector::from).collect(),
        residuals: vec![0.0; p],
        flagged: vec![false; p],
        requested: p,
        broke_down: false,
    }
}

#[test]
fn schedules_follow_their_breakpoints() {
    let r = 0.01;
    let k = 5.0;
    let decay = [(0.0, 1.0), (0.5, 1.0), (0.9, r), (1.0, r)];
    let warm = [(0.0, 1.0), (0.1, 1.0), (0.3, k), (0.9, r), (1.0, r)];
    for (kind, pts) in [
        (ScheduleKind::LinearDecay, &decay[..]),
        (ScheduleKind::Warmup, &warm[..]),
    ] {
        let s = ScheduleSpec::new(kind, 0.2, 300);
        for i in 0..=300 {
            let t = i as f64;
            let want = 0.2 * interpolate(pts, t / 300.0);
            assert!((schedule_lr(&s, t).unwrap() - want).abs() < 1e-12);
        }
    }
    let flat = ScheduleSpec::new(ScheduleKind::Flat, 0.3, 10);
    assert_eq!(schedule_lr(&flat, 7.5).unwrap(), 0.3);
    assert!(schedule_lr(&flat, 10.5).is_err());
    assert!(schedule_lr(&flat, -0.1).is_err());
}

#[test]
fn eta_scales_only_the_sharp_part() {
    let h = SymMatrix::from_diagonal(&[9.0, 4.0, 1.0, 0.5, 0.1, 0.05]);
    let d = lanczos(&h, 3, 1).unwrap();
    let g = gaussian_vector(&mut seeded(2), 6);
    let base = lanczos_displacement(&d, &g, 0.1, 0.2, 1.0).unwrap();
    for eta in [3.0, 10.0] {
        let p = lanczos_displacement(&d, &g, 0.1, 0.2, eta).unwrap();
        for i in 0..6 {
            assert!((p.sharp[i] * eta - base.sharp[i]).abs() < 1e-14);
            assert_eq!(p.flat[i], base.flat[i]);
        }
    }
}

#[test]
fn damping_is_shrinkage_with_rescaled_rate() {
    let (h, _) = synthetic_quadratic(&[5.0, 3.0, 1.0, 0.2, 0.01, 0.0], 3).unwrap();
    let d = exact_decomposition(&h);
    let g = gaussian_vector(&mut seeded(4), 6);
    let (lr, delta) = (0.3, 0.7);
    let step = lanczos_displacement(&d, &g, lr, delta, 1.0)
        .unwrap()
        .total();
    let sp = shrinkage_from_delta(delta).unwrap();
    let e = dense_eigh(&h).unwrap();
    let mut shrunk_newton = ParamVector::zeros(6);
    for (lam, v) in e.values.iter().zip(e.vectors()) {
        let c: f64 = v.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        shrunk_newton.axpy(-(lr / sp.kappa) * c / (sp.beta * lam + 1.0 - sp.beta), v);
    }
    for i in 0..6 {
        assert!((step[i] - shrunk_newton[i]).abs() < 1e-10);
    }
}

#[test]
fn r_est_curv_reference_values() {
    let h = SymMatrix::from_diagonal(&[10.0, 0.0, 0.0]);
    let d = exact_decomposition(&h);
    assert!((r_est_curv(&d, 0.1).unwrap() - 101.0).abs() < 1e-9);
    let m = ModelSpec::quadratic(h);
    let mut sgd =
        Optimizer::new(OptimConfig::sgd(0.1), ParamVector::from(vec![1.0; 3]), 0).unwrap();
    sgd.step(&m, &Batch::empty(), 0.1).unwrap();
    assert_eq!(sgd.r_est_curv(), Some(1.0));
}

#[test]
fn gd_divergence_onset_matches_two_over_lambda() {
    for lmax in [1.0, 4.0, 10.0] {
        let (h, w0) = synthetic_quadratic(&[lmax, 0.6 * lmax, 0.2 * lmax, 0.05 * lmax], 5).unwrap();
        let m = ModelSpec::quadratic(h);
        let mut c = OptimConfig::sgd(0.1);
        c.momentum = 0.0;
        let onset = divergence_onset(
            &m,
            &Batch::empty(),
            &w0,
            &c,
            0.5 / lmax,
            4.0 / lmax,
            300,
            30,
        )
        .unwrap();
        let bound = 2.0 / lmax;
        assert!(
            (onset - bound).abs() / bound < 0.1,
            "{lmax}: {onset} vs {bound}"
        );
    }
}

#[test]
fn damped_newton_onset_matches_bound() {
    let spectrum = [4.0, 2.0, 1.0, 0.5];
    let (h, w0) = synthetic_quadratic(&spectrum, 6).unwrap();
    let m = ModelSpec::quadratic(h.clone());
    let delta = 0.5;
    let mut c = OptimConfig::lanczos_opt(0.1, delta);
    c.k = 4;
    let d = exact_decomposition(&h);
    let bound = stable_lr_bound(&h, &d.ritz_values, &d.ritz_vectors, delta).unwrap();
    assert!((bound - 2.0 * (4.0 + delta) / 4.0).abs() < 1e-10);
    let onset = divergence_onset(
        &m,
        &Batch::empty(),
        &w0,
        &c,
        0.2 * bound,
        3.0 * bound,
        300,
        30,
    )
    .unwrap();
    assert!((onset - bound).abs() / bound < 0.25, "{onset} vs {bound}");
}

#[test]
fn adam_first_steps_by_hand() {
    let mut c = OptimConfig::adam(0.01, 1e-8);
    c.betas = (0.9, 0.999);
    let m = ModelSpec::quadratic(SymMatrix::from_diagonal(&[2.0]));
    let mut opt = Optimizer::new(c, ParamVector::from(vec![1.0]), 0).unwrap();
    opt.step(&m, &Batch::empty(), 0.01).unwrap();
    // Bias correction makes the first step lr * sign(g).
    assert!((opt.params()[0] - (1.0 - 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    let w1 = opt.params()[0];
    opt.step(&m, &Batch::empty(), 0.01).unwrap();
    let (g1, g2) = (2.0, 2.0 * w1);
    let mh = (0.9 * 0.1 * g1 + 0.1 * g2) / (1.0 - 0.81);
    let vh = (0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2) / (1.0 - 0.999f64.powi(2));
    let want = w1 - 0.01 * mh / (vh.sqrt() + 1e-8);
    assert!((opt.params()[0] - want).abs() < 1e-14);
}

#[test]
fn large_adam_damping_approaches_scaled_sgd() {
    let (h, w0) = synthetic_quadratic(&[3.0, 1.0, 0.2], 1).unwrap();
    let m = ModelSpec::quadratic(h);
    let delta = 1e6;
    let mut adam = OptimConfig::adam(1e5, delta);
    adam.betas = (0.0, 0.999);
    let mut a = Optimizer::new(adam, w0.clone(), 0).unwrap();
    let mut sgd = OptimConfig::sgd(0.1);
    sgd.momentum = 0.0;
    let mut s = Optimizer::new(sgd, w0, 0).unwrap();
    for _ in 0..5 {
        a.step(&m, &Batch::empty(), 1e5).unwrap();
        s.step(&m, &Batch::empty(), 0.1).unwrap();
    }
    for (x, y) in a.params().iter().zip(s.params().iter()) {
        assert!((x - y).abs() < 1e-5 * y.abs().max(1e-3));
    }
}

#[test]
fn weight_decay_variants() {
    let m = ModelSpec::quadratic(SymMatrix::from_diagonal(&[0.0]));
    let mut coupled = OptimConfig::sgd(0.1);
    coupled.momentum = 0.0;
    coupled.weight_decay = 0.5;
    let mut o = Optimizer::new(coupled.clone(), ParamVector::from(vec![2.0]), 0).unwrap();
    o.step(&m, &Batch::empty(), 0.1).unwrap();
    assert!((o.params()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    let mut dec = coupled;
    dec.decouple_wd = true;
    let mut o = Optimizer::new(dec, ParamVector::from(vec![2.0]), 0).unwrap();
    o.step(&m, &Batch::empty(), 0.1).unwrap();
    assert!((o.params()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
}

#[test]
fn adam_divergence_is_reported() {
    let m = ModelSpec::quadratic(SymMatrix::from_diagonal(&[1.0]));
    let mut o = Optimizer::new(
        OptimConfig::adam(1e7, 1e-8),
        ParamVector::from(vec![1.0]),
        0,
    )
    .unwrap();
    let mut saw = false;
    for _ in 0..10 {
        if let Err(Error::Diverged { .. }) = o.step(&m, &Batch::empty(), 1e9) {
            saw = true;
            break;
        }
    }
    assert!(saw);
}

#[test]
fn lanczos_opt_runs_are_deterministic() {
    let (h, w0) =
        synthetic_quadratic(&(1..=30).map(|i| i as f64 / 3.0).collect::<Vec<_>>(), 2).unwrap();
    let m = ModelSpec::quadratic(h);
    let mut c = OptimConfig::lanczos_opt(0.05, 0.1);
    c.k = 5;
    let run = || {
        let mut o = Optimizer::new(c.clone(), w0.clone(), 42).unwrap();
        for _ in 0..10 {
            o.step(&m, &Batch::empty(), 0.05).unwrap();
        }
        o.params().clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn schedules_are_continuous(base in 1e-4f64..1.0, total in 1usize..1000, which in 0usize..2) {
        let kind = if which == 0 { ScheduleKind::LinearDecay } else { ScheduleKind::Warmup };
        let s = ScheduleSpec::new(kind, base, total);
        let breaks: &[f64] = if which == 0 { &[0.5, 0.9] } else { &[0.1, 0.3, 0.9] };
        for &b in breaks {
            let t = b * total as f64;
            let eps = 1e-9 * total as f64;
            let (l, m, r) = (
                schedule_lr(&s, t - eps).unwrap(),
                schedule_lr(&s, t).unwrap(),
                schedule_lr(&s, t + eps).unwrap(),
            );
            prop_assert!((l - m).abs() < 1e-7 * base && (r - m).abs() < 1e-7 * base);
        }
    }

    #[test]
    fn more_damping_never_moves_further(
        seed in 0u64..1000,
        d1 in 1e-3f64..1.0,
        factor in 1.0f64..100.0,
    ) {
        let h = spectral_damp::random::random_symmetric(&mut seeded(seed), 12);
        let d = lanczos(&h, 4, seed).unwrap();
        let g = gaussian_vector(&mut seeded(seed + 1), 12);
        let a = lanczos_displacement(&d, &g, 0.1, d1, 1.0).unwrap().total();
        let b = lanczos_displacement(&d, &g, 0.1, d1 * factor, 1.0).unwrap().total();
        prop_assert!(b.norm() <= a.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn zero_gradient_is_fixed(seed in 0u64..1000, which in 0usize..3) {
        let h = spectral_damp::random::random_symmetric(&mut seeded(seed), 5);
        let m = ModelSpec::quadratic(h);
        let c = match which {
            0 => OptimConfig::sgd(0.1),
            1 => OptimConfig::adam(0.1, 1e-8),
            _ => OptimConfig::lanczos_opt(0.1, 0.5),
        };
        let mut o = Optimizer::new(c, ParamVector::zeros(5), seed).unwrap();
        o.step(&m, &Batch::empty(), 0.1).unwrap();
        prop_assert!(o.params().iter().all(|&x| x == 0.0));
    }
}

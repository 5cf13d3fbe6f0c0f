use nalgebra::DMatrix;
use proptest::prelude::*;
use spectral_damp::linalg::*;
use spectral_damp::random::{random_symmetric, seeded};

fn sym_strategy(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_dim).prop_flat_map(|n| {
        prop::collection::vec(-5.0f64..5.0, n * n)
            .prop_map(move |raw| SymMatrix::from_fn(n, |i, j| raw[i.min(j) * n + i.max(j)]))
    })
}

fn to_nalgebra(a: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.dim(), a.dim(), a.as_row_major())
}

proptest! {
    #[test]
    fn matvec_is_linear(
        (a, x, y, s, t) in sym_strategy(12).prop_flat_map(|a| {
            let n = a.dim();
            (
                Just(a),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
                -2.0f64..2.0,
                -2.0f64..2.0,
            )
        })
    ) {
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| s * a + t * b).collect();
        let lhs = matvec(&a, &combo).unwrap();
        let ax = matvec(&a, &x).unwrap();
        let ay = matvec(&a, &y).unwrap();
        for i in 0..a.dim() {
            let rhs = s * ax[i] + t * ay[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn eigenvalues_preserve_trace_and_frobenius(a in sym_strategy(16)) {
        let vals = dense_eigvalsh(&a).unwrap();
        let tr: f64 = vals.iter().sum();
        let fro2: f64 = vals.iter().map(|v| v * v).sum();
        prop_assert!((tr - a.trace()).abs() < 1e-9 * (1.0 + a.frobenius_norm()));
        prop_assert!((fro2.sqrt() - a.frobenius_norm()).abs() < 1e-9 * (1.0 + a.frobenius_norm()));
        prop_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigh_matches_nalgebra(a in sym_strategy(20)) {
        let ours = dense_eigh(&a).unwrap();
        let mut theirs: Vec<f64> = to_nalgebra(&a).symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.values.iter().zip(&theirs) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
        let back = ours.reconstruct();
        for (x, y) in back.as_row_major().iter().zip(a.as_row_major()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn orthogonalized_vector_is_orthogonal(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..5)
    ) {
        let mut basis: Vec<ParamVector> = Vec::new();
        for v in &vs {
            if let Orthogonalized::Vector(u) = orthogonalize(v, &basis) {
                let u = u.normalized().unwrap();
                for b in &basis {
                    prop_assert!(dot(&u, b).abs() < 1e-10);
                }
                basis.push(u);
            }
        }
    }
}

#[test]
fn larger_random_matrix_against_nalgebra() {
    let a = random_symmetric(&mut seeded(17), 150);
    let ours = dense_eigh(&a).unwrap();
    let eig = to_nalgebra(&a).symmetric_eigen();
    let mut order: Vec<usize> = (0..150).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    for (rank, &i) in order.iter().enumerate() {
        assert!((ours.values[rank] - eig.eigenvalues[i]).abs() < 1e-9);
        // Eigenvectors agree up to sign.
        let theirs = eig.eigenvectors.column(i);
        let overlap: f64 = ours
            .vector(rank)
            .iter()
            .zip(theirs.iter())
            .map(|(x, y)| x * y)
            .sum();
        assert!((overlap.abs() - 1.0).abs() < 1e-7, "rank {rank}: {overlap}");
    }
}

#[test]
fn selected_pairs_match_full_decomposition() {
    let a = random_symmetric(&mut seeded(5), 80);
    let full = dense_eigh(&a).unwrap();
    let (vals, sel) = dense_eigh_select(&a, &[0, 3, 79]).unwrap();
    assert_eq!(vals.len(), 80);
    for (slot, &pos) in [0usize, 3, 79].iter().enumerate() {
        assert!((sel.values[slot] - full.values[pos]).abs() < 1e-10);
        let c = dot(sel.vector(slot), full.vector(pos));
        assert!((c.abs() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn tridiagonal_against_dense() {
    let d = [2.0, -1.0, 0.5, 3.0, 1.0];
    let e = [0.7, 0.2, -1.1, 0.4];
    let t = SymMatrix::from_fn(5, |i, j| {
        if i == j {
            d[i]
        } else if i.abs_diff(j) == 1 {
            e[i.min(j)]
        } else {
            0.0
        }
    });
    let ours = tridiagonal_eigh(&d, &e).unwrap();
    let dense = dense_eigvalsh(&t).unwrap();
    for (x, y) in ours.values.iter().zip(&dense) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn rejects_asymmetric_and_oversized_input() {
    assert!(SymMatrix::from_row_major(2, vec![1.0, 2.0, 3.0, 1.0]).is_err());
    assert!(SymMatrix::from_row_major(2, vec![1.0, f64::NAN, f64::NAN, 1.0]).is_err());
    let big = SymMatrix::identity(DENSE_CAP + 1);
    assert!(matches!(
        dense_eigh(&big),
        Err(spectral_damp::Error::DenseCapExceeded { .. })
    ));
}

#[test]
fn zero_vector_orthogonalizes_to_zero() {
    let basis = vec![ParamVector::basis(3, 0), ParamVector::basis(3, 1)];
    assert!(orthogonalize(&[2.0, -1.0, 0.0], &basis).is_zero());
    assert!(matvec(&SymMatrix::identity(3), &[1.0, 2.0]).is_err());
}

//! Decomposition invariants checked against independent routes: explicit
//! reconstruction, matrix-polynomial recurrences, and a separate symmetric
//! eigensolver.

use cmr::linalg::{
    apply_symmetric_function, gram, orthonormal_rows, svd, svd_with_hint, symmetric_eigen,
    top_singular_triple, Matrix,
};
use cmr::rng::{gaussian_matrix, seeded_rng};
use cmr::Mat64;
use proptest::prelude::*;

#[test]
fn svd_identity() {
    let d = svd(&Mat64::identity(3)).unwrap();
    for &s in d.singular_values() {
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn svd_diagonal_case() {
    let w = Mat64::from_diag(&[2.0, 1.0]);
    let d = svd(&w).unwrap();
    assert!((d.singular_values()[0] - 2.0).abs() <= 1e-12);
    assert!((d.singular_values()[1] - 1.0).abs() <= 1e-12);
    // U and V are signed permutations of the identity here.
    assert!(d.reconstruction_error(&w) <= 1e-12);
}

#[test]
fn svd_random_5x4_reconstructs() {
    let mut rng = seeded_rng(42);
    let w: Mat64 = gaussian_matrix(&mut rng, 5, 4);
    let d = svd(&w).unwrap();
    let tol = 1e-10 * w.frobenius_norm().max(1.0);
    assert!(d.reconstruction_error(&w) <= tol);
}

#[test]
fn svd_invariants_on_random_shapes() {
    // >= 100 seeded random matrices over shapes {2..16} x {2..16}.
    let mut rng = seeded_rng(7);
    let mut count = 0;
    for m in 2..=16usize {
        for n in (2..=16usize).step_by(2) {
            let w: Mat64 = gaussian_matrix(&mut rng, m, n);
            let d = svd(&w).unwrap();
            let wnorm = w.frobenius_norm();
            assert!(
                d.reconstruction_error(&w) <= 1e-10 * wnorm.max(1.0),
                "reconstruction failed at {m}x{n}"
            );
            assert!(d.orthonormality_error() <= 1e-10, "orthonormality failed at {m}x{n}");
            let sv = d.singular_values();
            for i in 1..sv.len() {
                assert!(sv[i - 1] >= sv[i], "singular values not sorted at {m}x{n}");
            }
            // Sum of squared singular values equals the squared Frobenius norm.
            let ss: f64 = sv.iter().map(|s| s * s).sum();
            assert!((ss - wnorm * wnorm).abs() <= 1e-9 * wnorm * wnorm);
            count += 1;
        }
    }
    assert!(count >= 100);
}

#[test]
fn svd_is_deterministic_and_hint_preserves_contract() {
    let mut rng = seeded_rng(11);
    let w: Mat64 = gaussian_matrix(&mut rng, 8, 8);
    let a = svd(&w).unwrap();
    let b = svd(&w).unwrap();
    assert_eq!(a.singular_values(), b.singular_values());
    assert_eq!(a.right_t().data(), b.right_t().data());

    // Perturb slightly and re-decompose with the previous basis as the hint.
    let mut w2 = w.clone();
    w2.add_scaled_in_place(1e-3, &gaussian_matrix(&mut rng, 8, 8));
    let warm = svd_with_hint(&w2, Some(a.square_basis_t())).unwrap();
    assert!(warm.reconstruction_error(&w2) <= 1e-10 * w2.frobenius_norm().max(1.0));
    assert!(warm.orthonormality_error() <= 1e-10);
    let cold = svd(&w2).unwrap();
    for (x, y) in warm.singular_values().iter().zip(cold.singular_values()) {
        assert!((x - y).abs() <= 1e-10 * y.max(1.0));
    }
}

#[test]
fn svd_sign_convention_first_nonzero_positive() {
    let mut rng = seeded_rng(13);
    for _ in 0..20 {
        let w: Mat64 = gaussian_matrix(&mut rng, 6, 5);
        let d = svd(&w).unwrap();
        for i in 0..d.rank_bound() {
            let first = d.right_vector(i).iter().find(|v| **v != 0.0).unwrap();
            assert!(*first > 0.0);
        }
    }
}

#[test]
fn svd_rank_deficient_still_orthonormal() {
    // Exactly rank-1.
    let u = [1.0, -2.0, 0.5];
    let v = [0.3, 0.7, -0.1, 2.0];
    let w = Mat64::outer(&u, &v);
    let d = svd(&w).unwrap();
    assert!(d.orthonormality_error() <= 1e-10);
    assert!(d.reconstruction_error(&w) <= 1e-10 * w.frobenius_norm().max(1.0));
    assert!(d.singular_values()[1] <= 1e-12);
}

#[test]
fn svd_rejects_non_finite() {
    let mut w = Mat64::identity(3);
    w.data_mut()[2] = f64::INFINITY;
    assert!(svd(&w).is_err());
}

#[test]
fn gram_hand_example() {
    let w = Mat64::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let g = gram(&w);
    assert_eq!(g.data(), &[10.0, 14.0, 14.0, 20.0]);
    assert_eq!(gram(&Mat64::identity(2)).data(), Mat64::identity(2).data());
}

#[test]
fn gram_eigenvalues_match_squared_singular_values() {
    // Independent route: symmetric_eigen on W^T W vs svd of W.
    let mut rng = seeded_rng(21);
    let w: Mat64 = gaussian_matrix(&mut rng, 6, 3);
    let g = gram(&w);
    assert_eq!(g.asymmetry(), 0.0);
    let (mut eig, _) = symmetric_eigen(&g).unwrap();
    eig.reverse();
    let d = svd(&w).unwrap();
    for (l, s) in eig.iter().zip(d.singular_values()) {
        assert!((l - s * s).abs() <= 1e-9 * (s * s).max(1.0));
    }
}

#[test]
fn symmetric_eigen_reconstructs() {
    let mut rng = seeded_rng(23);
    for n in [2usize, 3, 5, 9] {
        let a: Mat64 = gaussian_matrix(&mut rng, n, n);
        let mut s = a.add(&a.transpose());
        s.scale_in_place(0.5);
        let (vals, vecs) = symmetric_eigen(&s).unwrap();
        let rebuilt = apply_symmetric_function(&vals, &vecs, |x| x).unwrap();
        assert!(rebuilt.sub(&s).max_abs() <= 1e-10 * s.frobenius_norm().max(1.0));
    }
}

#[test]
fn apply_symmetric_function_identity_and_projector() {
    let mut rng = seeded_rng(31);
    let a: Mat64 = gaussian_matrix(&mut rng, 5, 5);
    let mut s = a.add(&a.transpose());
    s.scale_in_place(0.5);
    let (vals, vecs) = symmetric_eigen(&s).unwrap();

    let same = apply_symmetric_function(&vals, &vecs, |x| x).unwrap();
    assert!(same.sub(&s).max_abs() <= 1e-10);

    // f = 1 gives V V^T, the identity for a full square basis.
    let proj = apply_symmetric_function(&vals, &vecs, |_| 1.0).unwrap();
    assert!(proj.sub(&Mat64::identity(5)).max_abs() <= 1e-10);
}

#[test]
fn apply_symmetric_function_matches_matrix_recurrence() {
    // T_3 through functional calculus vs the explicit polynomial 4 G^3 - 3 G
    // on a normalized Gram matrix.
    let mut rng = seeded_rng(37);
    let w: Mat64 = gaussian_matrix(&mut rng, 6, 6);
    let g = gram(&w);
    let (vals, vecs) = symmetric_eigen(&g).unwrap();
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    let c = 0.5 * (hi + lo);
    let d = (0.5 * (hi - lo)).max(1e-12);
    let ghat = apply_symmetric_function(&vals, &vecs, |x| (x - c) / d).unwrap();

    let (hvals, hvecs) = symmetric_eigen(&ghat).unwrap();
    let t3 = apply_symmetric_function(&hvals, &hvecs, |x| cmr::linalg::chebyshev_t_scalar(3, x))
        .unwrap();

    let g2 = ghat.matmul(&ghat);
    let g3 = g2.matmul(&ghat);
    let explicit = g3.scale(4.0).sub(&ghat.scale(3.0));
    assert!(t3.sub(&explicit).max_abs() <= 1e-9);
}

#[test]
fn apply_symmetric_function_dimension_mismatch_errors() {
    let vecs = Mat64::identity(3);
    assert!(apply_symmetric_function(&[1.0, 2.0], &vecs, |x| x).is_err());
}

#[test]
fn orthonormal_rows_produces_orthonormal_rows() {
    let mut rng = seeded_rng(41);
    let g: Mat64 = gaussian_matrix(&mut rng, 4, 9);
    let q = orthonormal_rows(&g).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let d = cmr::linalg::vec_dot(q.row(i), q.row(j));
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((d - target).abs() <= 1e-12);
        }
    }
}

#[test]
fn top_singular_triple_matches_svd() {
    let mut rng = seeded_rng(43);
    let w: Mat64 = gaussian_matrix(&mut rng, 7, 5);
    let d = svd(&w).unwrap();
    let (s, u, v) = top_singular_triple(&w);
    assert!((s - d.sigma_max()).abs() <= 1e-9 * d.sigma_max());
    // Vectors agree up to a joint sign.
    let du = d.left_vector(0);
    let dv = d.right_vector(0);
    let cu = cmr::linalg::vec_dot(&u, du).abs();
    let cv = cmr::linalg::vec_dot(&v, dv).abs();
    assert!(cu > 1.0 - 1e-8, "u alignment {cu}");
    assert!(cv > 1.0 - 1e-8, "v alignment {cv}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_svd_reconstruction(
        rows in 1usize..9,
        cols in 1usize..9,
        seed in 0u64..1_000_000,
    ) {
        let mut rng = seeded_rng(seed);
        let w: Mat64 = gaussian_matrix(&mut rng, rows, cols);
        let d = svd(&w).unwrap();
        let tol = 1e-10 * w.frobenius_norm().max(1.0);
        prop_assert!(d.reconstruction_error(&w) <= tol);
        prop_assert!(d.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn prop_chebyshev_t_cosine(k in 0usize..12, x in -1.0f64..1.0) {
        let got = cmr::linalg::chebyshev_t_scalar(k, x);
        let expected = (k as f64 * x.acos()).cos();
        prop_assert!((got - expected).abs() <= 1e-12);
    }
}

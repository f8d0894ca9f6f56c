mod common;

use common::*;
use proptest::prelude::*;
use sbattn::{
    alpha_hat, are_disjoint, build_large_mask, compute_a_l, compute_a_s_dense, default_threshold,
    entrywise_exp, expected_large_count, sample_subgaussian, sparsity_report, split, DenseMatrix,
    HasSupport, LargeMask,
};

#[test]
fn split_example() {
    let m = DenseMatrix::from_rows(&[[0.1, 2.5], [0.3, 0.2]]).unwrap();
    let s = split(&m, 1.0).unwrap();
    assert_eq!(s.large.entries(), &[(0, 1, 2.5)]);
    assert_eq!(
        s.small,
        DenseMatrix::from_rows(&[[0.1, 0.0], [0.3, 0.2]]).unwrap()
    );
}

#[test]
fn split_above_max_is_all_small() {
    let m = uniform(6, 3, -1.0, 1.0, 1);
    let s = split(&m, 1.0).unwrap();
    assert_eq!(s.large.nnz(), 0);
    assert_eq!(s.small, m);
}

#[test]
fn split_ties_go_small() {
    let m = DenseMatrix::from_rows(&[[1.0, -1.0, 1.5]]).unwrap();
    let s = split(&m, 1.0).unwrap();
    assert_eq!(s.large.entries(), &[(0, 2, 1.5)]);
    let zero = split(&m, 0.0).unwrap();
    assert_eq!(zero.large.nnz(), 3);
    assert!(split(&m, -0.5).is_err());
}

#[test]
fn mask_examples() {
    let q = DenseMatrix::zeros(3, 2);
    let none = build_large_mask(&split(&q, 0.5).unwrap(), &split(&q, 0.5).unwrap(), 3).unwrap();
    assert!(none.is_empty());

    let q = DenseMatrix::from_rows(&[[0.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap();
    let k = DenseMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]]).unwrap();
    let mask = build_large_mask(&split(&q, 1.0).unwrap(), &split(&k, 1.0).unwrap(), 3).unwrap();
    assert_eq!(
        mask.pattern().positions(),
        &[(0, 2), (1, 0), (1, 1), (1, 2), (2, 2)]
    );
    assert_eq!(mask.len(), 5);
}

#[test]
fn a_l_examples() {
    let q = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
    let k = DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
    let mask = LargeMask::new(1, vec![0], vec![]).unwrap();
    let a = compute_a_l(&q, &k, &mask).unwrap();
    assert_eq!(a.entries(), &[(0, 0, 11.0)]);

    // Empty mask: A^(s) is the full product.
    let q = uniform(5, 3, -0.5, 0.5, 2);
    let k = uniform(5, 3, -0.5, 0.5, 3);
    let (qs, ks) = (split(&q, 1.0).unwrap(), split(&k, 1.0).unwrap());
    let mask = build_large_mask(&qs, &ks, 5).unwrap();
    assert_eq!(compute_a_l(&q, &k, &mask).unwrap().nnz(), 0);
    assert!(max_diff(&compute_a_s_dense(&qs, &ks, &mask).unwrap(), &gram(&q, &k)) <= 1e-15);
}

#[test]
fn a_l_keeps_structural_zeros() {
    let q = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
    let k = DenseMatrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
    let mask = LargeMask::new(2, vec![0], vec![]).unwrap();
    let a = compute_a_l(&q, &k, &mask).unwrap();
    assert!(a.is_structural());
    assert_eq!(a.pattern().len(), 2);
    assert_eq!(a.entries(), &[(0, 0, 0.0), (0, 1, 0.0)]);
}

#[test]
fn expected_count_examples() {
    assert_eq!(expected_large_count(100, 10, 0.0, 1.0).unwrap(), 2000.0);
    let t = (2000f64).ln().sqrt();
    assert!((expected_large_count(100, 10, t, 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(expected_large_count(100, 10, 1.0, 0.0).is_err());
}

#[test]
fn sampler_is_deterministic_and_centered() {
    let a = sample_subgaussian(50, 20, 0.3, 7).unwrap();
    assert_eq!(a, sample_subgaussian(50, 20, 0.3, 7).unwrap());
    assert_ne!(a, sample_subgaussian(50, 20, 0.3, 8).unwrap());
    let mean = a.data().iter().sum::<f64>() / 1000.0;
    assert!(mean.abs() <= 5.0 * 0.3 / 1000f64.sqrt());
    assert!(sample_subgaussian(2, 2, 0.0, 1).is_err());
}

#[test]
fn sampler_tail() {
    let sigma = 0.7;
    let a = sample_subgaussian(1000, 1000, sigma, 11).unwrap();
    for mult in [1.0, 2.0, 3.0] {
        let t: f64 = mult * sigma;
        let frac = a.data().iter().filter(|v| v.abs() > t).count() as f64 / 1e6;
        assert!(
            frac <= 2.0 * (-t * t / (2.0 * sigma * sigma)).exp() * 1.1,
            "t={t}: {frac}"
        );
    }
}

#[test]
fn sparsity_report_fields() {
    let q = sample_subgaussian(256, 8, 0.5, 1).unwrap();
    let k = sample_subgaussian(256, 8, 0.5, 2).unwrap();
    let (qs, ks) = (split(&q, 1.0).unwrap(), split(&k, 1.0).unwrap());
    let mask = build_large_mask(&qs, &ks, 256).unwrap();
    let rep = sparsity_report(&qs, &ks, &mask, 0.5).unwrap();
    assert_eq!(rep.mask_size, mask.pattern().len());
    assert_eq!(rep.count_large_q, qs.large.nnz());
    assert!((rep.alpha_hat - alpha_hat(rep.mask_size, 256)).abs() == 0.0);
    assert_eq!(alpha_hat(256 * 256, 256), 1.0);
}

#[test]
fn default_threshold_formula() {
    assert!((default_threshold(1024, 0.5) - (0.5 * 1024f64.ln()).sqrt()).abs() < 1e-15);
}

#[test]
fn large_entries_stay_sparse() {
    // σ = 0.1 with T = √(0.5·ln n): large entries are astronomically rare.
    for n in [256usize, 1024, 4096] {
        let t = default_threshold(n, 0.5);
        let mut ok = 0;
        for seed in 0..100u64 {
            let q = sample_subgaussian(n, 8, 0.1, seed).unwrap();
            let c = split(&q, t).unwrap().large.nnz();
            if (c as f64) < (n as f64).powf(0.9) {
                ok += 1;
            }
        }
        assert!(ok >= 99, "n={n}: {ok}/100");
    }
}

fn instance() -> impl Strategy<Value = (DenseMatrix, DenseMatrix, f64)> {
    (1usize..24, 1usize..6, any::<u64>(), 0.0f64..2.5).prop_map(|(n, d, seed, t)| {
        let q = sparse_uniform(n, d, 0.2, seed);
        let k = sparse_uniform(n, d, 0.2, seed.wrapping_add(1));
        (q, k, t)
    })
}

proptest! {
    #[test]
    fn split_invariants(m in proptest::collection::vec(-3.0f64..3.0, 32 * 8), t in 0.0f64..3.0) {
        let m = DenseMatrix::from_vec(32, 8, m).unwrap();
        let s = split(&m, t).unwrap();
        prop_assert_eq!(s.large.to_dense().add(&s.small).unwrap(), m.clone());
        prop_assert!(are_disjoint(&[&s.large as &dyn HasSupport, &s.small]).unwrap());
        prop_assert!(s.large.entries().iter().all(|e| e.2.abs() > t));
        prop_assert!(s.small.data().iter().all(|v| v.abs() <= t));
    }

    #[test]
    fn mask_inclusion_exclusion((q, k, t) in instance()) {
        let n = q.rows();
        let (qs, ks) = (split(&q, t).unwrap(), split(&k, t).unwrap());
        let mask = build_large_mask(&qs, &ks, n).unwrap();
        let (r, c) = (mask.large_rows().len(), mask.large_cols().len());
        let mut enumerated = 0;
        for i in 0..n {
            for j in 0..n {
                let in_union = mask.large_rows().contains(&i) || mask.large_cols().contains(&j);
                prop_assert_eq!(in_union, mask.contains(i, j));
                enumerated += in_union as usize;
            }
        }
        prop_assert_eq!(mask.len(), n * r + n * c - r * c);
        prop_assert_eq!(mask.pattern().len(), enumerated);
        prop_assert!(mask.len() <= n * (r + c));
    }

    #[test]
    fn support_basis_identity((q, k, t) in instance()) {
        let n = q.rows();
        let d = q.cols() as f64;
        let (qs, ks) = (split(&q, t).unwrap(), split(&k, t).unwrap());
        let mask = build_large_mask(&qs, &ks, n).unwrap();
        let a_l = compute_a_l(&q, &k, &mask).unwrap();
        let a_s = compute_a_s_dense(&qs, &ks, &mask).unwrap();
        let sum = a_l.to_dense().add(&a_s).unwrap();
        prop_assert!(max_diff(&sum, &gram(&q, &k)) <= 1e-12);
        prop_assert!(are_disjoint(&[&a_l.pattern() as &dyn HasSupport, &a_s]).unwrap());
        // ‖A^(s)/d‖∞ ≤ T², exactly.
        prop_assert!(a_s.data().iter().all(|v| (v / d).abs() <= t * t));
        // exp splits over the two disjoint parts.
        let lhs = entrywise_exp(&sum.scale(1.0 / d)).unwrap();
        let rhs = entrywise_exp(&a_s.scale(1.0 / d)).unwrap()
            .add(&entrywise_exp(&a_l.to_dense().scale(1.0 / d)).unwrap()).unwrap()
            .sub(&DenseMatrix::filled(n, n, 1.0)).unwrap();
        prop_assert!(max_diff_mat(&lhs, &rhs) <= 1e-12 * linf(&lhs).max(1.0));
    }
}

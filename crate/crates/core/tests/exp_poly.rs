mod common;

use common::*;
use proptest::prelude::*;
use sbattn::exp_poly::{DEFAULT_DEGREE_CAP, ENGINE_RANK_CAP};
use sbattn::{
    basis_size, build_low_rank_factors, build_low_rank_factors_checked, enumerate_monomials,
    enumerate_monomials_capped, eval_poly_gram_oracle, fit_exp_polynomial,
    fit_exp_polynomial_capped, matmul_transb, multinomial, rank_bound, DenseMatrix, Error,
    ExpPolynomial,
};

/// Relative error of `p` against `exp` on a grid independent of the
/// certificate grid (prime count, no midpoint offset).
fn dense_grid_rel_error(p: &ExpPolynomial, r: f64) -> f64 {
    let n = 20_011;
    (0..=n)
        .map(|k| {
            let x = -r + 2.0 * r * k as f64 / n as f64;
            (horner(p.coeffs(), x) - x.exp()).abs() / x.exp()
        })
        .fold(0.0, f64::max)
}

#[test]
fn fit_at_zero() {
    let p = fit_exp_polynomial(1.0, 1e-3).unwrap();
    assert!((p.eval(0.0) - 1.0).abs() <= 1e-3);
}

#[test]
fn fit_certificate_holds_on_dense_grid() {
    let p = fit_exp_polynomial(2.0, 1e-6).unwrap();
    assert!(p.certified_error() <= 1e-6);
    // A finer grid may find a slightly larger value between certificate points.
    assert!(dense_grid_rel_error(&p, 2.0) <= 1e-6 * 1.01);
}

#[test]
fn fit_degree_is_minimal() {
    for (r, eps) in [(1.0, 1e-3), (4.0, 1e-6), (10.0, 1e-7), (2.0, 1e-12)] {
        let p = fit_exp_polynomial(r, eps).unwrap();
        let g = p.degree();
        assert!(g > 0);
        let lower = fit_exp_polynomial_capped(r, eps, g - 1);
        assert!(
            matches!(lower, Err(Error::DegreeCapReached { .. })),
            "R={r} eps={eps}"
        );
    }
}

#[test]
fn fit_degree_monotone_in_range() {
    for (eps, ranges) in [
        (1e-3, &[0.5, 1.0, 2.0, 4.0, 8.0, 14.0][..]),
        (1e-6, &[0.5, 1.0, 2.0, 4.0, 8.0][..]),
        (1e-10, &[0.5, 1.0, 2.0, 4.0][..]),
    ] {
        let degs: Vec<usize> = ranges
            .iter()
            .map(|&r| fit_exp_polynomial(r, eps).unwrap().degree())
            .collect();
        assert!(degs.windows(2).all(|w| w[0] <= w[1]), "{degs:?}");
    }
}

#[test]
fn fit_rejects_bad_arguments() {
    assert!(fit_exp_polynomial(0.0, 1e-3).is_err());
    assert!(fit_exp_polynomial(51.0, 1e-3).is_err());
    assert!(fit_exp_polynomial(1.0, 1e-13).is_err());
    assert!(fit_exp_polynomial(1.0, 0.1).is_err());
}

#[test]
fn fit_cap_error_reports_best() {
    match fit_exp_polynomial_capped(20.0, 1e-10, 4).unwrap_err() {
        Error::DegreeCapReached {
            cap,
            best,
            best_degree,
            ..
        } => {
            assert_eq!(cap, 4);
            assert!(best > 1e-10 && best.is_finite());
            assert!(best_degree <= 4);
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn fit_reports_the_rounding_floor() {
    // Evaluating in the monomial basis at x = −R cancels terms of size e^R,
    // so relative accuracy bottoms out near 1e-16·e^{2R}·(small constant).
    match fit_exp_polynomial(12.0, 1e-9).unwrap_err() {
        Error::DegreeCapReached {
            best, best_degree, ..
        } => {
            assert!(best > 1e-9 && best < 1e-5, "{best}");
            assert!(best_degree >= 32);
        }
        e => panic!("unexpected {e:?}"),
    }
    let p = fit_exp_polynomial(50.0, 0.05);
    assert!(p.is_err());
}

#[test]
fn high_degree_fits_stay_accurate() {
    // Degrees well past the minimum must not lose accuracy in conversion.
    for g in [32, 64, 96] {
        let c = sbattn::exp_poly::chebyshev_exp_monomial(1.0, g);
        let p = ExpPolynomial::from_monomial(c, 1.0).unwrap();
        assert!(
            p.certified_error() <= 1e-15,
            "g={g}: {}",
            p.certified_error()
        );
        assert!(dense_grid_rel_error(&p, 1.0) <= 1e-15);
    }
}

#[test]
fn rescaled_polynomial_tracks_scaled_exp() {
    let p = fit_exp_polynomial(3.0, 1e-8)
        .unwrap()
        .rescaled(0.25)
        .unwrap();
    assert_eq!(p.bound(), 12.0);
    for k in 0..=100 {
        let x = -12.0 + 0.24 * k as f64;
        let e = (0.25 * x).exp();
        assert!((p.eval(x) - e).abs() <= 1e-8 * e * 1.01);
    }
}

#[test]
fn monomial_examples() {
    let b = enumerate_monomials(1, 2).unwrap();
    assert_eq!(b.exponents(), &[vec![0], vec![1], vec![2]]);
    let b = enumerate_monomials(2, 1).unwrap();
    assert_eq!(b.exponents(), &[vec![0, 0], vec![1, 0], vec![0, 1]]);
    let b = enumerate_monomials(3, 3).unwrap();
    assert_eq!(b.r(), 20);
}

#[test]
fn monomials_match_brute_force() {
    for d in 1..=5 {
        for g in 0..=6 {
            let b = enumerate_monomials(d, g).unwrap();
            let mut got = b.exponents().to_vec();
            // Graded: total degree never decreases.
            let degs: Vec<u32> = got.iter().map(|e| e.iter().sum()).collect();
            assert!(degs.windows(2).all(|w| w[0] <= w[1]));
            // Lexicographically descending inside each degree.
            assert!(got
                .windows(2)
                .all(|w| w[0].iter().sum::<u32>() < w[1].iter().sum() || w[0] > w[1]));
            let mut want = brute_monomials(d, g);
            got.sort();
            want.sort();
            assert_eq!(got, want, "d={d} g={g}");
            let sum: f64 = (0..=g as u64).map(|j| binom_f(d as u64 + j - 1, j)).sum();
            assert_eq!(b.r() as f64, sum);
            assert_eq!(basis_size(d, g).unwrap(), b.r() as u128);
            assert!(b.r() as u128 <= rank_bound(d, g).unwrap());
        }
    }
}

#[test]
fn monomial_cap_error_carries_r() {
    match enumerate_monomials(16, 8).unwrap_err() {
        Error::BasisTooLarge { r, bound, cap, .. } => {
            assert_eq!(r, 735_471);
            assert!(bound > cap);
        }
        e => panic!("unexpected {e:?}"),
    }
    assert!(enumerate_monomials_capped(16, 8, u128::MAX).is_ok());
    assert!(ENGINE_RANK_CAP >= 735_471);
}

#[test]
fn monomial_values() {
    let b = enumerate_monomials(3, 4).unwrap();
    let x = [0.5, -1.25, 2.0];
    let mut out = vec![0.0; b.r()];
    b.eval_monomials(&x, &mut out);
    for (e, v) in b.exponents().iter().zip(&out) {
        let want: f64 = e
            .iter()
            .zip(&x)
            .map(|(&k, &xi)| xi.powi(k as i32))
            .product();
        assert!((v - want).abs() <= 1e-14 * want.abs().max(1.0));
    }
}

#[test]
fn multinomial_matches_factorials() {
    for e in [
        vec![0],
        vec![3],
        vec![1, 1],
        vec![2, 3, 1],
        vec![4, 0, 4, 2],
        vec![5, 5, 5],
    ] {
        assert_eq!(multinomial(&e).unwrap() as u128, multinomial_naive(&e));
    }
    assert!(matches!(
        multinomial(&[40, 40]),
        Err(Error::MultinomialOverflow(_))
    ));
}

#[test]
fn constant_polynomial_factors() {
    let p = ExpPolynomial::from_monomial(vec![0.75], 1.0).unwrap();
    let q = uniform(5, 3, -1.0, 1.0, 1);
    let k = uniform(5, 3, -1.0, 1.0, 2);
    let f = build_low_rank_factors(&q, &k, &p).unwrap();
    assert_eq!(f.u1, DenseMatrix::filled(5, 1, 0.75));
    assert_eq!(f.u2, DenseMatrix::filled(5, 1, 1.0));
    assert_eq!(
        matmul_transb(&f.u1, &f.u2).unwrap(),
        DenseMatrix::filled(5, 5, 0.75)
    );
    assert_eq!(
        eval_poly_gram_oracle(&q, &k, &p).unwrap(),
        DenseMatrix::filled(5, 5, 0.75)
    );
}

#[test]
fn univariate_factors() {
    let c = vec![1.0, 0.9, 0.45];
    let p = ExpPolynomial::from_monomial(c.clone(), 1.0).unwrap();
    let (qv, kv) = (0.7, -0.4);
    let q = DenseMatrix::from_rows(&[[qv]]).unwrap();
    let k = DenseMatrix::from_rows(&[[kv]]).unwrap();
    let f = build_low_rank_factors(&q, &k, &p).unwrap();
    let got = matmul_transb(&f.u1, &f.u2).unwrap().get(0, 0);
    let want = c[0] + c[1] * qv * kv + c[2] * qv * qv * kv * kv;
    assert!((got - want).abs() <= 1e-15);
    assert!(
        (eval_poly_gram_oracle(&q, &k, &p).unwrap().get(0, 0) - horner(&c, qv * kv)).abs() <= 1e-15
    );
}

#[test]
fn factor_entries_follow_the_formula() {
    let p = fit_exp_polynomial(1.0, 1e-4).unwrap();
    let q = uniform(4, 3, -1.0, 1.0, 3);
    let k = uniform(4, 3, -1.0, 1.0, 4);
    let f = build_low_rank_factors(&q, &k, &p).unwrap();
    for (idx, e) in f.basis.exponents().iter().enumerate() {
        let j: u32 = e.iter().sum();
        let coef = p.coeffs()[j as usize] * multinomial_naive(e) as f64 / 3f64.powi(j as i32);
        for i in 0..4 {
            let mq: f64 = e
                .iter()
                .zip(q.row(i))
                .map(|(&x, &v)| v.powi(x as i32))
                .product();
            let mk: f64 = e
                .iter()
                .zip(k.row(i))
                .map(|(&x, &v)| v.powi(x as i32))
                .product();
            assert!((f.u1.get(i, idx) - coef * mq).abs() <= 1e-14 * (coef * mq).abs().max(1e-300));
            assert!((f.u2.get(i, idx) - mk).abs() <= 1e-14 * mk.abs().max(1e-300));
        }
    }
}

#[test]
fn factor_product_matches_oracle_n16() {
    let q = uniform(16, 3, -1.0, 1.0, 5);
    let k = uniform(16, 3, -1.0, 1.0, 6);
    let p = ExpPolynomial::from_monomial(sbattn::exp_poly::chebyshev_exp_monomial(1.0, 4), 1.0)
        .unwrap();
    let f = build_low_rank_factors(&q, &k, &p).unwrap();
    let prod = matmul_transb(&f.u1, &f.u2).unwrap();
    // Both directions: product vs oracle and oracle vs a scalar Horner loop.
    let oracle = eval_poly_gram_oracle(&q, &k, &p).unwrap();
    assert!(max_diff_mat(&prod, &oracle) <= 1e-10);
    let g = gram(&q, &k);
    let scalar: Vec<Vec<f64>> = g
        .iter()
        .map(|r| r.iter().map(|s| horner(p.coeffs(), s / 3.0)).collect())
        .collect();
    assert!(max_diff(&oracle, &scalar) <= 1e-13);
}

#[test]
fn relative_approximation_of_exp() {
    let q = uniform(32, 4, -1.0, 1.0, 7);
    let k = uniform(32, 4, -1.0, 1.0, 8);
    let r = q.max_abs() * k.max_abs();
    let eps = 1e-7;
    let p = fit_exp_polynomial(r, eps).unwrap();
    let f = build_low_rank_factors_checked(&q, &k, &p).unwrap();
    let prod = matmul_transb(&f.u1, &f.u2).unwrap();
    let a = exp_gram(&q, &k);
    for i in 0..32 {
        for j in 0..32 {
            assert!((prod.get(i, j) - a[i][j]).abs() <= (eps + 1e-9) * a[i][j]);
        }
    }
}

#[test]
fn checked_build_reports_bound_violation() {
    let q = DenseMatrix::filled(2, 2, 2.0);
    let p = fit_exp_polynomial(1.0, 1e-3).unwrap();
    assert!(matches!(
        build_low_rank_factors_checked(&q, &q, &p),
        Err(Error::BoundViolation { .. })
    ));
}

#[test]
fn factors_are_reproducible() {
    let q = uniform(8, 3, -1.0, 1.0, 9);
    let p = fit_exp_polynomial(1.0, 1e-6).unwrap();
    let a = build_low_rank_factors(&q, &q, &p).unwrap();
    let b = build_low_rank_factors(&q, &q, &p).unwrap();
    assert_eq!(a.u1, b.u1);
    assert_eq!(a.u2, b.u2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factor_exactness(
        n in 1usize..40, d in 1usize..=6, g in 0usize..=8, seed in any::<u64>(), r in 0.1f64..3.0,
    ) {
        let q = uniform(n, d, -1.0, 1.0, seed);
        let k = uniform(n, d, -1.0, 1.0, seed ^ 0x5555);
        let coeffs = sbattn::exp_poly::chebyshev_exp_monomial(r, g);
        let p = ExpPolynomial::from_monomial(coeffs, r).unwrap();
        let f = build_low_rank_factors(&q, &k, &p).unwrap();
        let prod = matmul_transb(&f.u1, &f.u2).unwrap();
        let oracle = eval_poly_gram_oracle(&q, &k, &p).unwrap();
        prop_assert!(max_diff_mat(&prod, &oracle) <= 1e-9);
        prop_assert!(f.basis.r() as u128 <= rank_bound(d, g).unwrap());
    }

    #[test]
    fn certificate_holds(r in 0.05f64..20.0, e in 2u32..13) {
        let eps = 10f64.powi(-(e as i32));
        match fit_exp_polynomial(r, eps) {
            Ok(p) => {
                prop_assert!(p.certified_error() <= eps);
                prop_assert!(p.degree() <= DEFAULT_DEGREE_CAP);
            }
            Err(Error::DegreeCapReached { best, .. }) => {
                prop_assert!(best > eps);
                // Only ranges near the rounding floor may fail.
                prop_assert!(1e-16 * (2.0 * r).exp() > eps * 1e-3, "R={} eps={}", r, eps);
            }
            Err(e) => prop_assert!(false, "{}", e),
        }
    }
}

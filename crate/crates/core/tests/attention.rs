mod common;

use common::*;
use sbattn::{
    approx_attention_single, exact_attention, gaussian_kde_single, kde_parts, poly_attention_as23,
    sample_subgaussian, verify_normalization_error, AttentionInputs, DenseMatrix, Engine,
};

fn gaussian_inputs(n: usize, d: usize, sigma: f64, seed: u64) -> AttentionInputs {
    AttentionInputs::new(
        sample_subgaussian(n, d, sigma, seed).unwrap(),
        sample_subgaussian(n, d, sigma, seed + 1).unwrap(),
        sample_subgaussian(n, d, 1.0, seed + 2).unwrap(),
    )
    .unwrap()
}

#[test]
fn exact_scalar_case() {
    let one = DenseMatrix::filled(1, 1, 1.0);
    let inp = AttentionInputs::new(one.clone(), one.clone(), one).unwrap();
    let out = exact_attention(&inp).unwrap();
    assert_eq!(out.p.get(0, 0), 1.0);
    assert!((out.row_sums[0] - std::f64::consts::E).abs() < 1e-15);
    assert_eq!(out.engine, Engine::Exact);
}

#[test]
fn exact_with_ones_value() {
    let mut inp = gaussian_inputs(20, 5, 0.5, 1);
    inp.v = DenseMatrix::filled(20, 5, 1.0);
    let out = exact_attention(&inp).unwrap();
    assert!(out.p.data().iter().all(|v| (v - 1.0).abs() <= 1e-12));
}

#[test]
fn exact_matches_naive_loop() {
    let inp = AttentionInputs::new(
        uniform(24, 4, -1.0, 1.0, 1),
        uniform(24, 4, -1.0, 1.0, 2),
        uniform(24, 4, -1.0, 1.0, 3),
    )
    .unwrap();
    let out = exact_attention(&inp).unwrap();
    assert!(max_diff(&out.p, &naive_attention(&inp.q, &inp.k, &inp.v)) <= 1e-13);
}

#[test]
fn exact_rows_are_stochastic() {
    let inp = gaussian_inputs(100, 6, 1.0, 4);
    let out = exact_attention(&inp).unwrap();
    let a = exp_gram(&inp.q, &inp.k);
    for (i, row) in a.iter().enumerate() {
        let s: f64 = row.iter().map(|x| x / out.row_sums[i]).sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn exact_guard_trips() {
    let q = DenseMatrix::filled(2, 1, 30.0);
    let inp = AttentionInputs::new(q.clone(), q, DenseMatrix::filled(2, 1, 1.0)).unwrap();
    assert!(exact_attention(&inp).is_err());
}

#[test]
fn inputs_validate_shapes() {
    let a = DenseMatrix::zeros(4, 3);
    assert!(AttentionInputs::new(a.clone(), DenseMatrix::zeros(4, 2), a.clone()).is_err());
    assert!(AttentionInputs::new(a.clone(), a.clone(), DenseMatrix::zeros(3, 3)).is_err());
    assert!(AttentionInputs::new(a.clone(), a.clone(), DenseMatrix::zeros(4, 7)).is_ok());
    assert!(AttentionInputs::new(a.clone(), a, DenseMatrix::zeros(4, 0)).is_err());
}

#[test]
fn as23_zero_inputs_average_v() {
    let z = DenseMatrix::zeros(10, 3);
    let v = uniform(10, 2, -1.0, 1.0, 5);
    let inp = AttentionInputs::new(z.clone(), z, v.clone()).unwrap();
    let out = poly_attention_as23(&inp, 1e-6).unwrap();
    let mean = v.col_sums().iter().map(|s| s / 10.0).collect::<Vec<_>>();
    for i in 0..10 {
        for (c, m) in mean.iter().enumerate() {
            assert!((out.p.get(i, c) - m).abs() <= 1e-6 * linf(&v));
        }
    }
}

#[test]
fn as23_small_entries() {
    let inp = AttentionInputs::new(
        uniform(64, 8, -0.3, 0.3, 6),
        uniform(64, 8, -0.3, 0.3, 7),
        uniform(64, 8, -1.0, 1.0, 8),
    )
    .unwrap();
    let eps0 = 1e-6;
    let out = poly_attention_as23(&inp, eps0).unwrap();
    let err = max_diff(&out.p, &naive_attention(&inp.q, &inp.k, &inp.v));
    assert!(err <= 10.0 * eps0 * linf(&inp.v), "{err}");
    assert_eq!(out.engine, Engine::As23);
}

#[test]
fn kde_empty_mask_is_pure_polynomial() {
    let inp = gaussian_inputs(64, 4, 0.1, 9);
    let t = inp.q.max_abs().max(inp.k.max_abs());
    let parts = kde_parts(&inp, t, 1e-8).unwrap();
    assert!(parts.mask.is_empty());
    let out = approx_attention_single(&inp, t, 1e-8).unwrap();
    let as23 = poly_attention_as23(&inp, 1e-8).unwrap();
    assert_eq!(out.p, as23.p);
    assert_eq!(out.row_sums, as23.row_sums);
}

#[test]
fn kde_full_mask_is_exact() {
    let inp = AttentionInputs::new(
        uniform(32, 4, 0.1, 1.0, 10),
        uniform(32, 4, 0.1, 1.0, 11),
        uniform(32, 3, -1.0, 1.0, 12),
    )
    .unwrap();
    let s = gaussian_kde_single(&inp, 0.0, 1e-6).unwrap();
    let want = triple_loop(&exp_gram(&inp.q, &inp.k), &to_rows(&inp.v));
    assert!(max_diff(&s, &want) <= 1e-9);
}

#[test]
fn kde_error_bound() {
    let inp = gaussian_inputs(128, 8, 0.1, 13);
    let eps0 = 1e-8;
    let s = gaussian_kde_single(&inp, 0.3, eps0).unwrap();
    let want = triple_loop(&exp_gram(&inp.q, &inp.k), &to_rows(&inp.v));
    let err = max_diff(&s, &want);
    assert!(err <= 128.0 * eps0 * linf(&inp.v), "{err}");
}

#[test]
fn kde_mask_entries_are_exact() {
    // Large entries in one row of Q and one row of K; values far outside
    // the small-part range so any polynomial leak would show.
    let mut q = uniform(16, 3, -0.2, 0.2, 14);
    let mut k = uniform(16, 3, -0.2, 0.2, 15);
    q = q.with_entry(3, 1, 4.0).unwrap();
    k = k.with_entry(7, 0, -5.0).unwrap();
    let v = DenseMatrix::identity(16);
    let inp = AttentionInputs::new(q, k, v).unwrap();
    let parts = kde_parts(&inp, 0.5, 1e-10).unwrap();
    assert_eq!(parts.mask.large_rows(), &[3]);
    assert_eq!(parts.mask.large_cols(), &[7]);
    // With V = I the output is the kernel matrix itself.
    let a = exp_gram(&inp.q, &inp.k);
    for i in 0..16 {
        for j in 0..16 {
            let got = parts.s.get(i, j);
            if parts.mask.contains(i, j) {
                assert!((got - a[i][j]).abs() <= 1e-14 * a[i][j], "({i},{j})");
            } else {
                assert!((got - a[i][j]).abs() <= 1e-9 * a[i][j], "({i},{j})");
            }
        }
    }
}

#[test]
fn single_threshold_column_constant_v() {
    let mut inp = gaussian_inputs(40, 4, 0.3, 16);
    inp.v = DenseMatrix::from_fn(40, 3, |_, j| j as f64 - 1.0);
    let out = approx_attention_single(&inp, 0.3, 1e-8).unwrap();
    for i in 0..40 {
        for j in 0..3 {
            assert!((out.p.get(i, j) - (j as f64 - 1.0)).abs() <= 1e-12);
        }
    }
}

#[test]
fn engines_agree_on_small_entries() {
    let inp = AttentionInputs::new(
        uniform(48, 6, -0.2, 0.2, 17),
        uniform(48, 6, -0.2, 0.2, 18),
        uniform(48, 6, -1.0, 1.0, 19),
    )
    .unwrap();
    let eps0 = 1e-10;
    let exact = exact_attention(&inp).unwrap().p;
    let as23 = poly_attention_as23(&inp, eps0).unwrap().p;
    let single = approx_attention_single(&inp, 0.1, eps0).unwrap().p;
    let tol = 1e-7 * linf(&inp.v);
    assert!(max_diff_mat(&as23, &exact) <= tol);
    assert!(max_diff_mat(&single, &exact) <= tol);
    assert!(max_diff_mat(&single, &as23) <= tol);
}

#[test]
fn error_shrinks_with_lower_threshold() {
    let inp = gaussian_inputs(256, 8, 0.3, 20);
    let eps0 = 1e-6;
    let exact = exact_attention(&inp).unwrap().p;
    let as23 = max_diff_mat(&poly_attention_as23(&inp, eps0).unwrap().p, &exact);
    let mut prev = f64::INFINITY;
    for t in [1.2, 1.0, 0.8, 0.6, 0.4, 0.2] {
        let err = max_diff_mat(&approx_attention_single(&inp, t, eps0).unwrap().p, &exact);
        assert!(
            err <= prev.max(1e-12) * (1.0 + 1e-9) || err <= 1e-12,
            "T={t}: {err} after {prev}"
        );
        assert!(err <= as23 + 1e-15, "T={t}: {err} vs {as23}");
        prev = err;
    }
}

#[test]
fn normalization_error_examples() {
    let a = uniform(5, 5, 0.5, 2.0, 21);
    assert_eq!(verify_normalization_error(&a, &a).unwrap(), 0.0);
    let b = a.scale(1.25);
    assert!((verify_normalization_error(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    assert!(matches!(
        verify_normalization_error(&DenseMatrix::zeros(2, 2), &a.select_rows(&[0, 1])),
        Err(_)
    ));
    for seed in 0..20 {
        let a = uniform(6, 6, 0.1, 3.0, 100 + seed);
        let noise = uniform(6, 6, -0.05, 0.05, 200 + seed);
        let b = a.hadamard(&noise.map(|x| 1.0 + x)).unwrap();
        let entry_rel = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x)
            .fold(0.0, f64::max);
        assert!(verify_normalization_error(&a, &b).unwrap() <= entry_rel * (1.0 + 1e-12));
    }
}

#[test]
fn outputs_independent_of_thread_count() {
    let inp = gaussian_inputs(300, 8, 0.3, 22);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    exact_attention(&inp).unwrap().p,
                    poly_attention_as23(&inp, 1e-6).unwrap().p,
                    approx_attention_single(&inp, 0.4, 1e-6).unwrap().p,
                )
            })
    };
    assert_eq!(run(1), run(4));
}

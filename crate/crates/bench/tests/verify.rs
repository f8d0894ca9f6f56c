use sbattn_bench::verify::{factorization_case, factorization_check, run_suite, Suite};

#[test]
fn fast_suite_passes_and_is_deterministic() {
    let a = run_suite(Suite::Fast, 0);
    assert!(a.iter().all(|c| c.pass), "{a:#?}");
    assert_eq!(a, run_suite(Suite::Fast, 0));
}

#[test]
fn corrupted_factor_fails_the_exactness_check() {
    let (q, k, poly, mut f) = factorization_case(0).unwrap();
    assert!(factorization_check(&q, &k, &poly, &f).pass);
    f.u1 = f.u1.with_entry(3, 2, f.u1.get(3, 2) + 1e-3).unwrap();
    let c = factorization_check(&q, &k, &poly, &f);
    assert!(!c.pass, "{c}");
}

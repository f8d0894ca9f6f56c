//! Invariant checks run by `sbattn verify`.
//!
//! Each check recomputes its reference with plain loops and reports the
//! measured value. The fast suite keeps `n ≤ 256`; the full suite adds the
//! n = 8192 sweep.

use sbattn::{
    approx_attention_multi_with_scheme, approx_attention_single, are_disjoint, bucket_scheme,
    build_large_mask, build_low_rank_factors, compute_a_l, compute_a_s_dense, decompose_blocks,
    exact_attention, expand_block, expected_large_count, fit_exp_polynomial,
    gaussian_variance_proxy, matmul_transb, poly_attention_as23, sample_subgaussian,
    single_bucket_scheme, sketch_error_bound, sketched_poly_kernel, split, AttentionInputs,
    DenseMatrix, Engine, ExpPolynomial, HasSupport, LowRankFactors, MultiConfig, SketchSpec,
};

use crate::config::Settings;
use crate::sweep::{run_sweep, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fast,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            _ => Err(format!("unknown suite '{s}' (expected fast or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, result: Result<(bool, String), sbattn::Error>) -> Check {
    match result {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max |A − f(⟨Q_i, K_j⟩)|` with the inner products taken by plain loops.
fn max_dev(a: &DenseMatrix, q: &DenseMatrix, k: &DenseMatrix, f: impl Fn(f64) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..q.rows() {
        for j in 0..k.rows() {
            worst = worst.max((a.get(i, j) - f(dot(q.row(i), k.row(j)))).abs());
        }
    }
    worst
}

fn linf_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn support_identity(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let (mut worst, mut ok) = (0.0f64, true);
    for (i, &(n, d, t)) in [(64, 4, 0.5), (64, 8, 1.0), (128, 4, 1.5), (128, 8, 2.0)]
        .iter()
        .enumerate()
    {
        let s = seed.wrapping_add(100 + 2 * i as u64);
        let q = sample_subgaussian(n, d, 1.0, s)?;
        let k = sample_subgaussian(n, d, 1.0, s + 1)?;
        let (qs, ks) = (split(&q, t)?, split(&k, t)?);
        let mask = build_large_mask(&qs, &ks, n)?;
        let a_l = compute_a_l(&q, &k, &mask)?;
        let a_s = compute_a_s_dense(&qs, &ks, &mask)?;
        worst = worst.max(max_dev(&a_l.to_dense().add(&a_s)?, &q, &k, |x| x));
        ok &= are_disjoint(&[&a_l as &dyn HasSupport, &a_s])?;
        ok &= a_s.max_abs() / d as f64 <= t * t;
    }
    Ok((
        ok && worst <= 1e-12,
        format!("max deviation {worst:.3e}, disjoint and bounded: {ok}"),
    ))
}

fn exp_split(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let (n, d) = (32, 4);
    let q = sample_subgaussian(n, d, 1.0, seed.wrapping_add(200))?;
    let k = sample_subgaussian(n, d, 1.0, seed.wrapping_add(201))?;
    let (qs, ks) = (split(&q, 1.0)?, split(&k, 1.0)?);
    let mask = build_large_mask(&qs, &ks, n)?;
    let a_l = compute_a_l(&q, &k, &mask)?.to_dense();
    let a_s = compute_a_s_dense(&qs, &ks, &mask)?;
    let dd = d as f64;
    let sum = DenseMatrix::from_fn(n, n, |i, j| {
        (a_s.get(i, j) / dd).exp() + (a_l.get(i, j) / dd).exp() - 1.0
    });
    let err = max_dev(&sum, &q, &k, |x| (x / dd).exp());
    Ok((err <= 1e-12, format!("max deviation {err:.3e}")))
}

fn block_identity(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let (n, d) = (32, 3);
    let q = sample_subgaussian(n, d, 1.0, seed.wrapping_add(300))?;
    let k = sample_subgaussian(n, d, 1.0, seed.wrapping_add(301))?;
    let scheme = bucket_scheme(&q, &k, 1.0)?;
    let m2 = (scheme.m * scheme.m) as f64;
    let dd = d as f64;
    let mut sum = DenseMatrix::filled(n, n, 1.0 - m2);
    for b in decompose_blocks(&q, &k, &scheme)? {
        sum = sum.add(&expand_block(&q, &k, &b).map(|x| (x / dd).exp()))?;
    }
    let err = max_dev(&sum, &q, &k, |x| (x / dd).exp());
    Ok((
        err <= 1e-12 * m2,
        format!("m = {}, max deviation {err:.3e}", scheme.m),
    ))
}

fn chebyshev_certificate() -> Result<(bool, String), sbattn::Error> {
    let mut ok = true;
    let mut degrees = Vec::new();
    for eps in [1e-3, 1e-6] {
        let mut prev = 0;
        for r in [1.0, 2.0, 4.0] {
            let p = fit_exp_polynomial(r, eps)?;
            let steps = 10_000;
            let err = (0..=steps)
                .map(|i| -r + 2.0 * r * i as f64 / steps as f64)
                .map(|x| (p.eval(x) - x.exp()).abs() / x.exp())
                .fold(0.0, f64::max);
            ok &= err <= eps && p.degree() >= prev;
            prev = p.degree();
            degrees.push(p.degree());
        }
    }
    Ok((ok, format!("degrees {degrees:?}")))
}

/// `‖U₁U₂ᵀ − P(QKᵀ/d)‖∞ ≤ 1e-9` for the given factors.
pub fn factorization_check(
    q: &DenseMatrix,
    k: &DenseMatrix,
    poly: &ExpPolynomial,
    f: &LowRankFactors,
) -> Check {
    let res = matmul_transb(&f.u1, &f.u2).map(|g| {
        let d = q.cols() as f64;
        let err = max_dev(&g, q, k, |x| poly.eval(x / d));
        (
            err <= 1e-9,
            format!("r = {}, max deviation {err:.3e}", f.u1.cols()),
        )
    });
    check("factorization exactness", res)
}

/// The inputs used by the factorization check of the fast suite.
pub fn factorization_case(
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix, ExpPolynomial, LowRankFactors), sbattn::Error> {
    let q = sample_subgaussian(64, 3, 0.5, seed.wrapping_add(400))?;
    let k = sample_subgaussian(64, 3, 0.5, seed.wrapping_add(401))?;
    let c: Vec<f64> = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0].to_vec();
    let poly = ExpPolynomial::from_monomial(c, 1.0)?;
    let f = build_low_rank_factors(&q, &k, &poly)?;
    Ok((q, k, poly, f))
}

fn sketch_suite(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let (eps, delta) = (0.5, 0.05);
    let mut negatives = 0;
    let mut rates = Vec::new();
    let mut ok = true;
    for p in [2usize, 4] {
        let mut hits = 0;
        for t in 0..100u64 {
            let s = seed.wrapping_add(1000 * p as u64 + t);
            let u1 = sample_subgaussian(16, 6, 0.5, s)?;
            let u2 = sample_subgaussian(16, 6, 0.5, s.wrapping_add(500))?;
            let spec = SketchSpec::new(p, 6, 16, eps, delta, 8.0, s)?;
            let got = sketched_poly_kernel(&u1, &u2, &spec)?;
            negatives += got.data().iter().filter(|&&v| v < 0.0).count();
            let err = max_dev(&got, &u1, &u2, |x| x.powi(p as i32));
            hits += (err <= sketch_error_bound(&u1, &u2, eps, p)) as usize;
        }
        ok &= hits >= 95;
        rates.push(format!("p={p}: {hits}/100"));
    }
    Ok((
        ok && negatives == 0,
        format!("{}, negative kernel entries {negatives}", rates.join(", ")),
    ))
}

fn inputs(n: usize, d: usize, sigma: f64, seed: u64) -> Result<AttentionInputs, sbattn::Error> {
    AttentionInputs::new(
        sample_subgaussian(n, d, sigma, seed)?,
        sample_subgaussian(n, d, sigma, seed.wrapping_add(1))?,
        sample_subgaussian(n, d, 1.0, seed.wrapping_add(2))?,
    )
}

fn normalization(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let mut inp = inputs(128, 8, 0.3, seed.wrapping_add(600))?;
    inp.v = DenseMatrix::filled(128, 2, 1.0);
    let ones = DenseMatrix::filled(128, 2, 1.0);
    let e1 = linf_diff(&exact_attention(&inp)?.p, &ones);
    let e2 = linf_diff(&approx_attention_single(&inp, 0.5, 1e-6)?.p, &ones);
    let err = e1.max(e2);
    Ok((err <= 1e-12, format!("max |row - 1| {err:.3e}")))
}

fn end_to_end(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let inp = inputs(256, 16, 0.1, seed.wrapping_add(700))?;
    let eps0 = 1e-7;
    let exact = exact_attention(&inp)?.p;
    let as23 = linf_diff(&poly_attention_as23(&inp, eps0)?.p, &exact);
    let envelope = 4.0 * eps0 * inp.v.max_abs();
    let mut worst = 0.0f64;
    let mut ok = true;
    for i in 0..8 {
        let t = 0.15 + 0.05 * i as f64;
        let e = linf_diff(&approx_attention_single(&inp, t, eps0)?.p, &exact);
        ok &= e <= envelope && e <= as23;
        worst = worst.max(e);
    }
    Ok((
        ok,
        format!("worst support-basis error {worst:.3e}, AS23 {as23:.3e}, envelope {envelope:.3e}"),
    ))
}

fn empty_mask(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let inp = inputs(128, 8, 0.1, seed.wrapping_add(800))?;
    let t = inp.q.max_abs().max(inp.k.max_abs());
    let a = approx_attention_single(&inp, t, 1e-7)?.p;
    let b = poly_attention_as23(&inp, 1e-7)?.p;
    let same = a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same, format!("bit-equal to AS23: {same}")))
}

fn single_bucket(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let inp = inputs(32, 4, 0.05, seed.wrapping_add(900))?;
    let eps0 = 1e-8;
    let scheme = single_bucket_scheme(&inp.q, &inp.k)?;
    let cfg = MultiConfig {
        eps0,
        seed,
        ..Default::default()
    };
    let m = approx_attention_multi_with_scheme(&inp, &scheme, &cfg)?;
    let poly = poly_attention_as23(&inp, eps0)?.p;
    let diff = linf_diff(&m.out.p, &poly);
    let budget = 2.0 * (m.sketch_terms() + 2.0 * eps0) * inp.v.max_abs();
    Ok((
        diff <= budget,
        format!("m=1 vs single polynomial {diff:.3e}, budget {budget:.3e}"),
    ))
}

fn sparsity(seed: u64) -> Result<(bool, String), sbattn::Error> {
    let (n, d, sigma, t) = (256, 16, 0.2, 0.4);
    let mut total = 0usize;
    for s in 0..50u64 {
        let q = sample_subgaussian(n, d, sigma, seed.wrapping_add(1100 + s))?;
        total += q.data().iter().filter(|v| v.abs() > t).count();
    }
    let mean = total as f64 / 50.0;
    let bound = expected_large_count(n, d, t, gaussian_variance_proxy(sigma))?;
    Ok((
        mean <= 1.2 * bound,
        format!("mean large entries {mean:.2}, bound {bound:.2}"),
    ))
}

/// Shape checks on the n = 8192 sweep: support-basis time non-increasing in
/// the threshold and below exact at some threshold, error at most AS23's.
pub fn sweep_checks(rows: &[SweepRow]) -> Vec<Check> {
    let pick = |e: Engine| rows.iter().filter(|r| r.engine == e).collect::<Vec<_>>();
    let (sb, exact, as23) = (
        pick(Engine::SupportBasis),
        pick(Engine::Exact),
        pick(Engine::As23),
    );
    let times: Vec<f64> = sb.iter().map(|r| r.wall_ms_median).collect();
    let non_increasing = times.windows(2).all(|w| w[1] <= w[0]);
    let exact_ms = exact.first().map_or(f64::NAN, |r| r.wall_ms_median);
    let crosses = times.iter().any(|&t| t < exact_ms);
    let ordered = sb.iter().zip(&as23).all(|(s, a)| s.linf_err <= a.linf_err);
    vec![
        Check {
            name: "sweep time shape",
            pass: non_increasing && crosses,
            detail: format!("support-basis ms {times:.1?}, exact {exact_ms:.1} ms"),
        },
        Check {
            name: "sweep error ordering",
            pass: ordered && sb.len() == as23.len() && !sb.is_empty(),
            detail: format!(
                "support-basis linf [{}], AS23 {:.2e}",
                sb.iter()
                    .map(|r| format!("{:.2e}", r.linf_err))
                    .collect::<Vec<_>>()
                    .join(", "),
                as23.first().map_or(f64::NAN, |r| r.linf_err)
            ),
        },
    ]
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    let mut out = vec![
        check("support-basis identity", support_identity(seed)),
        check("exp split", exp_split(seed)),
        check("multi-block identity", block_identity(seed)),
        check("Chebyshev certificate", chebyshev_certificate()),
    ];
    out.push(match factorization_case(seed) {
        Ok((q, k, poly, f)) => factorization_check(&q, &k, &poly, &f),
        Err(e) => check("factorization exactness", Err(e)),
    });
    out.extend([
        check("sketch suite", sketch_suite(seed)),
        check("row normalization", normalization(seed)),
        check("end-to-end error", end_to_end(seed)),
        check("empty mask equals AS23", empty_mask(seed)),
        check("single bucket equals one polynomial", single_bucket(seed)),
        check("sub-Gaussian sparsity", sparsity(seed)),
    ]);
    if suite == Suite::Full {
        let s = Settings {
            seed,
            ..Settings::default()
        };
        match run_sweep(&s) {
            Ok(rows) => out.extend(sweep_checks(&rows)),
            Err(e) => out.push(check("n=8192 sweep", Err(e))),
        }
    }
    out
}

//! Relative-error polynomial fits of `exp` and the monomial factorization
//! `P(QKᵀ/d) = U₁U₂ᵀ`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest interval half-width accepted by [`fit_exp_polynomial`].
pub const MAX_RANGE: f64 = 50.0;
/// Smallest accepted target relative error.
pub const MIN_EPS: f64 = 1e-12;
/// Number of uniform certificate points (the two endpoints are added on top).
pub const CERT_GRID: usize = 10_000;
pub const DEFAULT_DEGREE_CAP: usize = 96;
pub const DEFAULT_BASIS_CAP: u128 = 1_000_000;
/// Rank limit used by the attention engines instead of the bound cap; they
/// stream the factors, so memory is `O(r·d)` and only `r` matters.
pub const ENGINE_RANK_CAP: u128 = 4_000_000;

/// Polynomial `P(x) = Σ c_j x^j` with `|P(x) − e^{s·x}| ≤ eps·e^{s·x}` on `[−R, R]`,
/// where `s` is [`ExpPolynomial::scale`] (1 for a plain fit).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPolynomial {
    coeffs: Vec<f64>,
    bound: f64,
    scale: f64,
    target_eps: f64,
    certified: f64,
}

impl ExpPolynomial {
    /// Wraps raw monomial coefficients; the certificate is measured, not required.
    pub fn from_monomial(coeffs: Vec<f64>, bound: f64) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "coefficients must be finite and non-empty".into(),
            ));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad bound {bound}")));
        }
        let certified = grid_rel_error(&coeffs, bound, 1.0);
        Ok(Self {
            coeffs,
            bound,
            scale: 1.0,
            target_eps: certified,
            certified,
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Half-width `R` of the validity interval.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn target_eps(&self) -> f64 {
        self.target_eps
    }

    /// Max relative error measured on the certificate grid.
    pub fn certified_error(&self) -> f64 {
        self.certified
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }

    /// `x ↦ P(s·x)`: approximates `e^{scale·s·x}` on `[−R/s, R/s]` with the same error.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rescale factor {s} must be positive"
            )));
        }
        let mut p = 1.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let v = c * p;
                p *= s;
                v
            })
            .collect();
        Ok(Self {
            coeffs,
            bound: self.bound / s,
            scale: self.scale * s,
            target_eps: self.target_eps,
            certified: self.certified,
        })
    }
}

#[inline]
pub(crate) fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cj| acc * x + cj)
}

/// Certificate points: cell midpoints of a uniform partition plus both endpoints.
fn cert_points(r: f64) -> impl Iterator<Item = f64> {
    let h = 2.0 * r / CERT_GRID as f64;
    (0..CERT_GRID)
        .map(move |k| -r + (k as f64 + 0.5) * h)
        .chain([-r, r])
}

fn grid_rel_error(coeffs: &[f64], r: f64, scale: f64) -> f64 {
    cert_points(r)
        .map(|x| {
            let e = (scale * x).exp();
            (horner(coeffs, x) - e).abs() / e
        })
        .fold(0.0, f64::max)
}

/// `I_0(r), …, I_kmax(r)` by backward recurrence, normalized with
/// `e^r = I_0 + 2ΣI_k`.
fn bessel_i(r: f64, kmax: usize) -> Vec<f64> {
    let top = kmax.max(r.ceil() as usize) + 60;
    let mut b = vec![0.0; top + 2];
    b[top] = 1e-280;
    for k in (1..=top).rev() {
        b[k - 1] = 2.0 * k as f64 / r * b[k] + b[k + 1];
        if b[k - 1] > 1e250 {
            for v in &mut b[k - 1..] {
                *v *= 1e-250;
            }
        }
    }
    let sum = b[0] + 2.0 * b[1..].iter().sum::<f64>();
    // e^r/sum can overflow on its own for large r; split the factor.
    let (half, scale) = ((r / 2.0).exp(), 1.0 / sum);
    b.truncate(kmax + 1);
    b.iter().map(|v| v * scale * half * half).collect()
}

/// Chebyshev interpolant of `exp` on `[−R, R]` at `g + 1` first-kind nodes,
/// returned in the monomial basis.
///
/// Converting through the `T_k` coefficient tables directly loses all
/// accuracy by degree ~50, since those tables grow like `2^k` while the
/// result does not. Instead the interpolant is written as the exact
/// series `e^{Rt} = Σ a_l T_l(t)` (`a_l = 2I_l(R)`) with its aliasing folded
/// in, and each monomial coefficient is taken from whichever of two
/// equivalent sums cancels less: the interpolant's own `T_k` terms, or the
/// Taylor coefficient minus the out-of-range part of the series.
pub fn chebyshev_exp_monomial(r: f64, g: usize) -> Vec<f64> {
    let n = g + 1;
    let lmax = 3 * n + 2 * r.ceil() as usize + 40;
    let mut a = bessel_i(r, lmax);
    for al in a.iter_mut().skip(1) {
        *al *= 2.0;
    }
    // Node aliasing: T_{2mn+s} equals (−1)^m T_{|s|} at the nodes, and
    // vanishes there when |s| = n.
    let mut delta = vec![0.0; n];
    for (l, &al) in a.iter().enumerate().skip(n) {
        let m = (l + n) / (2 * n);
        let s = l as i64 - (2 * m * n) as i64;
        let k = s.unsigned_abs() as usize;
        if k < n {
            delta[k] += if m % 2 == 0 { al } else { -al };
        }
    }
    // Monomial coefficients of T_l(t) for l ≤ lmax, row by row.
    let width = lmax + 1;
    let mut cheb = vec![0.0; width * width];
    cheb[0] = 1.0;
    cheb[width + 1] = 1.0;
    for l in 2..=lmax {
        for j in 0..=l {
            let up = if j > 0 {
                2.0 * cheb[(l - 1) * width + j - 1]
            } else {
                0.0
            };
            cheb[l * width + j] = up - cheb[(l - 2) * width + j];
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut rj = 1.0; // R^j
    let mut fact = 1.0; // j!
    for j in 0..n {
        if j > 0 {
            rj *= r;
            fact *= j as f64;
        }
        let (mut head, mut head_abs) = (0.0, 0.0);
        let (mut fix, mut fix_abs) = (0.0, 0.0);
        for k in j..n {
            let c = cheb[k * width + j];
            let h = (a[k] + delta[k]) * c;
            head += h;
            head_abs += h.abs();
            let f = delta[k] * c;
            fix += f;
            fix_abs += f.abs();
        }
        let taylor = rj / fact;
        let (mut tail, mut tail_abs) = (0.0, 0.0);
        for l in n.max(j)..=lmax {
            let t = a[l] * cheb[l * width + j];
            tail += t;
            tail_abs += t.abs();
        }
        let b = if head_abs <= taylor + tail_abs + fix_abs {
            head
        } else {
            taylor - tail + fix
        };
        // t = x / R.
        out.push(b / rj);
    }
    out
}

/// Fits `P ≈ exp` on `[−R, R]` with certified relative error `eps`.
pub fn fit_exp_polynomial(r: f64, eps: f64) -> Result<ExpPolynomial> {
    fit_exp_polynomial_capped(r, eps, DEFAULT_DEGREE_CAP)
}

/// As [`fit_exp_polynomial`] with an explicit degree cap. The search tries
/// degree 0, then 1, 2, 4, … until the grid certificate passes, then bisects
/// between the last failing and first passing degree.
pub fn fit_exp_polynomial_capped(r: f64, eps: f64, cap: usize) -> Result<ExpPolynomial> {
    if !(r > 0.0 && r <= MAX_RANGE) {
        return Err(Error::InvalidArgument(format!(
            "range R={r} must lie in (0, {MAX_RANGE}]"
        )));
    }
    if !(eps >= MIN_EPS && eps < 0.1) {
        return Err(Error::InvalidArgument(format!(
            "eps={eps} must lie in [{MIN_EPS}, 0.1)"
        )));
    }
    let mut best = (f64::INFINITY, 0usize);
    let try_degree = |g: usize, best: &mut (f64, usize)| {
        let c = chebyshev_exp_monomial(r, g);
        let err = grid_rel_error(&c, r, 1.0);
        if err < best.0 {
            *best = (err, g);
        }
        (c, err)
    };

    let (c0, e0) = try_degree(0, &mut best);
    let mut pass = if e0 <= eps { Some((0, c0, e0)) } else { None };
    let mut lo = 0;
    let mut g = 1;
    while pass.is_none() {
        let gg = g.min(cap);
        let (c, e) = try_degree(gg, &mut best);
        if e <= eps {
            pass = Some((gg, c, e));
        } else if gg == cap {
            return Err(Error::DegreeCapReached {
                cap,
                target: eps,
                best: best.0,
                best_degree: best.1,
            });
        } else {
            lo = gg;
            g *= 2;
        }
    }
    let (mut hi, mut hc, mut he) = pass.expect("search loop exits with a passing degree");
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (c, e) = try_degree(mid, &mut best);
        if e <= eps {
            (hi, hc, he) = (mid, c, e);
        } else {
            lo = mid;
        }
    }
    Ok(ExpPolynomial {
        coeffs: hc,
        bound: r,
        scale: 1.0,
        target_eps: eps,
        certified: he,
    })
}

/// Chebyshev fit of a given degree on `[−R, R]`; the certificate is measured
/// and must not exceed `eps`.
pub fn fit_exp_polynomial_degree(r: f64, g: usize, eps: f64) -> Result<ExpPolynomial> {
    if !(r > 0.0 && r <= MAX_RANGE) {
        return Err(Error::InvalidArgument(format!(
            "range R={r} must lie in (0, {MAX_RANGE}]"
        )));
    }
    let coeffs = chebyshev_exp_monomial(r, g);
    let certified = grid_rel_error(&coeffs, r, 1.0);
    if !(certified <= eps) {
        return Err(Error::DegreeCapReached {
            cap: g,
            target: eps,
            best: certified,
            best_degree: g,
        });
    }
    Ok(ExpPolynomial {
        coeffs,
        bound: r,
        scale: 1.0,
        target_eps: eps,
        certified,
    })
}

/// `C(n, k)` in `u128`, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// `|e|! / Π e_k!`, exact; errors above `i64::MAX`.
pub fn multinomial(e: &[u32]) -> Result<i64> {
    let mut acc: u128 = 1;
    let mut s: u64 = 0;
    for &ek in e {
        s += ek as u64;
        let b = binomial(s, ek as u64).ok_or_else(|| Error::MultinomialOverflow(e.to_vec()))?;
        acc = acc
            .checked_mul(b)
            .filter(|v| *v <= i64::MAX as u128)
            .ok_or_else(|| Error::MultinomialOverflow(e.to_vec()))?;
    }
    Ok(acc as i64)
}

/// Exponent vectors `e ∈ ℕ^d` with `|e| ≤ g`, graded, lexicographically
/// descending within each degree: `(0,0), (1,0), (0,1), (2,0), …`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    d: usize,
    g: usize,
    exponents: Vec<Vec<u32>>,
    /// For entry `idx > 0`: the index of `e − unit(var)` and `var`, where
    /// `var` is the first coordinate with a positive exponent.
    parent: Vec<(u32, u32)>,
    degree_of: Vec<usize>,
}

impl MonomialBasis {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn r(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Monomial values `x^e` for every basis entry.
    pub fn eval_monomials(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        out[0] = 1.0;
        for idx in 1..out.len() {
            let (p, v) = self.parent[idx];
            out[idx] = out[p as usize] * x[v as usize];
        }
    }
}

/// `Σ_{j=0}^{g} C(d+j−1, j)`, which equals `C(d+g, g)`.
pub fn basis_size(d: usize, g: usize) -> Option<u128> {
    binomial((d + g) as u64, g as u64)
}

/// The `C(2(g+d), 2g)` upper bound on the rank.
pub fn rank_bound(d: usize, g: usize) -> Option<u128> {
    binomial(2 * (g + d) as u64, 2 * g as u64)
}

pub fn enumerate_monomials(d: usize, g: usize) -> Result<MonomialBasis> {
    enumerate_monomials_capped(d, g, DEFAULT_BASIS_CAP)
}

pub fn enumerate_monomials_capped(d: usize, g: usize, cap: u128) -> Result<MonomialBasis> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "dimension d must be positive".into(),
        ));
    }
    let r = basis_size(d, g).unwrap_or(u128::MAX);
    let bound = rank_bound(d, g).unwrap_or(u128::MAX);
    // Parent links are stored as u32.
    if bound > cap || r > u32::MAX as u128 {
        return Err(Error::BasisTooLarge {
            d,
            g,
            r,
            bound,
            cap,
        });
    }
    let mut exponents = Vec::with_capacity(r as usize);
    let mut degree_of = Vec::with_capacity(r as usize);
    let mut cur = vec![0u32; d];
    for j in 0..=g {
        push_degree(&mut cur, 0, j as u32, &mut exponents);
        degree_of.resize(exponents.len(), j);
    }
    let index: HashMap<&[u32], usize> = exponents
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_slice(), i))
        .collect();
    let mut parent = vec![(0, 0); exponents.len()];
    for (idx, e) in exponents.iter().enumerate().skip(1) {
        let v = e
            .iter()
            .position(|&x| x > 0)
            .expect("non-constant monomial");
        let mut pe = e.clone();
        pe[v] -= 1;
        parent[idx] = (index[pe.as_slice()] as u32, v as u32);
    }
    Ok(MonomialBasis {
        d,
        g,
        exponents,
        parent,
        degree_of,
    })
}

fn push_degree(cur: &mut [u32], pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.to_vec());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        push_degree(cur, pos + 1, left - e, out);
    }
    cur[pos] = 0;
}

/// `(U₁, U₂)` with `U₁U₂ᵀ = P(QKᵀ/d)`.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub u1: DenseMatrix,
    pub u2: DenseMatrix,
    pub basis: MonomialBasis,
    pub eps0: f64,
}

/// Builds `U₁[i,e] = c_j·m(e)·d^{−j}·Q_i^e` and `U₂[l,e] = K_l^e`.
///
/// The range condition `‖QKᵀ/d‖∞ ≤ R` is the caller's responsibility here;
/// [`build_low_rank_factors_checked`] verifies it at quadratic cost.
pub fn build_low_rank_factors(
    q: &DenseMatrix,
    k: &DenseMatrix,
    poly: &ExpPolynomial,
) -> Result<LowRankFactors> {
    check_shapes(q, k)?;
    let basis = engine_basis(q.cols(), poly.degree())?;
    build_factors_with_divisor(q, k, poly, q.cols() as f64, basis)
}

pub fn build_low_rank_factors_checked(
    q: &DenseMatrix,
    k: &DenseMatrix,
    poly: &ExpPolynomial,
) -> Result<LowRankFactors> {
    check_shapes(q, k)?;
    let d = q.cols() as f64;
    let mut max = 0.0f64;
    for i in 0..q.rows() {
        for l in 0..k.rows() {
            max = max.max((dot(q.row(i), k.row(l)) / d).abs());
        }
    }
    if max > poly.bound() {
        return Err(Error::BoundViolation {
            max,
            bound: poly.bound(),
        });
    }
    build_low_rank_factors(q, k, poly)
}

fn check_shapes(q: &DenseMatrix, k: &DenseMatrix) -> Result<()> {
    if q.cols() != k.cols() || q.cols() == 0 {
        return Err(Error::DimensionMismatch {
            op: "build_low_rank_factors",
            left: q.shape(),
            right: k.shape(),
        });
    }
    Ok(())
}

/// Basis for the engines: limited by [`ENGINE_RANK_CAP`] on `r` rather than
/// by the `C(2(g+d), 2g)` bound.
pub(crate) fn engine_basis(d: usize, g: usize) -> Result<MonomialBasis> {
    let r = basis_size(d, g).unwrap_or(u128::MAX);
    if r > ENGINE_RANK_CAP {
        return Err(Error::BasisTooLarge {
            d,
            g,
            r,
            bound: rank_bound(d, g).unwrap_or(u128::MAX),
            cap: ENGINE_RANK_CAP,
        });
    }
    enumerate_monomials_capped(d, g, u128::MAX)
}

/// `c_j·m(e)·divisor^{−j}` for every basis entry.
pub(crate) fn factor_coefficients(
    basis: &MonomialBasis,
    poly: &ExpPolynomial,
    divisor: f64,
) -> Result<Vec<f64>> {
    let mut coef = Vec::with_capacity(basis.r());
    for (idx, e) in basis.exponents.iter().enumerate() {
        let j = basis.degree_of[idx];
        let m = multinomial(e)? as f64;
        coef.push(poly.coeffs()[j] * m * divisor.powi(-(j as i32)));
    }
    Ok(coef)
}

/// Factor builder where the Gram matrix is divided by `divisor` instead of `d`.
pub(crate) fn build_factors_with_divisor(
    q: &DenseMatrix,
    k: &DenseMatrix,
    poly: &ExpPolynomial,
    divisor: f64,
    basis: MonomialBasis,
) -> Result<LowRankFactors> {
    check_shapes(q, k)?;
    if basis.d() != q.cols() || basis.g() != poly.degree() {
        return Err(Error::InvalidArgument("basis does not match inputs".into()));
    }
    let coef = factor_coefficients(&basis, poly, divisor)?;
    let u1 = monomial_rows(q, &basis, Some(&coef))?;
    let u2 = monomial_rows(k, &basis, None)?;
    Ok(LowRankFactors {
        u1,
        u2,
        basis,
        eps0: poly.target_eps(),
    })
}

fn monomial_rows(
    x: &DenseMatrix,
    basis: &MonomialBasis,
    coef: Option<&[f64]>,
) -> Result<DenseMatrix> {
    let r = basis.r();
    let mut data = vec![0.0; x.rows() * r];
    data.par_chunks_mut(r).enumerate().for_each(|(i, out)| {
        basis.eval_monomials(x.row(i), out);
        if let Some(c) = coef {
            for (o, ci) in out.iter_mut().zip(c) {
                *o *= ci;
            }
        }
    });
    DenseMatrix::from_vec(x.rows(), r, data)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

/// Independent oracle: `P(⟨Q_i, K_j⟩/d)` by Horner for every entry.
pub fn eval_poly_gram_oracle(
    q: &DenseMatrix,
    k: &DenseMatrix,
    poly: &ExpPolynomial,
) -> Result<DenseMatrix> {
    check_shapes(q, k)?;
    let d = q.cols() as f64;
    Ok(DenseMatrix::from_fn(q.rows(), k.rows(), |i, j| {
        poly.eval(dot(q.row(i), k.row(j)) / d)
    }))
}

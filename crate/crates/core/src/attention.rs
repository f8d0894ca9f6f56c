//! Exact softmax attention, the polynomial (low-rank) engine and the
//! single-threshold support-basis engine.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exp_poly::{
    engine_basis, factor_coefficients, fit_exp_polynomial, fit_exp_polynomial_degree, horner,
    ExpPolynomial,
};
use crate::matrix::{gemm, DenseMatrix, EXP_ARG_MAX};
use crate::support::{build_large_mask, split, LargeMask};

/// Largest `|QKᵀ/d|` entry the exact engine accepts.
pub const EXACT_GUARD: f64 = 700.0;

/// Query rows handled together by the dense products.
const ROW_BLOCK: usize = 64;

/// Target number of monomial values buffered per row block.
const MONO_BLOCK_ELEMS: usize = 1 << 24;

/// Smallest interval handed to the polynomial fit when the data range is zero.
const MIN_FIT_RANGE: f64 = 1e-12;

/// `Q, K ∈ ℝ^{n×d}` and `V ∈ ℝ^{n×d_v}`.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
}

impl AttentionInputs {
    pub fn new(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if q.shape() != k.shape() || q.cols() == 0 {
            return Err(Error::DimensionMismatch {
                op: "attention inputs (Q vs K)",
                left: q.shape(),
                right: k.shape(),
            });
        }
        if v.rows() != k.rows() {
            return Err(Error::DimensionMismatch {
                op: "attention inputs (K vs V)",
                left: k.shape(),
                right: v.shape(),
            });
        }
        if q.rows() == 0 || v.cols() == 0 {
            return Err(Error::InvalidArgument(
                "attention needs n >= 1 and d_v >= 1".into(),
            ));
        }
        Ok(Self { q, k, v })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Engine {
    Exact,
    As23,
    SupportBasis,
    MultiThreshold,
}

impl Engine {
    pub const ALL: [Engine; 4] = [
        Engine::Exact,
        Engine::As23,
        Engine::SupportBasis,
        Engine::MultiThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::As23 => "as23",
            Engine::SupportBasis => "support_basis",
            Engine::MultiThreshold => "multi_threshold",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown engine '{s}'")))
    }
}

/// Per-run facts reported alongside the output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineStats {
    /// Degree of the (largest) fitted polynomial.
    pub degree: Option<usize>,
    /// Number of monomial features.
    pub rank: Option<usize>,
    pub mask_size: Option<usize>,
    /// Interval the polynomial was fitted on.
    pub poly_range: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub p: DenseMatrix,
    /// Diagonal of `D` (or its approximation).
    pub row_sums: Vec<f64>,
    pub engine: Engine,
    pub wall_time: Duration,
    pub stats: EngineStats,
}

/// `D⁻¹·exp(QKᵀ/d)·V`, dense, in blocks of query rows.
pub fn exact_attention(inp: &AttentionInputs) -> Result<AttentionOutput> {
    let start = Instant::now();
    let (n, dv, nk) = (inp.n(), inp.v.cols(), inp.k.rows());
    let d = inp.d() as f64;
    let mut p = vec![0.0; n * dv];
    let mut sums = vec![0.0; n];
    p.par_chunks_mut(ROW_BLOCK * dv)
        .zip(sums.par_chunks_mut(ROW_BLOCK))
        .enumerate()
        .try_for_each_init(Vec::new, |buf, (bi, (pblk, sblk))| -> Result<()> {
            let (r0, b) = (bi * ROW_BLOCK, sblk.len());
            buf.resize(b * nk, 0.0);
            gemm(inp.q.view_rows(r0, b), inp.k.view_t(), buf, nk, 0.0);
            for (a, row) in buf.chunks_mut(nk.max(1)).enumerate() {
                let mut s = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    let arg = *x / d;
                    if arg.abs() > EXACT_GUARD {
                        return Err(Error::ExpOverflow {
                            row: r0 + a,
                            col: j,
                            value: arg,
                            limit: EXACT_GUARD,
                        });
                    }
                    *x = arg.exp();
                    s += *x;
                }
                sblk[a] = s;
            }
            gemm((b, nk, buf, nk as isize, 1), inp.v.view(), pblk, dv, 0.0);
            for (prow, &s) in pblk.chunks_mut(dv).zip(sblk.iter()) {
                for o in prow {
                    *o /= s;
                }
            }
            Ok(())
        })?;
    Ok(AttentionOutput {
        p: DenseMatrix::from_vec(n, dv, p)?,
        row_sums: sums,
        engine: Engine::Exact,
        wall_time: start.elapsed(),
        stats: EngineStats::default(),
    })
}

/// Unnormalized polynomial product: `U₁(U₂ᵀV)` and `U₁(U₂ᵀ1)`.
///
/// The factors are streamed row by row; only the `r × (d_v+1)` middle
/// product is held in memory.
pub(crate) struct PolyProduct {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub rank: usize,
}

pub(crate) fn poly_product(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    poly: &ExpPolynomial,
    divisor: f64,
) -> Result<PolyProduct> {
    let basis = engine_basis(q.cols(), poly.degree())?;
    let r = basis.r();
    let coef = factor_coefficients(&basis, poly, divisor)?;
    let dv = v.cols();
    let w_cols = dv + 1;
    // Rows are processed in blocks so the products run as matrix products.
    let blk = (MONO_BLOCK_ELEMS / r.max(1)).clamp(1, 64);

    // W = U₂ᵀ [V | 1], accumulated block by block over the key rows.
    let mut w = vec![0.0; r * w_cols];
    let mut mono = vec![0.0; blk * r];
    let mut vext = vec![0.0; blk * w_cols];
    for start in (0..k.rows()).step_by(blk) {
        let b = blk.min(k.rows() - start);
        for l in 0..b {
            basis.eval_monomials(k.row(start + l), &mut mono[l * r..(l + 1) * r]);
            let vrow = &mut vext[l * w_cols..(l + 1) * w_cols];
            vrow[..dv].copy_from_slice(v.row(start + l));
            vrow[dv] = 1.0;
        }
        gemm(
            (r, b, &mono, 1, r as isize),
            (b, w_cols, &vext, w_cols as isize, 1),
            &mut w,
            w_cols,
            1.0,
        );
    }

    // U₁W for each block of query rows.
    let n = q.rows();
    let mut out = vec![0.0; n * w_cols];
    out.par_chunks_mut(blk * w_cols).enumerate().for_each_init(
        || vec![0.0; blk * r],
        |u, (bi, oblock)| {
            let b = oblock.len() / w_cols;
            for l in 0..b {
                let ul = &mut u[l * r..(l + 1) * r];
                basis.eval_monomials(q.row(bi * blk + l), ul);
                for (x, c) in ul.iter_mut().zip(&coef) {
                    *x *= c;
                }
            }
            gemm(
                (b, r, &u[..b * r], r as isize, 1),
                (r, w_cols, &w, w_cols as isize, 1),
                oblock,
                w_cols,
                0.0,
            );
        },
    );
    let mut num = Vec::with_capacity(n * dv);
    let mut den = Vec::with_capacity(n);
    for row in out.chunks(w_cols) {
        num.extend_from_slice(&row[..dv]);
        den.push(row[dv]);
    }
    Ok(PolyProduct { num, den, rank: r })
}

fn normalize(num: Vec<f64>, den: &[f64], dv: usize) -> Result<DenseMatrix> {
    let n = den.len();
    let mut p = num;
    for (i, &s) in den.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::NormalizationCollapsed { row: i, value: s });
        }
        for o in &mut p[i * dv..(i + 1) * dv] {
            *o /= s;
        }
    }
    DenseMatrix::from_vec(n, dv, p)
}

/// Polynomial attention `D̃⁻¹U₁(U₂ᵀV)` with `P ≈ exp` fitted on `R = ‖Q‖∞‖K‖∞`.
pub fn poly_attention_as23(inp: &AttentionInputs, eps0: f64) -> Result<AttentionOutput> {
    let start = Instant::now();
    let range = inp.q.max_abs() * inp.k.max_abs();
    let poly = fit_exp_polynomial(range.max(MIN_FIT_RANGE), eps0)?;
    let prod = poly_product(&inp.q, &inp.k, &inp.v, &poly, inp.d() as f64)?;
    let p = normalize(prod.num, &prod.den, inp.v.cols())?;
    Ok(AttentionOutput {
        p,
        row_sums: prod.den,
        engine: Engine::As23,
        wall_time: start.elapsed(),
        stats: EngineStats {
            degree: Some(poly.degree()),
            rank: Some(prod.rank),
            mask_size: Some(0),
            poly_range: Some(poly.bound()),
        },
    })
}

/// Unnormalized support-basis product and its row sums.
#[derive(Debug, Clone)]
pub struct KdeParts {
    /// `C₁ + C₂`.
    pub s: DenseMatrix,
    /// `d₁ + d₂`.
    pub row_sums: Vec<f64>,
    pub mask: LargeMask,
    pub poly: ExpPolynomial,
    pub rank: usize,
}

/// `C₁ + C₂ ≈ exp(QKᵀ/d)·V` via the threshold-`T` split.
pub fn gaussian_kde_single(inp: &AttentionInputs, t: f64, eps0: f64) -> Result<DenseMatrix> {
    Ok(kde_parts(inp, t, eps0)?.s)
}

/// Polynomial for the small part: the degree the full-range fit needs,
/// refitted on the (narrower) small-part range. Falls back to a plain search
/// on the small range when no full-range fit exists.
fn small_part_poly(inp: &AttentionInputs, range: f64, eps0: f64) -> Result<ExpPolynomial> {
    let full_range = (inp.q.max_abs() * inp.k.max_abs()).max(MIN_FIT_RANGE);
    match fit_exp_polynomial(full_range, eps0) {
        Ok(full) if range == full_range => Ok(full),
        Ok(full) => fit_exp_polynomial_degree(range, full.degree(), eps0)
            .or_else(|_| fit_exp_polynomial(range, eps0)),
        Err(_) => fit_exp_polynomial(range, eps0),
    }
}

/// Builds `C₁`, `C₂` and the matching row sums.
///
/// `C₁` is the polynomial product of the small parts with every mask entry
/// reset to `P(0)`, the value `P` takes where `A^(s)` is zero. `C₂` adds
/// `exp(A^(L)/d) − 1` on the mask, so mask entries come out as the exact
/// `exp(⟨Q_i, K_j⟩/d)`.
pub fn kde_parts(inp: &AttentionInputs, t: f64, eps0: f64) -> Result<KdeParts> {
    let n = inp.n();
    let dv = inp.v.cols();
    let qs = split(&inp.q, t)?;
    let ks = split(&inp.k, t)?;
    let mask = build_large_mask(&qs, &ks, n)?;
    // |⟨Q^(s)_i, K^(s)_j⟩/d| ≤ ‖Q^(s)‖∞‖K^(s)‖∞ ≤ T².
    let range = (qs.small.max_abs() * ks.small.max_abs()).max(MIN_FIT_RANGE);
    let poly = small_part_poly(inp, range, eps0)?;
    let prod = poly_product(&qs.small, &ks.small, &inp.v, &poly, inp.d() as f64)?;
    let (mut num, mut den) = (prod.num, prod.den);

    if !mask.is_empty() {
        let cols = mask.large_cols();
        let (k_sub, ks_sub, v_sub) = (
            inp.k.select_rows(cols),
            ks.small.select_rows(cols),
            inp.v.select_rows(cols),
        );
        let some = MaskKeys {
            k: &k_sub,
            ks: &ks_sub,
            v: &v_sub,
            ids: Some(cols),
        };
        let all = MaskKeys {
            k: &inp.k,
            ks: &ks.small,
            v: &inp.v,
            ids: None,
        };
        let ctx = MaskCtx {
            q: &inp.q,
            qs: &qs.small,
            c: poly.coeffs(),
            d: inp.d() as f64,
        };
        // Full rows and partial rows are batched separately so every block
        // of query rows shares one key set.
        let (full, part): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask.is_full_row(i));
        let mut jobs: Vec<(&[usize], &MaskKeys<'_>)> =
            full.chunks(ROW_BLOCK).map(|c| (c, &all)).collect();
        if !cols.is_empty() {
            jobs.extend(part.chunks(ROW_BLOCK).map(|c| (c, &some)));
        }
        let blocks = jobs
            .par_iter()
            .map_init(MaskScratch::default, |buf, (rows, keys)| {
                ctx.block(rows, keys, buf)
            })
            .collect::<Result<Vec<_>>>()?;
        for ((rows, _), (out, sums)) in jobs.iter().zip(blocks) {
            for (a, &i) in rows.iter().enumerate() {
                for (o, &v) in num[i * dv..(i + 1) * dv]
                    .iter_mut()
                    .zip(&out[a * dv..(a + 1) * dv])
                {
                    *o += v;
                }
                den[i] += sums[a];
            }
        }
    }
    Ok(KdeParts {
        s: DenseMatrix::from_vec(n, dv, num)?,
        row_sums: den,
        mask,
        poly,
        rank: prod.rank,
    })
}

/// Key rows a group of query rows is corrected against.
struct MaskKeys<'a> {
    k: &'a DenseMatrix,
    ks: &'a DenseMatrix,
    v: &'a DenseMatrix,
    /// Original key indices; `None` when every key is present in order.
    ids: Option<&'a [usize]>,
}

/// Buffers reused across row blocks.
#[derive(Default)]
struct MaskScratch {
    s: Vec<f64>,
    x: Vec<f64>,
}

struct MaskCtx<'a> {
    q: &'a DenseMatrix,
    qs: &'a DenseMatrix,
    c: &'a [f64],
    d: f64,
}

impl MaskCtx<'_> {
    /// `Σ_j (exp(s_ij/d) − 1 − (P(x_ij/d) − P(0)))·V_j` and the matching
    /// weight sums for the given query rows, with `s` the full and `x` the
    /// small-part inner product.
    fn block(
        &self,
        rows: &[usize],
        keys: &MaskKeys<'_>,
        buf: &mut MaskScratch,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (b, m, dv) = (rows.len(), keys.k.rows(), keys.v.cols());
        let MaskScratch { s, x } = buf;
        s.resize(b * m, 0.0);
        x.resize(b * m, 0.0);
        gemm(self.q.select_rows(rows).view(), keys.k.view_t(), s, m, 0.0);
        gemm(
            self.qs.select_rows(rows).view(),
            keys.ks.view_t(),
            x,
            m,
            0.0,
        );
        let p0 = self.c[0];
        let mut sums = vec![0.0; b];
        for (a, &i) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for j in 0..m {
                let idx = a * m + j;
                let arg = s[idx] / self.d;
                if arg > EXP_ARG_MAX {
                    return Err(Error::ExpOverflow {
                        row: i,
                        col: keys.ids.map_or(j, |ids| ids[j]),
                        value: arg,
                        limit: EXP_ARG_MAX,
                    });
                }
                s[idx] = arg.exp_m1() - (horner(self.c, x[idx] / self.d) - p0);
                sum += s[idx];
            }
            sums[a] = sum;
        }
        let mut out = vec![0.0; b * dv];
        gemm(
            (b, m, &s[..b * m], m as isize, 1),
            keys.v.view(),
            &mut out,
            dv,
            0.0,
        );
        Ok((out, sums))
    }
}

/// Support-basis attention `diag(d₁ + d₂)⁻¹(C₁ + C₂)`.
pub fn approx_attention_single(
    inp: &AttentionInputs,
    t: f64,
    eps0: f64,
) -> Result<AttentionOutput> {
    let start = Instant::now();
    let parts = kde_parts(inp, t, eps0)?;
    let p = normalize(parts.s.into_vec(), &parts.row_sums, inp.v.cols())?;
    Ok(AttentionOutput {
        p,
        row_sums: parts.row_sums,
        engine: Engine::SupportBasis,
        wall_time: start.elapsed(),
        stats: EngineStats {
            degree: Some(parts.poly.degree()),
            rank: Some(parts.rank),
            mask_size: Some(parts.mask.len()),
            poly_range: Some(parts.poly.bound()),
        },
    })
}

/// `max_i |D̃_ii − D_ii| / D_ii` for the row sums of `A` and `Ã`.
pub fn verify_normalization_error(a: &DenseMatrix, a_tilde: &DenseMatrix) -> Result<f64> {
    if a.shape() != a_tilde.shape() {
        return Err(Error::DimensionMismatch {
            op: "verify_normalization_error",
            left: a.shape(),
            right: a_tilde.shape(),
        });
    }
    let d = a.row_sums();
    let dt = a_tilde.row_sums();
    let mut worst = 0.0f64;
    for (i, (&di, &dti)) in d.iter().zip(&dt).enumerate() {
        if !(di > 0.0) {
            return Err(Error::NormalizationCollapsed { row: i, value: di });
        }
        worst = worst.max((dti - di).abs() / di);
    }
    Ok(worst)
}

/// Row-normalizes an explicit `n × n` kernel matrix against `V`.
pub fn normalize_dense(a: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    let num = crate::matrix::matmul(a, v)?;
    normalize(num.into_vec(), &a.row_sums(), v.cols())
}

//! Bucketed attention: every block `(ℓ, ℓ′)` gets its own polynomial and
//! sketch, and the blocks are summed without ever forming an `n × n` matrix.
//!
//! Inside block `(ℓ, ℓ′)` the kernel is `exp(A/d) = exp(C·Q̂K̂ᵀ/d)` with the
//! normalized rows `Q̂, K̂`. The engine picks an even `p` near `C`, fits
//! `P(x) ≈ exp((C/p)·x)` on `[−ln n, ln n]`, and uses
//! `⟨φ′(U₁ᵢ), φ′(U₂ⱼ)⟩ ≈ P(x)^p ≈ exp(A_ij/d)`.
//!
//! Outside its rows and columns a block contributes `exp(0) = 1`; those
//! ones and the `(m² − 1)·1` correction cancel exactly, so only the
//! in-region sums are accumulated.

use std::time::Instant;

use rayon::prelude::*;

use crate::attention::{normalize_dense, AttentionInputs, AttentionOutput, Engine, EngineStats};
use crate::bucket::{bucket_scheme, decompose_blocks, BucketScheme, NormalizedBlock};
use crate::error::{Error, Result};
use crate::exp_poly::{
    build_factors_with_divisor, engine_basis, factor_coefficients, fit_exp_polynomial,
    ExpPolynomial, LowRankFactors,
};
use crate::matrix::{gemm, hadamard_pow, matmul_transb, DenseMatrix};
use crate::sketch::{Sketch, SketchSpec, DEFAULT_KAPPA};

/// Floor applied to polynomial Gram entries before a real Hadamard power.
pub const POW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiConfig {
    pub eps_b: f64,
    pub eps0: f64,
    pub eps_sk: f64,
    pub delta: f64,
    pub kappa: f64,
    pub seed: u64,
    /// Fixed sketch width instead of the `κ·p·ε⁻²·ln(n/δ)` rule.
    pub z_override: Option<usize>,
}

impl Default for MultiConfig {
    fn default() -> Self {
        Self {
            eps_b: 1.0,
            eps0: 1e-6,
            eps_sk: 0.5,
            delta: 0.05,
            kappa: DEFAULT_KAPPA,
            seed: 0,
            z_override: None,
        }
    }
}

/// What one block contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub l: usize,
    pub lp: usize,
    pub rows: usize,
    pub cols: usize,
    pub c: f64,
    /// Even degree used in place of `C`.
    pub p: usize,
    /// `C/p`, the factor the polynomial argument is scaled by.
    pub c_over_p: f64,
    pub z: usize,
    pub degree: usize,
    pub rank: usize,
    /// `ε·max‖U₁ᵢ‖^p·max‖U₂ⱼ‖^p` over the block.
    pub sketch_term: f64,
}

#[derive(Debug, Clone)]
pub struct MultiOutput {
    pub out: AttentionOutput,
    pub scheme: BucketScheme,
    pub blocks: Vec<BlockReport>,
}

impl MultiOutput {
    /// Sum of per-block sketch terms.
    pub fn sketch_terms(&self) -> f64 {
        self.blocks.iter().map(|b| b.sketch_term).sum()
    }
}

/// Nearest even integer to `c`, at least 2.
pub fn even_degree(c: f64) -> usize {
    ((2.0 * (c / 2.0).round()) as usize).max(2)
}

/// `P` with `P(x) ≈ exp(s·x)` for `|x| ≤ ln n`.
fn block_poly(s: f64, n: usize, eps0: f64) -> Result<ExpPolynomial> {
    let ln_n = (n as f64).ln();
    fit_exp_polynomial(ln_n * s, eps0)?.rescaled(s)
}

/// Block factors with every coefficient split as `√|c|` between the two
/// sides. `U₁U₂ᵀ` is unchanged, but the row norms entering the sketch error
/// `ε‖U₁ᵢ‖^p‖U₂ⱼ‖^p` are no longer inflated by the bare monomials in `U₂`.
fn block_factors(block: &NormalizedBlock, poly: &ExpPolynomial) -> Result<LowRankFactors> {
    let d = block.q_norm.cols();
    let basis = engine_basis(d, poly.degree())?;
    let coef = factor_coefficients(&basis, poly, d as f64)?;
    let f = build_factors_with_divisor(&block.q_norm, &block.k_norm, poly, d as f64, basis)?;
    let w: Vec<f64> = coef.iter().map(|c| c.abs().sqrt()).collect();
    let u1 = DenseMatrix::from_fn(f.u1.rows(), f.u1.cols(), |i, e| {
        if w[e] > 0.0 {
            f.u1.get(i, e) / w[e]
        } else {
            0.0
        }
    });
    let u2 = DenseMatrix::from_fn(f.u2.rows(), f.u2.cols(), |i, e| f.u2.get(i, e) * w[e]);
    Ok(LowRankFactors { u1, u2, ..f })
}

fn max_row_norm(u: &DenseMatrix) -> f64 {
    (0..u.rows())
        .map(|i| u.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn approx_attention_multi(inp: &AttentionInputs, cfg: &MultiConfig) -> Result<MultiOutput> {
    let start = Instant::now();
    let scheme = bucket_scheme(&inp.q, &inp.k, cfg.eps_b)?;
    approx_attention_multi_timed(inp, &scheme, cfg, start)
}

/// Runs the engine on a given scheme (for instance a one-bucket scheme).
pub fn approx_attention_multi_with_scheme(
    inp: &AttentionInputs,
    scheme: &BucketScheme,
    cfg: &MultiConfig,
) -> Result<MultiOutput> {
    approx_attention_multi_timed(inp, scheme, cfg, Instant::now())
}

fn approx_attention_multi_timed(
    inp: &AttentionInputs,
    scheme: &BucketScheme,
    cfg: &MultiConfig,
    start: Instant,
) -> Result<MultiOutput> {
    let n = inp.n();
    let dv = inp.v.cols();
    let blocks = decompose_blocks(&inp.q, &inp.k, scheme)?;
    let results = blocks
        .par_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(idx, b)| run_block(inp, idx, b, cfg))
        .collect::<Result<Vec<_>>>()?;

    // Reduction in block order, so the sum does not depend on scheduling.
    let mut num = vec![0.0; n * dv];
    let mut den = vec![0.0; n];
    let mut reports = Vec::with_capacity(results.len());
    let mut stats = EngineStats::default();
    for (report, rows, acc) in results {
        for (ii, &i) in rows.iter().enumerate() {
            let arow = &acc[ii * (dv + 1)..(ii + 1) * (dv + 1)];
            for (o, &x) in num[i * dv..(i + 1) * dv].iter_mut().zip(&arow[..dv]) {
                *o += x;
            }
            den[i] += arow[dv];
        }
        stats.degree = stats.degree.max(Some(report.degree));
        stats.rank = stats.rank.max(Some(report.rank));
        reports.push(report);
    }

    let mut p_out = num;
    for (i, &s) in den.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::NormalizationCollapsed { row: i, value: s });
        }
        for o in &mut p_out[i * dv..(i + 1) * dv] {
            *o /= s;
        }
    }
    stats.poly_range = Some((n as f64).ln());
    Ok(MultiOutput {
        out: AttentionOutput {
            p: DenseMatrix::from_vec(n, dv, p_out)?,
            row_sums: den,
            engine: Engine::MultiThreshold,
            wall_time: start.elapsed(),
            stats,
        },
        scheme: scheme.clone(),
        blocks: reports,
    })
}

/// Rows handled per chunk when forming sketched features or kernel rows.
const CHUNK: usize = 64;

/// `φ′(U₁)·(φ′(U₂)ᵀ[V | 1])` for one block, as `(rows × (d_v+1))` row-major.
///
/// Since `φ′ = y ⊗ y`, `⟨φ′(a), φ′(b)⟩ = ⟨y(a), y(b)⟩²`. The block is summed
/// either through the `z² × (d_v+1)` middle product or pairwise through
/// that identity, whichever costs less; both give the same quantity.
fn run_block(
    inp: &AttentionInputs,
    idx: usize,
    block: &NormalizedBlock,
    cfg: &MultiConfig,
) -> Result<(BlockReport, Vec<usize>, Vec<f64>)> {
    let n = inp.n();
    let dv = inp.v.cols();
    let w = dv + 1;
    let p = even_degree(block.c);
    let s = block.c / p as f64;
    let poly = block_poly(s, n, cfg.eps0)?;
    let f = block_factors(block, &poly)?;
    let r = f.basis.r();
    let mut spec = SketchSpec::new(p, r, n, cfg.eps_sk, cfg.delta, cfg.kappa, cfg.seed)?
        .with_stream(idx as u64);
    if let Some(z) = cfg.z_override {
        spec = spec.with_width(z);
    }
    let sk = Sketch::new(&spec);
    let z = sk.z();
    let y1 = sk.half_rows(&f.u1)?;
    let y2 = sk.half_rows(&f.u2)?;
    let (nq, nk) = (block.q_rows.len(), block.k_rows.len());
    let vext = DenseMatrix::from_fn(nk, w, |jj, c| {
        if c < dv {
            inp.v.get(block.k_rows[jj], c)
        } else {
            1.0
        }
    });

    let mut acc = vec![0.0; nq * w];
    if (nq + nk) * z * z * w <= nq * nk * (z + w) {
        let phi = |y: &DenseMatrix, r0: usize, b: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(b * z * z);
            for i in r0..r0 + b {
                let yi = y.row(i);
                for &a in yi {
                    out.extend(yi.iter().map(|&c| a * c));
                }
            }
            out
        };
        let mut m = vec![0.0; z * z * w];
        for r0 in (0..nk).step_by(CHUNK) {
            let b = CHUNK.min(nk - r0);
            let ph = phi(&y2, r0, b);
            gemm(
                (z * z, b, &ph, 1, (z * z) as isize),
                vext.view_rows(r0, b),
                &mut m,
                w,
                1.0,
            );
        }
        for r0 in (0..nq).step_by(CHUNK) {
            let b = CHUNK.min(nq - r0);
            let ph = phi(&y1, r0, b);
            gemm(
                (b, z * z, &ph, (z * z) as isize, 1),
                (z * z, w, &m, w as isize, 1),
                &mut acc[r0 * w..(r0 + b) * w],
                w,
                0.0,
            );
        }
    } else {
        let mut kern = Vec::new();
        for r0 in (0..nq).step_by(CHUNK) {
            let b = CHUNK.min(nq - r0);
            kern.resize(b * nk, 0.0);
            gemm(y1.view_rows(r0, b), y2.view_t(), &mut kern, nk, 0.0);
            kern.iter_mut().for_each(|t| *t *= *t);
            gemm(
                (b, nk, &kern, nk as isize, 1),
                vext.view(),
                &mut acc[r0 * w..(r0 + b) * w],
                w,
                0.0,
            );
        }
    }

    let report = BlockReport {
        l: block.l,
        lp: block.lp,
        rows: nq,
        cols: nk,
        c: block.c,
        p,
        c_over_p: s,
        z,
        degree: poly.degree(),
        rank: r,
        sketch_term: cfg.eps_sk
            * max_row_norm(&f.u1).powi(p as i32)
            * max_row_norm(&f.u2).powi(p as i32),
    };
    Ok((report, block.q_rows.clone(), acc))
}

/// Dense reference for the bucketed engine.
#[derive(Debug, Clone)]
pub struct ReferenceOutput {
    /// `Σ_blocks expand((U₁U₂ᵀ)^{∘C}) − (m² − 1)·1`, approximating `exp(QKᵀ/d)`.
    pub a_tilde: DenseMatrix,
    /// Row-normalized `Ã·V`.
    pub p: DenseMatrix,
}

/// Unsketched, real-power route: one polynomial `P ≈ exp` on `[−ln n, ln n]`
/// for every block, raised entrywise to the real `C^(T_ℓ,T_ℓ′)`.
/// Entries outside a block's rows and columns are `exp(0) = 1`.
pub fn multi_reference_oracle(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    scheme: &BucketScheme,
    eps0: f64,
) -> Result<ReferenceOutput> {
    let n = q.rows();
    let poly = fit_exp_polynomial((n as f64).ln(), eps0)?;
    let blocks = decompose_blocks(q, k, scheme)?;
    let mut a = vec![0.0; n * k.rows()];
    for block in &blocks {
        let mut contrib = DenseMatrix::filled(n, k.rows(), 1.0).into_vec();
        if !block.is_empty() {
            let f = block_factors(block, &poly)?;
            let g = matmul_transb(&f.u1, &f.u2)?.map(|x| x.max(POW_FLOOR));
            let g = hadamard_pow(&g, block.c)?;
            scatter(&mut contrib, k.rows(), block, &g);
        }
        for (o, c) in a.iter_mut().zip(&contrib) {
            *o += c;
        }
    }
    let corr = (scheme.m * scheme.m) as f64 - 1.0;
    for o in a.iter_mut() {
        *o -= corr;
    }
    let a_tilde = DenseMatrix::from_vec(n, k.rows(), a)?;
    let p = normalize_dense(&a_tilde, v)?;
    Ok(ReferenceOutput { a_tilde, p })
}

/// The engine's kernel matrix before sketching: `P(x)^p` with the rescaled
/// polynomial and even `p`, in-region only (exact `exp(0) = 1` bookkeeping
/// omitted as in the engine). Comparing it with [`multi_reference_oracle`]
/// isolates the effect of replacing `C` by `p`.
pub fn multi_unsketched(
    q: &DenseMatrix,
    k: &DenseMatrix,
    scheme: &BucketScheme,
    eps0: f64,
) -> Result<DenseMatrix> {
    let n = q.rows();
    let blocks = decompose_blocks(q, k, scheme)?;
    let mut a = vec![0.0; n * k.rows()];
    for block in blocks.iter().filter(|b| !b.is_empty()) {
        let p = even_degree(block.c);
        let poly = block_poly(block.c / p as f64, n, eps0)?;
        let f = block_factors(block, &poly)?;
        let g = hadamard_pow(&matmul_transb(&f.u1, &f.u2)?, p as f64)?;
        scatter(&mut a, k.rows(), block, &g);
    }
    DenseMatrix::from_vec(n, k.rows(), a)
}

fn scatter(out: &mut [f64], cols: usize, block: &NormalizedBlock, g: &DenseMatrix) {
    for (ii, &i) in block.q_rows.iter().enumerate() {
        for (jj, &j) in block.k_rows.iter().enumerate() {
            out[i * cols + j] = g.get(ii, jj);
        }
    }
}

/// `(ε₂·exp(B² − 2b²) + ε₂²·exp(−2b²))·‖V‖∞`.
pub fn attention_error_envelope(eps2: f64, b: f64, big_b: f64, v_linf: f64) -> f64 {
    (eps2 * (big_b * big_b - 2.0 * b * b).exp() + eps2 * eps2 * (-2.0 * b * b).exp()) * v_linf
}

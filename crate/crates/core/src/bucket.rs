//! Geometric row bucketing and the normalized block decomposition of `QKᵀ`.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Floor on `b` relative to `B` so the bucket count stays finite.
pub const B_FLOOR_REL: f64 = 1e-6;

/// Rows bucketed by max-abs entry against `T_ℓ = b(1+ε_B)^ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketScheme {
    pub b: f64,
    pub big_b: f64,
    pub eps_b: f64,
    pub m: usize,
    /// `T_0, …, T_m`.
    pub thresholds: Vec<f64>,
    /// 1-based bucket of each row of `Q`.
    pub q_assign: Vec<usize>,
    /// 1-based bucket of each row of `K`.
    pub k_assign: Vec<usize>,
}

impl BucketScheme {
    /// Row indices of `Q` in bucket `l` (1-based).
    pub fn q_rows(&self, l: usize) -> Vec<usize> {
        rows_in(&self.q_assign, l)
    }

    pub fn k_rows(&self, l: usize) -> Vec<usize> {
        rows_in(&self.k_assign, l)
    }

    /// `C^(T_ℓ) = T_ℓ / √(ln n)`.
    pub fn c_scalar(&self, l: usize, n: usize) -> f64 {
        self.thresholds[l] / (n as f64).ln().sqrt()
    }
}

fn rows_in(assign: &[usize], l: usize) -> Vec<usize> {
    assign
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == l)
        .map(|(i, _)| i)
        .collect()
}

fn row_max(m: &DenseMatrix, i: usize) -> f64 {
    m.row(i).iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `⌊log_{1+ε}(B/b)⌋ + 1`, corrected against the computed thresholds so the
/// count agrees with `T_ℓ = b(1+ε)^ℓ` evaluated the same way.
pub fn bucket_count(b: f64, big_b: f64, eps_b: f64) -> usize {
    let mut k = ((big_b / b).ln() / eps_b.ln_1p()).floor().max(0.0) as i64;
    let t = |l: i64| b * (1.0 + eps_b).powi(l as i32);
    while t(k + 1) <= big_b {
        k += 1;
    }
    while k > 0 && t(k) > big_b {
        k -= 1;
    }
    k as usize + 1
}

/// Builds the scheme. `b` is the smallest nonzero magnitude, floored at
/// `1e-6·B`; all-zero rows go to bucket 1.
pub fn bucket_scheme(q: &DenseMatrix, k: &DenseMatrix, eps_b: f64) -> Result<BucketScheme> {
    if !(eps_b > 0.0 && eps_b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bucketing parameter {eps_b} must be positive"
        )));
    }
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch {
            op: "bucket_scheme",
            left: q.shape(),
            right: k.shape(),
        });
    }
    let all = q.data().iter().chain(k.data());
    let big_b = all.clone().fold(0.0f64, |a, v| a.max(v.abs()));
    if big_b == 0.0 {
        return Err(Error::AllZero);
    }
    let min_nz = all
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let b = min_nz.max(B_FLOOR_REL * big_b);
    let m = bucket_count(b, big_b, eps_b);
    let thresholds: Vec<f64> = (0..=m).map(|l| b * (1.0 + eps_b).powi(l as i32)).collect();
    let assign = |mat: &DenseMatrix| -> Vec<usize> {
        (0..mat.rows())
            .map(|i| {
                let rm = row_max(mat, i);
                // Largest ℓ with T_{ℓ−1} ≤ rm, capped at m; rows below T_0 land in 1.
                (1..=m)
                    .rev()
                    .find(|&l| thresholds[l - 1] <= rm)
                    .unwrap_or(1)
            })
            .collect()
    };
    Ok(BucketScheme {
        b,
        big_b,
        eps_b,
        m,
        q_assign: assign(q),
        k_assign: assign(k),
        thresholds,
    })
}

/// The one-bucket scheme: `ε_B` just large enough that `T_1` exceeds `B`.
pub fn single_bucket_scheme(q: &DenseMatrix, k: &DenseMatrix) -> Result<BucketScheme> {
    let big_b = q.max_abs().max(k.max_abs());
    if big_b == 0.0 {
        return Err(Error::AllZero);
    }
    let min_nz = q
        .data()
        .iter()
        .chain(k.data())
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let b = min_nz.max(B_FLOOR_REL * big_b);
    let eps = (big_b / b) * (1.0 + 1e-9) - 1.0;
    let s = bucket_scheme(q, k, eps.max(1e-9))?;
    debug_assert_eq!(s.m, 1);
    Ok(s)
}

/// One block `(ℓ, ℓ′)` of the decomposition, restricted to its rows.
#[derive(Debug, Clone)]
pub struct NormalizedBlock {
    pub l: usize,
    pub lp: usize,
    /// `C^(T_ℓ, T_ℓ′) = C^(T_ℓ)·C^(T_ℓ′)`.
    pub c: f64,
    pub c_q: f64,
    pub c_k: f64,
    pub q_rows: Vec<usize>,
    pub k_rows: Vec<usize>,
    /// `Q` rows of bucket `ℓ` divided by `C^(T_ℓ)`.
    pub q_norm: DenseMatrix,
    pub k_norm: DenseMatrix,
}

impl NormalizedBlock {
    pub fn is_empty(&self) -> bool {
        self.q_rows.is_empty() || self.k_rows.is_empty()
    }
}

/// All `m²` blocks in `(ℓ, ℓ′)` order, empty ones included.
pub fn decompose_blocks(
    q: &DenseMatrix,
    k: &DenseMatrix,
    scheme: &BucketScheme,
) -> Result<Vec<NormalizedBlock>> {
    let n = q.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "normalization by sqrt(ln n) needs n >= 2".into(),
        ));
    }
    if scheme.q_assign.len() != n || scheme.k_assign.len() != k.rows() {
        return Err(Error::DimensionMismatch {
            op: "decompose_blocks",
            left: (scheme.q_assign.len(), scheme.k_assign.len()),
            right: (n, k.rows()),
        });
    }
    let mut out = Vec::with_capacity(scheme.m * scheme.m);
    for l in 1..=scheme.m {
        let q_rows = scheme.q_rows(l);
        let c_q = scheme.c_scalar(l, n);
        let q_norm = q.select_rows(&q_rows).scale(1.0 / c_q);
        for lp in 1..=scheme.m {
            let k_rows = scheme.k_rows(lp);
            let c_k = scheme.c_scalar(lp, n);
            out.push(NormalizedBlock {
                l,
                lp,
                c: c_q * c_k,
                c_q,
                c_k,
                q_rows: q_rows.clone(),
                k_norm: k.select_rows(&k_rows).scale(1.0 / c_k),
                k_rows,
                q_norm: q_norm.clone(),
            });
        }
    }
    Ok(out)
}

/// `A^(T_ℓ,T_ℓ′) = Q^(T_ℓ)(K^(T_ℓ′))ᵀ` placed in an `n × n` matrix, zero
/// outside its rows and columns. Computed from the original rows.
pub fn expand_block(q: &DenseMatrix, k: &DenseMatrix, block: &NormalizedBlock) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(q.rows(), k.rows()).into_vec();
    let nk = k.rows();
    for &i in &block.q_rows {
        for &j in &block.k_rows {
            out[i * nk + j] = crate::exp_poly::dot(q.row(i), k.row(j));
        }
    }
    DenseMatrix::from_vec(q.rows(), nk, out).expect("finite inner products")
}

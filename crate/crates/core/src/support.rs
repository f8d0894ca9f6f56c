//! Single-threshold large/small splitting, the row/column-union mask and the
//! sparse large-part Gram matrix `A^(L)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exp_poly::dot;
use crate::matrix::{matmul_transb, DenseMatrix, SparseMatrix, SupportPattern};

/// `M = densify(large) + small` with `|large| > T` and `|small| ≤ T`.
#[derive(Debug, Clone)]
pub struct ThresholdSplit {
    pub t: f64,
    pub large: SparseMatrix,
    pub small: DenseMatrix,
}

impl ThresholdSplit {
    /// Sorted indices of rows holding at least one large entry.
    pub fn large_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.large.entries().iter().map(|e| e.0).collect();
        rows.dedup();
        rows
    }
}

/// Splits by strict magnitude: `|v| > T` goes to `large`, ties stay small.
pub fn split(m: &DenseMatrix, t: f64) -> Result<ThresholdSplit> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} must be >= 0"
        )));
    }
    let mut small = m.data().to_vec();
    let mut large = Vec::new();
    let cols = m.cols();
    for (pos, v) in small.iter_mut().enumerate() {
        if v.abs() > t {
            large.push((pos / cols, pos % cols, *v));
            *v = 0.0;
        }
    }
    Ok(ThresholdSplit {
        t,
        large: SparseMatrix::from_triplets(m.rows(), cols, large)?,
        small: DenseMatrix::from_vec(m.rows(), cols, small)?,
    })
}

/// Union of full rows (queries with a large entry) and full columns (keys
/// with a large entry) of the `n × n` attention grid.
///
/// The pattern is kept implicit; [`LargeMask::pattern`] materializes it.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeMask {
    n: usize,
    large_rows: Vec<usize>,
    large_cols: Vec<usize>,
    row_flag: Vec<bool>,
}

impl LargeMask {
    pub fn new(n: usize, mut large_rows: Vec<usize>, mut large_cols: Vec<usize>) -> Result<Self> {
        large_rows.sort_unstable();
        large_rows.dedup();
        large_cols.sort_unstable();
        large_cols.dedup();
        if let Some(&bad) = large_rows.iter().chain(&large_cols).find(|&&i| i >= n) {
            return Err(Error::IndexOutOfBounds {
                row: bad,
                col: bad,
                rows: n,
                cols: n,
            });
        }
        let mut row_flag = vec![false; n];
        for &i in &large_rows {
            row_flag[i] = true;
        }
        Ok(Self {
            n,
            large_rows,
            large_cols,
            row_flag,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn large_rows(&self) -> &[usize] {
        &self.large_rows
    }

    pub fn large_cols(&self) -> &[usize] {
        &self.large_cols
    }

    pub fn is_full_row(&self, i: usize) -> bool {
        self.row_flag[i]
    }

    /// `n·|rows| + n·|cols| − |rows|·|cols|`.
    pub fn len(&self) -> usize {
        let (r, c) = (self.large_rows.len(), self.large_cols.len());
        self.n * r + self.n * c - r * c
    }

    pub fn is_empty(&self) -> bool {
        self.large_rows.is_empty() && self.large_cols.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row_flag[i] || self.large_cols.binary_search(&j).is_ok()
    }

    /// Columns of row `i` that lie in the mask: all of them for a full row.
    pub fn row_cols(&self, i: usize) -> MaskRow<'_> {
        if self.row_flag[i] {
            MaskRow::All(self.n)
        } else {
            MaskRow::Some(&self.large_cols)
        }
    }

    pub fn pattern(&self) -> SupportPattern {
        let mut pos = Vec::with_capacity(self.len());
        for i in 0..self.n {
            match self.row_cols(i) {
                MaskRow::All(n) => pos.extend((0..n).map(|j| (i, j))),
                MaskRow::Some(cols) => pos.extend(cols.iter().map(|&j| (i, j))),
            }
        }
        SupportPattern::new(self.n, self.n, pos).expect("mask indices are in bounds")
    }
}

/// Mask columns of one row.
#[derive(Debug, Clone, Copy)]
pub enum MaskRow<'a> {
    All(usize),
    Some(&'a [usize]),
}

/// Mask from the rows of `Q` and `K` that carry a large entry.
pub fn build_large_mask(qs: &ThresholdSplit, ks: &ThresholdSplit, n: usize) -> Result<LargeMask> {
    if qs.small.rows() != n || ks.small.rows() != n {
        return Err(Error::DimensionMismatch {
            op: "build_large_mask",
            left: qs.small.shape(),
            right: ks.small.shape(),
        });
    }
    LargeMask::new(n, qs.large_rows(), ks.large_rows())
}

/// `A^(L)`: the full inner product `⟨Q_i, K_j⟩` at every mask position,
/// zero values kept as structural entries.
pub fn compute_a_l(q: &DenseMatrix, k: &DenseMatrix, mask: &LargeMask) -> Result<SparseMatrix> {
    if q.cols() != k.cols() || q.rows() != mask.n() || k.rows() != mask.n() {
        return Err(Error::DimensionMismatch {
            op: "compute_a_l",
            left: q.shape(),
            right: k.shape(),
        });
    }
    let mut t = Vec::with_capacity(mask.len());
    for i in 0..mask.n() {
        let qi = q.row(i);
        match mask.row_cols(i) {
            MaskRow::All(n) => t.extend((0..n).map(|j| (i, j, dot(qi, k.row(j))))),
            MaskRow::Some(cols) => t.extend(cols.iter().map(|&j| (i, j, dot(qi, k.row(j))))),
        }
    }
    SparseMatrix::structural(mask.n(), mask.n(), t)
}

/// `A^(s) = Q^(s)K^(s)ᵀ` with the mask zeroed. Dense, quadratic: for checks only.
pub fn compute_a_s_dense(
    qs: &ThresholdSplit,
    ks: &ThresholdSplit,
    mask: &LargeMask,
) -> Result<DenseMatrix> {
    let g = matmul_transb(&qs.small, &ks.small)?;
    let n = mask.n();
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        if mask.contains(i, j) {
            0.0
        } else {
            g.get(i, j)
        }
    }))
}

/// Bound `2nd·exp(−T²/σ²)` on the mean number of entries of one `n × d`
/// matrix with `|v| > T`, where `σ` is the variance proxy:
/// `Pr[|X| ≥ t] ≤ 2·exp(−t²/σ²)` for every entry. See
/// [`gaussian_variance_proxy`] for Gaussian samples.
pub fn expected_large_count(n: usize, d: usize, t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must be positive"
        )));
    }
    Ok(2.0 * n as f64 * d as f64 * (-(t * t) / (sigma * sigma)).exp())
}

/// Variance proxy of `N(0, s²)`: `Pr[|X| ≥ t] ≤ 2·exp(−t²/(2s²))`, so the
/// proxy is `√2·s`. Using `s` itself understates the tail beyond `t ≈ 1.9s`.
pub fn gaussian_variance_proxy(std: f64) -> f64 {
    std * std::f64::consts::SQRT_2
}

/// i.i.d. `N(0, σ²)` entries from a ChaCha8 stream seeded by `seed`.
pub fn sample_subgaussian(n: usize, d: usize, sigma: f64, seed: u64) -> Result<DenseMatrix> {
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma > 0.0)
        .ok_or_else(|| Error::InvalidArgument(format!("sigma {sigma} must be positive")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
    DenseMatrix::from_vec(n, d, data)
}

/// `T = √(c·ln n)`.
pub fn default_threshold(n: usize, c: f64) -> f64 {
    (c * (n as f64).ln()).sqrt()
}

/// Measured sparsity of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub n: usize,
    pub d: usize,
    pub t: f64,
    pub count_large_q: usize,
    pub count_large_k: usize,
    pub mask_size: usize,
    /// Per-matrix bound from [`expected_large_count`].
    pub expected_large: f64,
    /// `ln(mask_size)/ln(n) − 1`; `-inf` for an empty mask.
    pub alpha_hat: f64,
}

pub fn sparsity_report(
    qs: &ThresholdSplit,
    ks: &ThresholdSplit,
    mask: &LargeMask,
    sigma_proxy: f64,
) -> Result<SparsityReport> {
    let (n, d) = qs.small.shape();
    let mask_size = mask.len();
    Ok(SparsityReport {
        n,
        d,
        t: qs.t,
        count_large_q: qs.large.nnz(),
        count_large_k: ks.large.nnz(),
        mask_size,
        expected_large: expected_large_count(n, d, qs.t, sigma_proxy)?,
        alpha_hat: alpha_hat(mask_size, n),
    })
}

pub fn alpha_hat(mask_size: usize, n: usize) -> f64 {
    (mask_size as f64).ln() / (n as f64).ln() - 1.0
}

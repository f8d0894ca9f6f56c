//! Dense and sparse real matrices, entrywise (Hadamard) algebra and norms.
//!
//! Dense storage is row-major. Sparse storage is coordinate-list sorted by
//! `(row, col)`. Every reduction runs left to right over its index so results
//! are bit-reproducible regardless of the rayon pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest argument for which `f64::exp` stays finite.
pub const EXP_ARG_MAX: f64 = 709.782_712_893_384;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and NaN/Inf.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                value: data[pos],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: (i, r.len()),
                    right: (rows.len(), cols),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, data)
    }

    /// Crate-internal constructor for data already known to be finite.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Returns a copy with entry `(i, j)` replaced. Used for fault injection.
    pub fn with_entry(&self, i: usize, j: usize, value: f64) -> Result<Self> {
        let mut data = self.data.clone();
        data[i * self.cols + j] = value;
        Self::from_vec(self.rows, self.cols, data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_parts(self.cols, self.rows, data)
    }

    /// The sub-matrix made of the listed rows, in list order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_parts(idx.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip("sub", other, |a, b| a - b)
    }

    /// Entrywise product `A ∘ B`.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip("hadamard", other, |a, b| a * b)
    }

    fn zip(&self, op: &'static str, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Row sums `A·1`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// Scales row `i` by `1 / diag[i]`.
    pub fn div_rows(&self, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), self.rows);
        let mut data = self.data.clone();
        for (i, chunk) in data
            .chunks_mut(self.cols.max(1))
            .enumerate()
            .take(self.rows)
        {
            let s = diag[i];
            for v in chunk {
                *v /= s;
            }
        }
        Self::from_parts(self.rows, self.cols, data)
    }
}

/// Row-major view of a matrix for [`gemm`]: `(rows, cols, data, row stride, col stride)`.
pub(crate) type GemmView<'a> = (usize, usize, &'a [f64], isize, isize);

/// `C ← A·B + beta·C` for strided row-major operands, `C` being `m × n` with
/// row stride `ldc`.
///
/// Blocked and fused-multiply-add based, so sums are not strictly left to
/// right; results are still identical from run to run. Used by the engines,
/// not by [`matmul`].
pub(crate) fn gemm(a: GemmView<'_>, b: GemmView<'_>, c: &mut [f64], ldc: usize, beta: f64) {
    let (m, k, ad, rsa, csa) = a;
    let (kb, n, bd, rsb, csb) = b;
    assert_eq!(k, kb, "gemm inner dimensions");
    assert!(
        m == 0 || n == 0 || c.len() >= (m - 1) * ldc + n,
        "gemm output too small"
    );
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(ad.len() >= extent(m, k, rsa, csa) && bd.len() >= extent(k, n, rsb, csb));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            ad.as_ptr(),
            rsa,
            csa,
            bd.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

impl DenseMatrix {
    pub(crate) fn view(&self) -> GemmView<'_> {
        (self.rows, self.cols, &self.data, self.cols as isize, 1)
    }

    /// Rows `r0 .. r0 + count`.
    pub(crate) fn view_rows(&self, r0: usize, count: usize) -> GemmView<'_> {
        let c = self.cols;
        (
            count,
            c,
            &self.data[r0 * c..(r0 + count) * c],
            c as isize,
            1,
        )
    }

    pub(crate) fn view_t(&self) -> GemmView<'_> {
        (self.cols, self.rows, &self.data, 1, self.cols as isize)
    }
}

/// `A·B`, each entry summed left to right over the inner index. Rows are
/// computed in parallel; every entry's summation order is fixed.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    if m > 0 {
        out.par_chunks_mut(m).enumerate().for_each(|(i, orow)| {
            for (k, &aik) in a.row(i).iter().enumerate() {
                for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                    *o += aik * bkj;
                }
            }
        });
    }
    Ok(DenseMatrix::from_parts(n, m, out))
}

/// `A·Bᵀ`, identical in value to `matmul(a, &b.transpose())`.
pub fn matmul_transb(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "matmul_transb",
            left: a.shape(),
            right: b.shape(),
        });
    }
    matmul(a, &b.transpose())
}

/// `Aᵀ·B`, identical in value to `matmul(&a.transpose(), b)`.
pub fn matmul_transa(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul_transa",
            left: a.shape(),
            right: b.shape(),
        });
    }
    matmul(&a.transpose(), b)
}

/// Entrywise `exp`. Arguments above [`EXP_ARG_MAX`] are an error, not saturation.
pub fn entrywise_exp(a: &DenseMatrix) -> Result<DenseMatrix> {
    if let Some(pos) = a.data.iter().position(|&v| v > EXP_ARG_MAX) {
        return Err(Error::ExpOverflow {
            row: pos / a.cols,
            col: pos % a.cols,
            value: a.data[pos],
            limit: EXP_ARG_MAX,
        });
    }
    Ok(a.map(f64::exp))
}

/// Entrywise power `A^{∘c}`. Non-integer `c` needs strictly positive entries.
pub fn hadamard_pow(a: &DenseMatrix, c: f64) -> Result<DenseMatrix> {
    if !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "exponent {c} is not finite"
        )));
    }
    let integral = c.fract() == 0.0 && c.abs() <= i32::MAX as f64;
    let mut data = Vec::with_capacity(a.data.len());
    for (pos, &v) in a.data.iter().enumerate() {
        let (row, col) = (pos / a.cols, pos % a.cols);
        let out = if integral {
            v.powi(c as i32)
        } else {
            if v <= 0.0 {
                return Err(Error::Domain {
                    row,
                    col,
                    value: v,
                    exponent: c,
                });
            }
            v.powf(c)
        };
        if !out.is_finite() {
            return Err(Error::NonFinite {
                row,
                col,
                value: out,
            });
        }
        data.push(out);
    }
    Ok(DenseMatrix::from_parts(a.rows, a.cols, data))
}

/// Sorted, deduplicated set of positions in a `rows × cols` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPattern {
    rows: usize,
    cols: usize,
    positions: Vec<(usize, usize)>,
}

impl SupportPattern {
    pub fn new(rows: usize, cols: usize, mut positions: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(r, c)) = positions.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::IndexOutOfBounds {
                row: r,
                col: c,
                rows,
                cols,
            });
        }
        positions.sort_unstable();
        positions.dedup();
        Ok(Self {
            rows,
            cols,
            positions,
        })
    }

    /// Caller guarantees sorted, unique, in-bounds positions.
    pub(crate) fn from_sorted(rows: usize, cols: usize, positions: Vec<(usize, usize)>) -> Self {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        Self {
            rows,
            cols,
            positions,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.positions.binary_search(&(i, j)).is_ok()
    }

    /// 0/1 indicator matrix of the pattern.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for &(i, j) in &self.positions {
            data[i * self.cols + j] = 1.0;
        }
        DenseMatrix::from_parts(self.rows, self.cols, data)
    }
}

/// Sorted coordinate-list sparse matrix.
///
/// Ordinary construction drops explicit zeros. A matrix built with
/// [`SparseMatrix::structural`] keeps every listed position, zero or not,
/// so its stored pattern can act as a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    structural: bool,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
            structural: false,
        }
    }

    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let mut m = Self::checked(rows, cols, triplets)?;
        m.entries.retain(|e| e.2 != 0.0);
        Ok(m)
    }

    /// Keeps zeros at the listed positions; the stored pattern is the mask.
    pub fn structural(
        rows: usize,
        cols: usize,
        triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let mut m = Self::checked(rows, cols, triplets)?;
        m.structural = true;
        Ok(m)
    }

    fn checked(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, v) in &t {
            if r >= rows || c >= cols {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
        t.sort_unstable_by_key(|e| (e.0, e.1));
        if let Some(w) = t.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::DuplicateEntry {
                row: w[0].0,
                col: w[0].1,
            });
        }
        Ok(Self {
            rows,
            cols,
            entries: t,
            structural: false,
        })
    }

    /// Nonzero entries of a dense matrix.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            entries,
            structural: false,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_structural(&self) -> bool {
        self.structural
    }

    /// Every stored position, including structural zeros.
    pub fn pattern(&self) -> SupportPattern {
        SupportPattern::from_sorted(
            self.rows,
            self.cols,
            self.entries.iter().map(|e| (e.0, e.1)).collect(),
        )
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for &(i, j, v) in &self.entries {
            data[i * self.cols + j] = v;
        }
        DenseMatrix::from_parts(self.rows, self.cols, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    /// Applies `f` to stored values, keeping the pattern.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, f(v))).collect(),
            structural: self.structural,
        }
    }
}

/// Anything with a shape and a set of nonzero positions.
pub trait HasSupport {
    fn shape(&self) -> (usize, usize);
    fn support(&self) -> SupportPattern;
}

impl HasSupport for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn support(&self) -> SupportPattern {
        let mut pos = Vec::new();
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if *v != 0.0 {
                    pos.push((i, j));
                }
            }
        }
        SupportPattern::from_sorted(self.rows, self.cols, pos)
    }
}

impl HasSupport for SparseMatrix {
    fn shape(&self) -> (usize, usize) {
        SparseMatrix::shape(self)
    }

    fn support(&self) -> SupportPattern {
        SupportPattern::from_sorted(
            self.rows,
            self.cols,
            self.entries
                .iter()
                .filter(|e| e.2 != 0.0)
                .map(|e| (e.0, e.1))
                .collect(),
        )
    }
}

impl HasSupport for SupportPattern {
    fn shape(&self) -> (usize, usize) {
        SupportPattern::shape(self)
    }

    fn support(&self) -> SupportPattern {
        self.clone()
    }
}

/// Positions with `|value| > 0`, no tolerance.
pub fn support<M: HasSupport + ?Sized>(m: &M) -> SupportPattern {
    m.support()
}

/// True iff no position is nonzero in two different matrices.
pub fn are_disjoint(mats: &[&dyn HasSupport]) -> Result<bool> {
    let Some(first) = mats.first() else {
        return Ok(true);
    };
    let shape = first.shape();
    let mut all = Vec::new();
    for m in mats {
        if m.shape() != shape {
            return Err(Error::DimensionMismatch {
                op: "are_disjoint",
                left: shape,
                right: m.shape(),
            });
        }
        all.extend_from_slice(m.support().positions());
    }
    all.sort_unstable();
    Ok(all.windows(2).all(|w| w[0] != w[1]))
}

/// Norm selector. All norms are entrywise.
#[derive(Debug, Clone, Copy)]
pub enum Norm<'a> {
    /// Largest absolute entry.
    Linf,
    L1,
    /// `(Σ|a|^p)^{1/p}` for `p ≥ 1`.
    Lp(f64),
    Fro,
    /// `‖A − R‖_F / ‖R‖_F`.
    RelFro(&'a DenseMatrix),
}

pub fn norm(a: &DenseMatrix, kind: Norm<'_>) -> Result<f64> {
    match kind {
        Norm::Linf => Ok(a.max_abs()),
        Norm::L1 => Ok(a.data.iter().map(|v| v.abs()).sum()),
        Norm::Lp(p) => {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "lp norm needs finite p >= 1, got {p}"
                )));
            }
            Ok(a.data
                .iter()
                .map(|v| v.abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p))
        }
        Norm::Fro => Ok(a.data.iter().map(|v| v * v).sum::<f64>().sqrt()),
        Norm::RelFro(r) => {
            if r.shape() != a.shape() {
                return Err(Error::DimensionMismatch {
                    op: "rel_fro",
                    left: a.shape(),
                    right: r.shape(),
                });
            }
            let den = norm(r, Norm::Fro)?;
            if den == 0.0 {
                return Err(Error::ZeroReference);
            }
            Ok(norm(&a.sub(r)?, Norm::Fro)? / den)
        }
    }
}

/// `S·V` touching only stored entries of `S`.
pub fn sparse_apply(s: &SparseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != v.rows() {
        return Err(Error::DimensionMismatch {
            op: "sparse_apply",
            left: s.shape(),
            right: v.shape(),
        });
    }
    let m = v.cols();
    let mut out = vec![0.0; s.rows * m];
    for &(i, j, x) in &s.entries {
        let orow = &mut out[i * m..(i + 1) * m];
        for (o, &vv) in orow.iter_mut().zip(v.row(j)) {
            *o += x * vv;
        }
    }
    Ok(DenseMatrix::from_parts(s.rows, m, out))
}

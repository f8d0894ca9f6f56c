//! Sketched feature map `φ′(x) = (S x^{⊗p/2})^{⊗2}` for the degree-`p`
//! polynomial kernel `⟨x, y⟩^p`.
//!
//! With `q = p/2` the half-map is computed without forming `x^{⊗q}`:
//! `y₁ = S₁x/√z`, `y₂ = y₁ ∘ S₂x`, `y_k = (W_k y_{k−1}) ∘ S_k x` for `k ≥ 3`,
//! where `S_k` are `z × r` sign matrices and `W_k` are `z × z` sign matrices
//! scaled by `1/√z`. Every stage is an independent sketch, so
//! `E⟨y_q(x), y_q(y)⟩ = ⟨x, y⟩^q`. Then `φ′ = y_q ⊗ y_q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_KAPPA: f64 = 8.0;

/// Parameters of one sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchSpec {
    /// Even kernel degree.
    pub p: usize,
    pub input_dim: usize,
    /// Sketch width; `φ′` has `z²` coordinates.
    pub z: usize,
    pub eps: f64,
    pub delta: f64,
    pub kappa: f64,
    pub seed: u64,
    /// Distinguishes independent sketches drawn from one seed.
    pub stream: u64,
}

impl SketchSpec {
    /// `z = ⌈κ·p·ε⁻²·ln(n/δ)⌉`.
    pub fn new(
        p: usize,
        input_dim: usize,
        n: usize,
        eps: f64,
        delta: f64,
        kappa: f64,
        seed: u64,
    ) -> Result<Self> {
        if p < 2 || p % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "sketch degree p={p} must be even and >= 2"
            )));
        }
        if !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) || !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad sketch parameters eps={eps}, delta={delta}, kappa={kappa}"
            )));
        }
        let z = sketch_width(p, n, eps, delta, kappa);
        Ok(Self {
            p,
            input_dim,
            z,
            eps,
            delta,
            kappa,
            seed,
            stream: 0,
        })
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_width(mut self, z: usize) -> Self {
        self.z = z.max(1);
        self
    }
}

pub fn sketch_width(p: usize, n: usize, eps: f64, delta: f64, kappa: f64) -> usize {
    let z = (kappa * p as f64 * (n as f64 / delta).ln() / (eps * eps)).ceil();
    (z as usize).max(1)
}

/// Materialized sign matrices for one [`SketchSpec`].
#[derive(Debug, Clone)]
pub struct Sketch {
    z: usize,
    r: usize,
    /// `S_1 … S_q`, each `z × r`, entries ±1.
    s: Vec<Vec<f64>>,
    /// `W_3 … W_q`, each `z × z`, entries ±1/√z.
    w: Vec<Vec<f64>>,
}

fn signs(rng: &mut ChaCha8Rng, len: usize, mag: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let mut bits: u64 = rng.gen();
        for _ in 0..64.min(len - out.len()) {
            out.push(if bits & 1 == 1 { mag } else { -mag });
            bits >>= 1;
        }
    }
    out
}

impl Sketch {
    pub fn new(spec: &SketchSpec) -> Self {
        let q = spec.p / 2;
        let (z, r) = (spec.z, spec.input_dim);
        // One ChaCha stream per (sketch, stage) so stages are reproducible and independent.
        let stage_rng = |stage: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(spec.stream.wrapping_mul(1 << 8).wrapping_add(stage));
            rng
        };
        let s = (0..q)
            .map(|k| signs(&mut stage_rng(k as u64), z * r, 1.0))
            .collect();
        let wmag = 1.0 / (z as f64).sqrt();
        let w = (2..q)
            .map(|k| signs(&mut stage_rng(128 + k as u64), z * z, wmag))
            .collect();
        Self { z, r, s, w }
    }

    pub fn z(&self) -> usize {
        self.z
    }

    /// `y_q(x)`, the `z`-dimensional half of `φ′(x)`.
    pub fn half(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.r {
            return Err(Error::DimensionMismatch {
                op: "sketch_feature_map",
                left: (1, x.len()),
                right: (self.z, self.r),
            });
        }
        let apply = |m: &[f64], cols: usize, v: &[f64]| -> Vec<f64> {
            m.chunks(cols)
                .map(|row| row.iter().zip(v).fold(0.0, |s, (a, b)| s + a * b))
                .collect()
        };
        let scale = 1.0 / (self.z as f64).sqrt();
        let mut y: Vec<f64> = apply(&self.s[0], self.r, x)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        for k in 1..self.s.len() {
            if k >= 2 {
                y = apply(&self.w[k - 2], self.z, &y);
            }
            let t = apply(&self.s[k], self.r, x);
            for (a, b) in y.iter_mut().zip(&t) {
                *a *= b;
            }
        }
        Ok(y)
    }

    /// `φ′(x) = y ⊗ y`.
    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.half(x)?;
        let mut out = Vec::with_capacity(y.len() * y.len());
        for &a in &y {
            out.extend(y.iter().map(|&b| a * b));
        }
        Ok(out)
    }

    /// Half-maps of every row.
    pub fn half_rows(&self, u: &DenseMatrix) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(u.rows() * self.z);
        for i in 0..u.rows() {
            data.extend(self.half(u.row(i))?);
        }
        DenseMatrix::from_vec(u.rows(), self.z, data)
    }
}

/// `φ′(x)` of length `z²`.
pub fn sketch_feature_map(x: &[f64], spec: &SketchSpec) -> Result<Vec<f64>> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            op: "sketch_feature_map",
            left: (1, x.len()),
            right: (1, spec.input_dim),
        });
    }
    Sketch::new(spec).feature(x)
}

/// `φ′(U₁)·φ′(U₂)ᵀ`, evaluated as `(Y₁Y₂ᵀ)^{∘2}` from the half-maps since
/// `⟨y ⊗ y, y′ ⊗ y′⟩ = ⟨y, y′⟩²`.
pub fn sketched_poly_kernel(
    u1: &DenseMatrix,
    u2: &DenseMatrix,
    spec: &SketchSpec,
) -> Result<DenseMatrix> {
    if u1.cols() != spec.input_dim || u2.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            op: "sketched_poly_kernel",
            left: u1.shape(),
            right: u2.shape(),
        });
    }
    let sk = Sketch::new(spec);
    let g = crate::matrix::matmul_transb(&sk.half_rows(u1)?, &sk.half_rows(u2)?)?;
    Ok(g.map(|t| t * t))
}

/// The per-entry bound `ε·‖u_i‖₂^p·‖v_j‖₂^p`, maximized over all pairs.
pub fn sketch_error_bound(u1: &DenseMatrix, u2: &DenseMatrix, eps: f64, p: usize) -> f64 {
    let max_norm = |u: &DenseMatrix| {
        (0..u.rows())
            .map(|i| u.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    eps * max_norm(u1).powi(p as i32) * max_norm(u2).powi(p as i32)
}

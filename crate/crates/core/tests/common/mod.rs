//! Independent oracles shared by the integration tests. Nothing here calls
//! into the crate's arithmetic; values go in and out as plain `Vec`s.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbattn::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[lo, hi)`.
pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Uniform entries with each one zeroed with probability `p_zero`.
pub fn sparse_uniform(rows: usize, cols: usize, p_zero: f64, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = r.gen_range(-2.0..2.0);
            if r.gen_bool(p_zero) {
                0.0
            } else {
                v
            }
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn triple_loop(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `Q·Kᵀ` entry by entry.
pub fn gram(q: &DenseMatrix, k: &DenseMatrix) -> Vec<Vec<f64>> {
    let (q, k) = (to_rows(q), to_rows(k));
    q.iter()
        .map(|qi| {
            k.iter()
                .map(|kj| {
                    let mut s = 0.0;
                    for t in 0..qi.len() {
                        s += qi[t] * kj[t];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn max_diff(a: &DenseMatrix, b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.rows(), b.len());
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        assert_eq!(a.cols(), row.len());
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) - v).abs());
        }
    }
    worst
}

pub fn max_diff_mat(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    max_diff(a, &to_rows(b))
}

pub fn horner(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &cj in c.iter().rev() {
        acc = acc * x + cj;
    }
    acc
}

/// Every exponent vector of length `d` with total degree at most `g`, by
/// counting through `(g+1)^d` tuples.
pub fn brute_monomials(d: usize, g: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut e = vec![0u32; d];
    loop {
        if e.iter().sum::<u32>() as usize <= g {
            out.push(e.clone());
        }
        let mut k = 0;
        loop {
            if k == d {
                return out;
            }
            e[k] += 1;
            if e[k] as usize <= g {
                break;
            }
            e[k] = 0;
            k += 1;
        }
    }
}

pub fn factorial(n: u32) -> u128 {
    (1..=n as u128).product()
}

pub fn multinomial_naive(e: &[u32]) -> u128 {
    factorial(e.iter().sum()) / e.iter().map(|&x| factorial(x)).product::<u128>()
}

pub fn binom_f(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `exp(QKᵀ/d)` entry by entry.
pub fn exp_gram(q: &DenseMatrix, k: &DenseMatrix) -> Vec<Vec<f64>> {
    let d = q.cols() as f64;
    gram(q, k)
        .into_iter()
        .map(|r| r.into_iter().map(|s| (s / d).exp()).collect())
        .collect()
}

/// `D⁻¹·exp(QKᵀ/d)·V` with no shared code: per query, weights then average.
pub fn naive_attention(q: &DenseMatrix, k: &DenseMatrix, v: &DenseMatrix) -> Vec<Vec<f64>> {
    let a = exp_gram(q, k);
    let v = to_rows(v);
    a.iter()
        .map(|row| {
            let den: f64 = row.iter().sum();
            (0..v[0].len())
                .map(|c| row.iter().zip(&v).map(|(w, vr)| w * vr[c]).sum::<f64>() / den)
                .collect()
        })
        .collect()
}

/// `D⁻¹·A·V` for an explicit kernel matrix.
pub fn normalize_rows(a: &[Vec<f64>], v: &DenseMatrix) -> Vec<Vec<f64>> {
    let v = to_rows(v);
    a.iter()
        .map(|row| {
            let den: f64 = row.iter().sum();
            (0..v[0].len())
                .map(|c| row.iter().zip(&v).map(|(w, vr)| w * vr[c]).sum::<f64>() / den)
                .collect()
        })
        .collect()
}

pub fn linf(m: &DenseMatrix) -> f64 {
    m.data().iter().fold(0.0, |a, v| a.max(v.abs()))
}

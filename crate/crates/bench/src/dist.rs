//! Entry histograms with the `±√(ln n)` markers.

use std::io::Write;

use sbattn::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(lo, hi, count)`; every bin is `[lo, hi)` except the last, which is closed.
    pub bins: Vec<(f64, f64, usize)>,
    pub n: usize,
    pub d: usize,
    /// `√(ln n)` for `n` rows.
    pub marker: f64,
    /// Fraction of entries with `|v| > marker`.
    pub frac_beyond: f64,
    /// Gaussian MLE `√(mean (v − v̄)²)`.
    pub sigma_hat: f64,
}

/// `bins` equal-width bins over `[min, max]`. A constant matrix gets the
/// range `[v − ½, v + ½]` so its single value lands in one bin.
pub fn histogram(m: &DenseMatrix, bins: usize) -> Histogram {
    assert!(bins >= 1, "need at least one bin");
    let data = m.data();
    let (mut lo, mut hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if data.is_empty() {
        (lo, hi) = (0.0, 0.0);
    }
    if hi == lo {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in data {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let edges = |b: usize| lo + width * b as f64;
    let (n, d) = m.shape();
    let marker = (n as f64).ln().max(0.0).sqrt();
    let len = data.len().max(1) as f64;
    let mean = data.iter().sum::<f64>() / len;
    Histogram {
        bins: (0..bins)
            .map(|b| {
                (
                    edges(b),
                    if b + 1 == bins { hi } else { edges(b + 1) },
                    counts[b],
                )
            })
            .collect(),
        n,
        d,
        marker,
        frac_beyond: data.iter().filter(|v| v.abs() > marker).count() as f64 / len,
        sigma_hat: (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len).sqrt(),
    }
}

/// `bin_lo,bin_hi,count` rows, then one `#` trailer line.
pub fn write_csv<W: Write>(dst: W, h: &Histogram) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for &(lo, hi, c) in &h.bins {
        w.write_record([format!("{lo:?}"), format!("{hi:?}"), c.to_string()])?;
    }
    let mut inner = w.into_inner().map_err(|e| e.into_error())?;
    writeln!(
        inner,
        "# n={} d={} marker=+-{:?} frac_beyond={:?} sigma_hat={:?}",
        h.n, h.d, h.marker, h.frac_beyond, h.sigma_hat
    )?;
    inner.flush()?;
    Ok(())
}

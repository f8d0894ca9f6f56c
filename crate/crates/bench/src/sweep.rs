//! Threshold sweep: wall time and error of each engine against the exact one.

use std::io::Write;
use std::time::Instant;

use sbattn::{
    alpha_hat, approx_attention_multi, approx_attention_single, exact_attention, norm,
    poly_attention_as23, sample_subgaussian, AttentionInputs, AttentionOutput, DenseMatrix, Engine,
    MultiConfig, Norm, Result,
};

use crate::config::Settings;

pub const HEADER: [&str; 7] = [
    "threshold",
    "engine",
    "wall_ms_median",
    "linf_err",
    "rel_fro_err",
    "mask_size",
    "alpha_hat",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub engine: Engine,
    pub wall_ms_median: f64,
    pub linf_err: f64,
    pub rel_fro_err: f64,
    /// Only the support-basis engine has a mask.
    pub mask_size: Option<usize>,
    pub alpha_hat: Option<f64>,
}

/// `Q`, `K` with `N(0, σ²)` entries and `V` with `N(0, 1)` entries, from
/// consecutive seeds.
pub fn sweep_inputs(s: &Settings) -> Result<AttentionInputs> {
    AttentionInputs::new(
        sample_subgaussian(s.n, s.d, s.sigma, s.seed)?,
        sample_subgaussian(s.n, s.d, s.sigma, s.seed.wrapping_add(1))?,
        sample_subgaussian(s.n, s.d, 1.0, s.seed.wrapping_add(2))?,
    )
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs `f` `repeats` times; returns the last output and the median milliseconds.
fn timed(
    repeats: usize,
    mut f: impl FnMut() -> Result<AttentionOutput>,
) -> Result<(AttentionOutput, f64)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let out = f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((last.expect("repeats >= 1"), median(times)))
}

fn errors(p: &DenseMatrix, exact: &DenseMatrix) -> Result<(f64, f64)> {
    Ok((p.sub(exact)?.max_abs(), norm(p, Norm::RelFro(exact))?))
}

/// One row per (threshold, engine), thresholds outermost. Engines that do
/// not use the threshold are measured once and repeated on every row.
pub fn run_sweep(s: &Settings) -> Result<Vec<SweepRow>> {
    let inp = sweep_inputs(s)?;
    let (exact, exact_ms) = timed(s.repeats, || exact_attention(&inp))?;
    let mut fixed = Vec::new();
    for &e in &s.engines {
        let (out, ms) = match e {
            Engine::Exact => (exact.clone(), exact_ms),
            Engine::As23 => timed(s.repeats, || poly_attention_as23(&inp, s.eps0))?,
            Engine::MultiThreshold => {
                let cfg = MultiConfig {
                    eps0: s.eps0,
                    seed: s.seed,
                    ..Default::default()
                };
                timed(s.repeats, || {
                    approx_attention_multi(&inp, &cfg).map(|m| m.out)
                })?
            }
            Engine::SupportBasis => continue,
        };
        let (linf, rel) = errors(&out.p, &exact.p)?;
        fixed.push((e, ms, linf, rel));
    }

    let mut rows = Vec::new();
    for &t in &s.thresholds {
        for &e in &s.engines {
            if e == Engine::SupportBasis {
                let (out, ms) = timed(s.repeats, || approx_attention_single(&inp, t, s.eps0))?;
                let (linf, rel) = errors(&out.p, &exact.p)?;
                let mask = out.stats.mask_size.unwrap_or(0);
                rows.push(SweepRow {
                    threshold: t,
                    engine: e,
                    wall_ms_median: ms,
                    linf_err: linf,
                    rel_fro_err: rel,
                    mask_size: Some(mask),
                    alpha_hat: Some(alpha_hat(mask, s.n)),
                });
            } else {
                let &(_, ms, linf, rel) = fixed.iter().find(|f| f.0 == e).expect("measured above");
                rows.push(SweepRow {
                    threshold: t,
                    engine: e,
                    wall_ms_median: ms,
                    linf_err: linf,
                    rel_fro_err: rel,
                    mask_size: None,
                    alpha_hat: None,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(dst: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:?}", r.threshold),
            r.engine.name().to_string(),
            format!("{:.3}", r.wall_ms_median),
            format!("{:e}", r.linf_err),
            format!("{:e}", r.rel_fro_err),
            r.mask_size.map_or(String::new(), |m| m.to_string()),
            r.alpha_hat.map_or(String::new(), |a| format!("{a:.6}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Reconstruction error metrics and calibration diagnostics.

use serde::Serialize;

use crate::error::{check_len, Error, Result};

/// ||xhat - xstar|| / ||xstar||.
pub fn nrmse(xhat: &[f64], xstar: &[f64]) -> Result<f64> {
    check_len(xstar.len(), xhat.len())?;
    let norm: f64 = xstar.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Input("ground truth has zero norm".into()));
    }
    let err: f64 = xhat
        .iter()
        .zip(xstar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(xhat: &[f64], xstar: &[f64], peak: f64) -> Result<f64> {
    check_len(xstar.len(), xhat.len())?;
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("peak must be positive, got {peak}")));
    }
    if xstar.is_empty() {
        return Err(Error::Input("empty image".into()));
    }
    let mse = xhat
        .iter()
        .zip(xstar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / xstar.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Counts of values in uniform bins over [0, 1]; bins are half-open
/// [lo, hi) except the last, which is closed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Largest bin count over smallest.
    pub fn max_min_ratio(&self) -> f64 {
        let max = *self.counts.iter().max().unwrap_or(&0) as f64;
        let min = *self.counts.iter().min().unwrap_or(&0) as f64;
        max / min
    }
}

pub fn cdf_histogram(s: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::Parameter("histogram needs at least 2 bins".into()));
    }
    let mut counts = vec![0u64; n_bins];
    for &v in s {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("value {v} outside [0, 1]")));
        }
        let bin = ((v * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let edges = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    Ok(Histogram {
        edges,
        counts,
        total: s.len() as u64,
    })
}

/// Two-sided Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut v = sample.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

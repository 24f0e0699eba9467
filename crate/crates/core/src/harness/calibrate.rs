//! Calibration check: the DC loss of the true clean signal (ideal case) and
//! of the noisy measurements used as their own prediction (overfit case),
//! repeated over fresh noise draws.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::deconv::two_tone_signal;
use super::io;
use crate::error::{Error, Result};
use crate::losses::{DcLoss, ReferenceMode};
use crate::metrics::{cdf_histogram, Histogram};
use crate::noise_models::NoiseModel;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrateSpec {
    pub model: NoiseModel,
    pub n: usize,
    pub repeats: usize,
    /// Poisson only: rates are `counts_scale * (2 + theta)` for the
    /// two-tone signal theta, so every rate is at least half the scale.
    pub counts_scale: f64,
    pub seed: u64,
    pub reference_mode: ReferenceMode,
    pub randomized_pit: bool,
    pub hist_bins: usize,
}

impl Default for CalibrateSpec {
    fn default() -> Self {
        Self {
            model: NoiseModel::Gaussian { sigma: 0.1 },
            n: 1_000_000,
            repeats: 100,
            counts_scale: 10.0,
            seed: 0,
            reference_mode: ReferenceMode::FreshSample,
            randomized_pit: false,
            hist_bins: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CaseStats {
    pub mean: f64,
    pub sd: f64,
    /// mean - 1.96 sd
    pub lo: f64,
    /// mean + 1.96 sd
    pub hi: f64,
}

impl CaseStats {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            lo: mean - 1.96 * sd,
            hi: mean + 1.96 * sd,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrateReport {
    pub spec: CalibrateSpec,
    /// Per-repeat DC loss at the clean signal.
    pub truth_values: Vec<f64>,
    /// Per-repeat DC loss with the measurements as prediction.
    pub noisy_values: Vec<f64>,
    pub truth: CaseStats,
    pub noisy: CaseStats,
    /// PIT histograms pooled over all repeats.
    pub hist_truth: Histogram,
    pub hist_noisy: Histogram,
    pub runtime_seconds: f64,
}

/// Clean signal for the chosen model.
pub fn clean_signal(spec: &CalibrateSpec) -> Vec<f64> {
    let theta = two_tone_signal(spec.n);
    match spec.model {
        NoiseModel::Poisson => theta.iter().map(|t| spec.counts_scale * (2.0 + t)).collect(),
        _ => theta,
    }
}

fn pool(a: Histogram, b: &Histogram) -> Histogram {
    Histogram {
        edges: a.edges,
        counts: a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect(),
        total: a.total + b.total,
    }
}

pub fn run_calibrate(spec: &CalibrateSpec, out: Option<&Path>) -> Result<CalibrateReport> {
    if spec.n == 0 || spec.repeats == 0 {
        return Err(Error::Config("calibration needs n >= 1 and repeats >= 1".into()));
    }
    spec.model.validate()?;
    let started = std::time::Instant::now();
    let clean = clean_signal(spec);
    let dc = DcLoss::new(spec.model)
        .with_mode(spec.reference_mode)
        .with_randomized_pit(spec.randomized_pit);
    // Repeat k owns streams 3k (noise), 3k + 1 and 3k + 2 (the two cases),
    // so results do not depend on how repeats are scheduled across workers.
    let per_repeat = (0..spec.repeats)
        .into_par_iter()
        .map(|k| {
            let id = 3 * k as u64;
            let m = spec
                .model
                .sample(&clean, &mut RngStream::with_stream(spec.seed, id))?;
            let mut hists = Vec::with_capacity(2);
            let mut values = Vec::with_capacity(2);
            for (case, yhat) in [&clean, &m].into_iter().enumerate() {
                let mut s = RngStream::with_stream(spec.seed, id + 1 + case as u64);
                let (v, sv) = dc.value_with_scores(&m, yhat, &mut s)?;
                values.push(v);
                hists.push(cdf_histogram(&sv.s, spec.hist_bins)?);
            }
            Ok((values, hists))
        })
        .collect::<Result<Vec<_>>>()?;

    let truth_values: Vec<f64> = per_repeat.iter().map(|(v, _)| v[0]).collect();
    let noisy_values: Vec<f64> = per_repeat.iter().map(|(v, _)| v[1]).collect();
    let mut hists = per_repeat.into_iter().map(|(_, h)| h);
    let first = hists.next().expect("at least one repeat");
    let (mut hist_truth, mut hist_noisy) = (first[0].clone(), first[1].clone());
    for h in hists {
        hist_truth = pool(hist_truth, &h[0]);
        hist_noisy = pool(hist_noisy, &h[1]);
    }
    let report = CalibrateReport {
        spec: spec.clone(),
        truth: CaseStats::from_values(&truth_values),
        noisy: CaseStats::from_values(&noisy_values),
        truth_values,
        noisy_values,
        hist_truth,
        hist_noisy,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

fn write_artifacts(rep: &CalibrateReport, dir: &Path) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_histogram(&dir.join("hist_truth.csv"), &rep.hist_truth)?;
    io::write_histogram(&dir.join("hist_noisy.csv"), &rep.hist_noisy)?;
    let rows: Vec<Vec<f64>> = rep
        .truth_values
        .iter()
        .zip(&rep.noisy_values)
        .enumerate()
        .map(|(k, (a, b))| vec![k as f64, *a, *b])
        .collect();
    io::write_table(&dir.join("dc_values.csv"), &["repeat", "truth", "noisy"], &rows)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        spec: &'a CalibrateSpec,
        truth: CaseStats,
        noisy: CaseStats,
        runtime_seconds: f64,
    }
    io::write_json(
        &dir.join("summary.json"),
        &Summary {
            experiment: "calibrate",
            spec: &rep.spec,
            truth: rep.truth,
            noisy: rep.noisy,
            runtime_seconds: rep.runtime_seconds,
        },
    )
}

//! 1D deconvolution: a two-frequency sinusoid blurred by a Gaussian kernel
//! and observed under additive Gaussian noise, reconstructed once with MSE
//! and once with the DC loss.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use super::io;
use crate::error::Result;
use crate::forward_ops::{gaussian_kernel, ForwardOp};
use crate::losses::{DcLoss, ReferenceMode};
use crate::metrics::{cdf_histogram, nrmse, Histogram};
use crate::noise_models::NoiseModel;
use crate::optim::{run, LossKind, OptRun, Problem, RunConfig};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeconvSpec {
    pub n: usize,
    pub sigma_noise: f64,
    pub kernel_sigma: f64,
    pub kernel_halfwidth: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub reference_mode: ReferenceMode,
    pub hist_bins: usize,
}

impl Default for DeconvSpec {
    fn default() -> Self {
        Self {
            n: 500,
            sigma_noise: 0.1,
            kernel_sigma: 1.0,
            kernel_halfwidth: 15,
            iterations: 20_000,
            lr: 0.005,
            seed: 0,
            reference_mode: ReferenceMode::FreshSample,
            hist_bins: 20,
        }
    }
}

/// theta(x) = sin(10 pi x) + 0.5 sin(40 pi x) on `n` uniform points of [0, 1].
pub fn two_tone_signal(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            (10.0 * PI * x).sin() + 0.5 * (40.0 * PI * x).sin()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub final_dc: f64,
    pub final_mse_to_measurements: f64,
    /// ||theta_hat - theta*||_2 before re-blurring.
    pub signal_l2_error: f64,
    pub final_nrmse: f64,
    pub min_nrmse: f64,
    pub argmin_iteration: usize,
}

#[derive(Clone, Debug)]
pub struct DeconvReport {
    pub spec: DeconvSpec,
    pub truth: Vec<f64>,
    pub clean: Vec<f64>,
    pub measurements: Vec<f64>,
    pub mse_run: OptRun,
    pub dc_run: OptRun,
    pub summaries: Vec<MethodSummary>,
    pub histograms: Vec<(String, Histogram)>,
    pub runtime_seconds: f64,
}

fn summarize(method: &str, run: &OptRun, truth: &[f64]) -> Result<MethodSummary> {
    let last = run.last();
    let best = run.best_nrmse();
    let l2 = run
        .final_params
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(MethodSummary {
        method: method.into(),
        final_dc: last.dc,
        final_mse_to_measurements: last.mse,
        signal_l2_error: l2,
        final_nrmse: nrmse(&run.final_params, truth)?,
        min_nrmse: best.nrmse,
        argmin_iteration: best.iteration,
    })
}

pub fn run_deconv(spec: &DeconvSpec, out: Option<&Path>) -> Result<DeconvReport> {
    let started = std::time::Instant::now();
    let truth = two_tone_signal(spec.n);
    let kernel = gaussian_kernel(spec.kernel_sigma, spec.kernel_halfwidth)?;
    let op = ForwardOp::conv1d(kernel, spec.n)?;
    let clean = op.apply(&truth)?;
    let model = NoiseModel::gaussian(spec.sigma_noise)?;
    let mut noise_stream = RngStream::with_stream(spec.seed, u64::MAX);
    let measurements = model.sample(&clean, &mut noise_stream)?;

    let problem = Problem::new(&op, model, &measurements, vec![0.0; spec.n]).with_truth(&truth);
    let base = RunConfig {
        iterations: spec.iterations,
        lr: spec.lr,
        seed: spec.seed,
        reference_mode: spec.reference_mode,
        ..RunConfig::default()
    };
    let mse_cfg = RunConfig {
        loss: LossKind::Mse,
        ..base.clone()
    };
    let dc_cfg = RunConfig {
        loss: LossKind::Dc,
        ..base
    };
    let (mse_run, dc_run) = rayon::join(|| run(&mse_cfg, &problem), || run(&dc_cfg, &problem));
    let (mse_run, dc_run) = (mse_run?, dc_run?);

    // PIT histograms under each implied noise model, plus the truth.
    let dc = DcLoss::new(model);
    let mut histograms = Vec::new();
    for (name, params) in [
        ("truth", &truth),
        ("mse", &mse_run.final_params),
        ("dc", &dc_run.final_params),
    ] {
        let yhat = op.apply(params)?;
        let s = dc.scores(&measurements, &yhat, &mut RngStream::new(spec.seed))?.s;
        histograms.push((name.to_string(), cdf_histogram(&s, spec.hist_bins)?));
    }

    let summaries = vec![
        summarize("mse", &mse_run, &truth)?,
        summarize("dc", &dc_run, &truth)?,
    ];
    let report = DeconvReport {
        spec: spec.clone(),
        truth,
        clean,
        measurements,
        mse_run,
        dc_run,
        summaries,
        histograms,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_artifacts(&report, &op, dir)?;
    }
    Ok(report)
}

fn write_artifacts(rep: &DeconvReport, op: &ForwardOp, dir: &Path) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_trajectory(&dir.join("trajectory_mse.csv"), &rep.mse_run.records, false)?;
    io::write_trajectory(&dir.join("trajectory_dc.csv"), &rep.dc_run.records, false)?;
    for (name, h) in &rep.histograms {
        io::write_histogram(&dir.join(format!("hist_{name}.csv")), h)?;
    }
    let reblur_mse = op.apply(&rep.mse_run.final_params)?;
    let reblur_dc = op.apply(&rep.dc_run.final_params)?;
    let n = rep.truth.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            vec![
                if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 },
                rep.truth[i],
                rep.clean[i],
                rep.measurements[i],
                rep.mse_run.final_params[i],
                rep.dc_run.final_params[i],
                reblur_mse[i],
                reblur_dc[i],
            ]
        })
        .collect();
    io::write_table(
        &dir.join("signals.csv"),
        &[
            "x",
            "truth",
            "blurred",
            "measured",
            "recon_mse",
            "recon_dc",
            "reblur_mse",
            "reblur_dc",
        ],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        spec: &'a DeconvSpec,
        methods: &'a [MethodSummary],
        runtime_seconds: f64,
    }
    io::write_json(
        &dir.join("summary.json"),
        &Summary {
            experiment: "deconv",
            spec: &rep.spec,
            methods: &rep.summaries,
            runtime_seconds: rep.runtime_seconds,
        },
    )
}

//! Toy emission tomography: a synthetic piecewise-constant phantom, a
//! parallel-beam projector and Poisson counts, reconstructed with NLL-Adam,
//! DC-Adam and MLEM.

use std::path::Path;

use serde::Serialize;

use super::io;
use crate::error::{Error, Result};
use crate::forward_ops::{ForwardOp, Projector, ProjectorGeometry};
use crate::losses::ReferenceMode;
use crate::noise_models::NoiseModel;
use crate::optim::{run, LossKind, OptRun, OptimizerKind, Problem, RunConfig};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TomoSpec {
    pub side: usize,
    pub n_angles: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Multiplies the system matrix, i.e. expected counts per unit activity
    /// and unit path length.
    pub counts_scale: f64,
    pub seed: u64,
    pub reference_mode: ReferenceMode,
    pub randomized_pit: bool,
    pub precondition: bool,
    pub snapshots: Vec<usize>,
}

impl Default for TomoSpec {
    fn default() -> Self {
        Self {
            side: 64,
            n_angles: 60,
            iterations: 2000,
            lr: 2.5e-3,
            counts_scale: 1.0,
            seed: 0,
            reference_mode: ReferenceMode::FreshSample,
            randomized_pit: false,
            precondition: true,
            snapshots: vec![1, 10, 100, 1000, 10000],
        }
    }
}

impl TomoSpec {
    /// Learning rate prescribed for the image size: 0.0025 up to 128 pixels
    /// per side, 0.005 above.
    pub fn default_lr(side: usize) -> f64 {
        if side <= 128 {
            2.5e-3
        } else {
            5e-3
        }
    }
}

/// Concentric ellipses at three activity levels plus two small hot lesions.
pub fn phantom(side: usize) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    let c = (side as f64 - 1.0) / 2.0;
    let r = side as f64 / 2.0;
    // (centre x, centre y, semi-axis x, semi-axis y, value); later entries
    // overwrite earlier ones
    let ellipses = [
        (0.0, 0.0, 0.80, 0.92, 1.0),
        (0.0, 0.02, 0.62, 0.74, 0.5),
        (-0.05, 0.05, 0.30, 0.38, 2.0),
        (0.38, -0.35, 0.09, 0.09, 4.0),
        (-0.36, -0.42, 0.06, 0.06, 4.0),
    ];
    for iy in 0..side {
        for ix in 0..side {
            let u = (ix as f64 - c) / r;
            let v = (iy as f64 - c) / r;
            for &(cx, cy, ax, ay, val) in &ellipses {
                let du = (u - cx) / ax;
                let dv = (v - cy) / ay;
                if du * du + dv * dv <= 1.0 {
                    img[iy * side + ix] = val;
                }
            }
        }
    }
    img
}

/// Support of the nonzero pixels, dilated by `radius` in the chessboard
/// metric, as a 0/1 mask.
pub fn support_mask(image: &[f64], side: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let n = side as isize;
    let mut mask = vec![0.0; image.len()];
    for iy in 0..n {
        for ix in 0..n {
            let hit = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (x, y) = (ix + dx, iy + dy);
                    x >= 0 && y >= 0 && x < n && y < n && image[(y * n + x) as usize] != 0.0
                })
            });
            if hit {
                mask[(iy * n + ix) as usize] = 1.0;
            }
        }
    }
    mask
}

/// Problem data shared by all tomography runs of one spec.
#[derive(Clone, Debug)]
pub struct TomoData {
    pub op: ForwardOp,
    pub truth: Vec<f64>,
    pub counts: Vec<f64>,
    pub mask: Vec<f64>,
    pub init: Vec<f64>,
}

pub fn build_tomo(spec: &TomoSpec) -> Result<TomoData> {
    if !(spec.counts_scale > 0.0) {
        return Err(Error::Config("counts scale must be positive".into()));
    }
    let geometry = ProjectorGeometry::with_side(spec.side, spec.n_angles);
    let full = Projector::new(geometry, spec.counts_scale)?;
    let truth = phantom(spec.side);
    // Rays that never cross the object have rate exactly zero and carry no
    // information; with no background their PIT score is pinned at 1.
    let full_clean = ForwardOp::ParallelBeam(full.clone()).apply(&truth)?;
    let op = ForwardOp::ParallelBeam(full.retain_rows(|i| full_clean[i] > 0.0));
    let clean = op.apply(&truth)?;
    let mut stream = RngStream::with_stream(spec.seed, u64::MAX);
    let counts = NoiseModel::Poisson.sample(&clean, &mut stream)?;
    let mask = support_mask(&truth, spec.side, 2);
    let nonzero: Vec<f64> = truth.iter().copied().filter(|&v| v != 0.0).collect();
    let mean = nonzero.iter().sum::<f64>() / nonzero.len().max(1) as f64;
    let init = mask.iter().map(|m| m * mean).collect();
    Ok(TomoData {
        op,
        truth,
        counts,
        mask,
        init,
    })
}

impl TomoData {
    pub fn problem(&self, side: usize) -> Problem<'_> {
        Problem::new(&self.op, NoiseModel::Poisson, &self.counts, self.init.clone())
            .with_truth(&self.truth)
            .with_shape(side, side)
    }

    pub fn peak(&self) -> f64 {
        self.truth.iter().cloned().fold(0.0, f64::max)
    }

    pub fn base_config(&self, spec: &TomoSpec) -> RunConfig {
        RunConfig {
            iterations: spec.iterations,
            lr: spec.lr,
            seed: spec.seed,
            mask: Some(self.mask.clone()),
            precondition: spec.precondition,
            snapshots: spec.snapshots.clone(),
            reference_mode: spec.reference_mode,
            randomized_pit: spec.randomized_pit,
            relu_output: true,
            psnr_peak: self.peak(),
            ..RunConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TomoMethodSummary {
    pub method: String,
    pub final_nrmse: f64,
    pub final_psnr: f64,
    pub final_nll: f64,
    pub final_dc: f64,
    pub min_nrmse: f64,
    pub argmin_iteration: usize,
}

impl TomoMethodSummary {
    pub fn from_run(method: &str, run: &OptRun) -> Self {
        let last = run.last();
        let best = run.best_nrmse();
        Self {
            method: method.into(),
            final_nrmse: last.nrmse,
            final_psnr: last.psnr,
            final_nll: last.nll,
            final_dc: last.dc,
            min_nrmse: best.nrmse,
            argmin_iteration: best.iteration,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TomoReport {
    pub spec: TomoSpec,
    pub data: TomoData,
    /// (method name, run) for nll_adam, dc_adam and mlem.
    pub runs: Vec<(String, OptRun)>,
    pub summaries: Vec<TomoMethodSummary>,
    /// DC loss of the true image against the fixed quantiles.
    pub truth_dc: f64,
    pub runtime_seconds: f64,
}

impl TomoReport {
    pub fn run(&self, name: &str) -> Option<&OptRun> {
        self.runs.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

/// DC loss of the true image (fixed quantile reference).
pub fn truth_dc(data: &TomoData) -> Result<f64> {
    let yhat = data.op.apply(&data.truth)?;
    crate::losses::DcLoss::new(NoiseModel::Poisson)
        .with_mode(ReferenceMode::FixedQuantiles)
        .value(&data.counts, &yhat, &mut RngStream::new(0))
}

pub fn run_tomo(spec: &TomoSpec, out: Option<&Path>) -> Result<TomoReport> {
    let started = std::time::Instant::now();
    let data = build_tomo(spec)?;
    let problem = data.problem(spec.side);
    let base = data.base_config(spec);
    let configs = [
        (
            "nll_adam",
            RunConfig {
                loss: LossKind::Nll,
                ..base.clone()
            },
        ),
        (
            "dc_adam",
            RunConfig {
                loss: LossKind::Dc,
                ..base.clone()
            },
        ),
        (
            "mlem",
            RunConfig {
                loss: LossKind::Nll,
                optimizer: OptimizerKind::Mlem,
                ..base
            },
        ),
    ];
    use rayon::prelude::*;
    let runs: Vec<(String, OptRun)> = configs
        .par_iter()
        .map(|(name, cfg)| run(cfg, &problem).map(|r| (name.to_string(), r)))
        .collect::<Result<_>>()?;
    let summaries = runs
        .iter()
        .map(|(n, r)| TomoMethodSummary::from_run(n, r))
        .collect();
    let report = TomoReport {
        spec: spec.clone(),
        truth_dc: truth_dc(&data)?,
        data,
        runs,
        summaries,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

fn write_artifacts(rep: &TomoReport, dir: &Path) -> Result<()> {
    io::ensure_dir(dir)?;
    let side = rep.spec.side;
    io::write_pgm(&dir.join("image_truth.pgm"), side, side, &rep.data.truth)?;
    io::write_flat_csv(&dir.join("phantom.csv"), &rep.data.truth)?;
    for (name, run) in &rep.runs {
        io::write_trajectory(&dir.join(format!("trajectory_{name}.csv")), &run.records, true)?;
        for (it, img) in &run.snapshots {
            io::write_pgm(&dir.join(format!("image_{name}_{it}.pgm")), side, side, img)?;
        }
        let last = run.last().iteration;
        io::write_pgm(
            &dir.join(format!("image_{name}_{last}.pgm")),
            side,
            side,
            &run.final_params,
        )?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        spec: &'a TomoSpec,
        total_counts: f64,
        truth_dc: f64,
        methods: &'a [TomoMethodSummary],
        runtime_seconds: f64,
    }
    io::write_json(
        &dir.join("summary.json"),
        &Summary {
            experiment: "tomo",
            spec: &rep.spec,
            total_counts: rep.data.counts.iter().sum(),
            truth_dc: rep.truth_dc,
            methods: &rep.summaries,
            runtime_seconds: rep.runtime_seconds,
        },
    )
}

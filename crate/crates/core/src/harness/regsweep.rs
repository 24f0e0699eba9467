//! Regularization sweep: DC + beta * EPTV and NLL + beta * EPTV over a grid
//! of strengths, on tomography data at a reduced count level.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::io;
use super::tomo::{build_tomo, TomoSpec};
use crate::error::{Error, Result};
use crate::optim::{run, LossKind, RegularizerKind, RunConfig};
use crate::regularizers::{eptv, Image2D, WeightGradient};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegSweepSpec {
    /// Problem setup; `counts_scale` here is the reduced level actually used.
    pub tomo: TomoSpec,
    pub betas: Vec<f64>,
    /// Data terms to pair with the penalty.
    pub losses: Vec<LossKind>,
    pub kappa: f64,
    pub eps: f64,
}

impl Default for RegSweepSpec {
    fn default() -> Self {
        Self {
            tomo: TomoSpec {
                counts_scale: 0.25,
                snapshots: Vec::new(),
                ..TomoSpec::default()
            },
            betas: default_beta_grid(),
            losses: vec![LossKind::Dc, LossKind::Nll],
            kappa: 0.1,
            eps: 1e-8,
        }
    }
}

/// Zero followed by 10 log-spaced values per decade over [1e-4, 1e6].
///
/// The summed NLL outweighs the pixel-averaged penalty by roughly the number
/// of measurements, so its best strength sits several decades above the
/// DC one; the upper end keeps both optima inside the grid.
pub fn default_beta_grid() -> Vec<f64> {
    log_grid(-4, 6, 10)
}

/// Zero followed by `per_decade` log-spaced values from 10^lo to 10^hi.
pub fn log_grid(lo: i32, hi: i32, per_decade: usize) -> Vec<f64> {
    let steps = (hi - lo) as usize * per_decade;
    std::iter::once(0.0)
        .chain((0..=steps).map(|k| 10f64.powf(lo as f64 + k as f64 / per_decade as f64)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub loss: LossKind,
    pub beta: f64,
    pub nrmse: f64,
    pub psnr: f64,
    pub dc: f64,
    pub nll: f64,
    /// EPTV value of the final image.
    pub penalty: f64,
    #[serde(skip)]
    pub image: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RegSweepReport {
    pub spec: RegSweepSpec,
    pub truth: Vec<f64>,
    /// Grid points in beta order, one block per data term.
    pub points: Vec<SweepPoint>,
    pub runtime_seconds: f64,
}

impl RegSweepReport {
    pub fn curve(&self, loss: LossKind) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.loss == loss).collect()
    }

    /// Lowest-NRMSE point for `loss`; ties go to the smaller beta.
    pub fn best(&self, loss: LossKind) -> Option<&SweepPoint> {
        self.curve(loss)
            .into_iter()
            .min_by(|a, b| a.nrmse.total_cmp(&b.nrmse))
    }
}

pub fn run_regsweep(spec: &RegSweepSpec, out: Option<&Path>) -> Result<RegSweepReport> {
    if spec.betas.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    if spec.losses.is_empty() || spec.losses.contains(&LossKind::Mse) {
        return Err(Error::Config("regsweep data terms must be dc and/or nll".into()));
    }
    if let Some(b) = spec.betas.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::Config(format!("invalid beta {b}")));
    }
    let started = std::time::Instant::now();
    let side = spec.tomo.side;
    let data = build_tomo(&spec.tomo)?;
    let problem = data.problem(side);
    let base = RunConfig {
        regularizer: RegularizerKind::Eptv {
            kappa: spec.kappa,
            eps: spec.eps,
            weights: WeightGradient::Detached,
        },
        ..data.base_config(&spec.tomo)
    };
    let jobs: Vec<(LossKind, f64)> = spec
        .losses
        .iter()
        .copied()
        .flat_map(|l| spec.betas.iter().map(move |&b| (l, b)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(loss, beta)| {
            let cfg = RunConfig {
                loss,
                beta,
                ..base.clone()
            };
            let r = run(&cfg, &problem)?;
            let last = r.last();
            let img = Image2D::new(side, side, r.final_params.clone())?;
            let (penalty, _) = eptv(&img, spec.kappa, spec.eps, WeightGradient::Detached)?;
            Ok(SweepPoint {
                loss,
                beta,
                nrmse: last.nrmse,
                psnr: last.psnr,
                dc: last.dc,
                nll: last.nll,
                penalty,
                image: r.final_params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = RegSweepReport {
        spec: spec.clone(),
        truth: data.truth,
        points,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

fn write_artifacts(rep: &RegSweepReport, dir: &Path) -> Result<()> {
    io::ensure_dir(dir)?;
    let side = rep.spec.tomo.side;
    let curves: Vec<(LossKind, Vec<&SweepPoint>)> =
        rep.spec.losses.iter().map(|&l| (l, rep.curve(l))).collect();
    let mut header = vec!["beta".to_string()];
    header.extend(curves.iter().map(|(l, _)| format!("nrmse_{}_tv", l.name())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = rep
        .spec
        .betas
        .iter()
        .enumerate()
        .map(|(i, &b)| std::iter::once(b).chain(curves.iter().map(|(_, c)| c[i].nrmse)).collect())
        .collect();
    io::write_table(&dir.join("nrmse_vs_beta.csv"), &header, &rows)?;
    io::write_pgm(&dir.join("image_truth.pgm"), side, side, &rep.truth)?;
    for (loss, curve) in &curves {
        let name = loss.name();
        let rows: Vec<Vec<f64>> = curve
            .iter()
            .map(|p| vec![p.beta, p.penalty, p.dc, p.nll, p.nrmse])
            .collect();
        io::write_table(
            &dir.join(format!("penalty_vs_loss_{name}_tv.csv")),
            &["beta", "penalty", "dc", "nll", "nrmse"],
            &rows,
        )?;
        if let Some(best) = rep.best(*loss) {
            io::write_pgm(&dir.join(format!("image_{name}_tv_best.pgm")), side, side, &best.image)?;
        }
        if let Some(p) = curve.first() {
            io::write_pgm(&dir.join(format!("image_{name}_tv_first.pgm")), side, side, &p.image)?;
        }
        if let Some(p) = curve.last() {
            io::write_pgm(&dir.join(format!("image_{name}_tv_last.pgm")), side, side, &p.image)?;
        }
    }
    #[derive(Serialize)]
    struct Best {
        loss: LossKind,
        beta: f64,
        nrmse: f64,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        spec: &'a RegSweepSpec,
        best: Vec<Best>,
        points: &'a [SweepPoint],
        runtime_seconds: f64,
    }
    let best = rep
        .spec
        .losses
        .iter()
        .filter_map(|&l| rep.best(l))
        .map(|p| Best {
            loss: p.loss,
            beta: p.beta,
            nrmse: p.nrmse,
        })
        .collect();
    io::write_json(
        &dir.join("summary.json"),
        &Summary {
            experiment: "regsweep",
            spec: &rep.spec,
            best,
            points: &rep.points,
            runtime_seconds: rep.runtime_seconds,
        },
    )
}

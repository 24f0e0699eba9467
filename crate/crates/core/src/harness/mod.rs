//! Experiment harness: builds the problems, runs the optimizers and writes
//! trajectories, histograms, images and JSON summaries.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub mod bench;
pub mod calibrate;
pub mod deconv;
pub mod io;
pub mod regsweep;
pub mod tomo;

pub use bench::{run_bench, BenchReport, BenchSpec};
pub use calibrate::{run_calibrate, CalibrateReport, CalibrateSpec};
pub use deconv::{run_deconv, DeconvReport, DeconvSpec};
pub use regsweep::{run_regsweep, RegSweepReport, RegSweepSpec};
pub use tomo::{run_tomo, TomoReport, TomoSpec};

/// One fully specified experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentSpec {
    Deconv(DeconvSpec),
    Tomo(TomoSpec),
    Calibrate(CalibrateSpec),
    Regsweep(RegSweepSpec),
    Bench(BenchSpec),
}

impl ExperimentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSpec::Deconv(_) => "deconv",
            ExperimentSpec::Tomo(_) => "tomo",
            ExperimentSpec::Calibrate(_) => "calibrate",
            ExperimentSpec::Regsweep(_) => "regsweep",
            ExperimentSpec::Bench(_) => "bench",
        }
    }

    /// Runs the experiment, writing artifacts under `out` when given, and
    /// returns a one-paragraph text summary.
    pub fn run(&self, out: Option<&Path>) -> Result<String> {
        use std::fmt::Write;
        let mut s = String::new();
        match self {
            ExperimentSpec::Deconv(spec) => {
                let rep = run_deconv(spec, out)?;
                for m in &rep.summaries {
                    let _ = writeln!(
                        s,
                        "{:4} final dc {:.4}  mse {:.5}  l2 error {:.3}  nrmse {:.4} (min {:.4} @ {})",
                        m.method,
                        m.final_dc,
                        m.final_mse_to_measurements,
                        m.signal_l2_error,
                        m.final_nrmse,
                        m.min_nrmse,
                        m.argmin_iteration
                    );
                }
            }
            ExperimentSpec::Tomo(spec) => {
                let rep = run_tomo(spec, out)?;
                let _ = writeln!(s, "true image dc {:.4}", rep.truth_dc);
                for m in &rep.summaries {
                    let _ = writeln!(
                        s,
                        "{:8} final nrmse {:.4}  min {:.4} @ {}  final dc {:.4}",
                        m.method, m.final_nrmse, m.min_nrmse, m.argmin_iteration, m.final_dc
                    );
                }
            }
            ExperimentSpec::Calibrate(spec) => {
                let rep = run_calibrate(spec, out)?;
                for (name, c) in [("truth", rep.truth), ("noisy", rep.noisy)] {
                    let _ = writeln!(s, "{name}: dc {:.5} +/- {:.5}", c.mean, 1.96 * c.sd);
                }
            }
            ExperimentSpec::Regsweep(spec) => {
                let rep = run_regsweep(spec, out)?;
                for loss in [crate::optim::LossKind::Dc, crate::optim::LossKind::Nll] {
                    if let Some(p) = rep.best(loss) {
                        let _ = writeln!(s, "{}+tv best beta {:e} nrmse {:.4}", loss.name(), p.beta, p.nrmse);
                    }
                }
            }
            ExperimentSpec::Bench(spec) => {
                let rep = run_bench(spec, out)?;
                for r in &rep.rows {
                    let _ = writeln!(
                        s,
                        "n={:<8} {:8} {:8} {:4} {:10.4} +/- {:.4} ms ({} reps)",
                        r.n, r.noise, r.pass, r.loss, r.mean_ms, r.sd_ms, r.reps
                    );
                }
            }
        }
        Ok(s)
    }
}

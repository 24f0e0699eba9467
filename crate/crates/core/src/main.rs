use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcloss::harness::regsweep::default_beta_grid;
use dcloss::harness::{BenchSpec, CalibrateSpec, DeconvSpec, ExperimentSpec, RegSweepSpec, TomoSpec};
use dcloss::optim::LossKind;
use dcloss::{NoiseModel, ReferenceMode};

#[derive(Parser, Debug)]
#[command(name = "dcloss", version, about = "Distributional consistency loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for CSV, PGM and JSON artifacts; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RefMode::Fresh)]
    ref_mode: RefMode,
    /// Randomized PIT for Poisson counts.
    #[arg(long)]
    randomized_pit: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RefMode {
    Fresh,
    Quantiles,
}

impl From<RefMode> for ReferenceMode {
    fn from(m: RefMode) -> Self {
        match m {
            RefMode::Fresh => ReferenceMode::FreshSample,
            RefMode::Quantiles => ReferenceMode::FixedQuantiles,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum Loss {
    Dc,
    Mse,
    Nll,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Model {
    Gaussian,
    Poisson,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// 1D deconvolution with MSE and DC training.
    Deconv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
    },
    /// Toy emission tomography: NLL-Adam, DC-Adam and MLEM.
    Tomo {
        #[command(flatten)]
        common: Common,
        /// Image side length.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        counts_scale: f64,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        /// Defaults to 0.0025 up to side 128 and 0.005 above.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 60)]
        angles: usize,
    },
    /// DC loss at the true signal and at the noisy measurements.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Model::Gaussian)]
        model: Model,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        counts_scale: f64,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
    },
    /// DC+EPTV and NLL+EPTV over a grid of regularization strengths.
    Regsweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strengths; defaults to 0 plus 10 per decade over [1e-4, 1e6].
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
        /// Data terms to sweep; defaults to dc and nll.
        #[arg(long, value_enum, value_delimiter = ',')]
        loss: Vec<Loss>,
        /// Count level used by the sweep (the tomography default is 1).
        #[arg(long, default_value_t = 0.25)]
        counts_scale: f64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Timing of DC against MSE and NLL.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated problem sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 1_000_000])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Per-cell time budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
    },
}

fn build(cmd: Command) -> Result<(ExperimentSpec, Option<PathBuf>), String> {
    Ok(match cmd {
        Command::Deconv {
            common,
            n,
            sigma,
            iters,
            lr,
        } => (
            ExperimentSpec::Deconv(DeconvSpec {
                n,
                sigma_noise: sigma,
                iterations: iters,
                lr,
                seed: common.seed,
                reference_mode: common.ref_mode.into(),
                ..DeconvSpec::default()
            }),
            common.out,
        ),
        Command::Tomo {
            common,
            n,
            counts_scale,
            iters,
            lr,
            angles,
        } => (
            ExperimentSpec::Tomo(TomoSpec {
                side: n,
                n_angles: angles,
                iterations: iters,
                lr: lr.unwrap_or_else(|| TomoSpec::default_lr(n)),
                counts_scale,
                seed: common.seed,
                reference_mode: common.ref_mode.into(),
                randomized_pit: common.randomized_pit,
                ..TomoSpec::default()
            }),
            common.out,
        ),
        Command::Calibrate {
            common,
            model,
            n,
            sigma,
            counts_scale,
            repeats,
        } => {
            let model = match model {
                Model::Gaussian => NoiseModel::gaussian(sigma).map_err(|e| e.to_string())?,
                Model::Poisson => NoiseModel::Poisson,
            };
            (
                ExperimentSpec::Calibrate(CalibrateSpec {
                    model,
                    n,
                    repeats,
                    counts_scale,
                    seed: common.seed,
                    reference_mode: common.ref_mode.into(),
                    randomized_pit: common.randomized_pit,
                    ..CalibrateSpec::default()
                }),
                common.out,
            )
        }
        Command::Regsweep {
            common,
            beta,
            loss,
            counts_scale,
            n,
            iters,
            lr,
        } => {
            let losses = if loss.is_empty() {
                vec![LossKind::Dc, LossKind::Nll]
            } else {
                let mut v = Vec::new();
                for l in loss {
                    match l {
                        Loss::Dc => v.push(LossKind::Dc),
                        Loss::Nll => v.push(LossKind::Nll),
                        Loss::Mse => return Err("regsweep supports --loss dc and nll".into()),
                    }
                }
                v
            };
            let base = RegSweepSpec::default();
            (
                ExperimentSpec::Regsweep(RegSweepSpec {
                    tomo: TomoSpec {
                        side: n,
                        iterations: iters,
                        lr: lr.unwrap_or_else(|| TomoSpec::default_lr(n)),
                        counts_scale,
                        seed: common.seed,
                        reference_mode: common.ref_mode.into(),
                        randomized_pit: common.randomized_pit,
                        ..base.tomo
                    },
                    betas: if beta.is_empty() { default_beta_grid() } else { beta },
                    losses,
                    ..base
                }),
                common.out,
            )
        }
        Command::Bench {
            common,
            n,
            reps,
            budget,
        } => (
            ExperimentSpec::Bench(BenchSpec {
                sizes: n,
                reps,
                cell_budget_seconds: budget,
                seed: common.seed,
            }),
            common.out,
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (spec, out) = match build(cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match spec.run(out.as_deref()) {
        Ok(text) => {
            print!("{text}");
            if let Some(dir) = out {
                println!("artifacts written to {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", spec.name());
            ExitCode::FAILURE
        }
    }
}

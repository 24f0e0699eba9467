//! Timing of loss evaluation: DC against MSE under Gaussian noise and DC
//! against the Poisson NLL, forward value only and value plus gradient.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::io;
use crate::error::{Error, Result};
use crate::losses::{mse_loss, mse_value, poisson_nll, poisson_nll_value, DcLoss};
use crate::noise_models::NoiseModel;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub reps: usize,
    /// Stop a cell early once its repetitions have used this many seconds;
    /// at least three repetitions always run.
    pub cell_budget_seconds: Option<f64>,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 1_000_000],
            reps: 1000,
            cell_budget_seconds: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub noise: &'static str,
    pub pass: &'static str,
    pub loss: &'static str,
    /// Repetitions actually timed.
    pub reps: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    /// Loss value of the first repetition; reproducible for a fixed seed.
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, n: usize, noise: &str, pass: &str, loss: &str) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.noise == noise && r.pass == pass && r.loss == loss)
    }
}

/// Times `f` `reps` times; returns (mean ms, sd ms, reps run, first value).
fn time_cell(reps: usize, budget: Option<f64>, mut f: impl FnMut(usize) -> Result<f64>) -> Result<(f64, f64, usize, f64)> {
    let mut times = Vec::with_capacity(reps);
    let mut first = f64::NAN;
    let mut spent = 0.0;
    for k in 0..reps {
        let t = Instant::now();
        let v = std::hint::black_box(f(k)?);
        let dt = t.elapsed().as_secs_f64();
        if k == 0 {
            first = v;
        }
        times.push(dt * 1e3);
        spent += dt;
        if budget.is_some_and(|b| spent >= b) && times.len() >= 3 {
            break;
        }
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = if times.len() > 1 {
        (times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd, times.len(), first))
}

pub fn run_bench(spec: &BenchSpec, out: Option<&Path>) -> Result<BenchReport> {
    if spec.sizes.is_empty() || spec.sizes.contains(&0) || spec.reps == 0 {
        return Err(Error::Config("bench needs positive sizes and reps".into()));
    }
    let mut rows = Vec::new();
    for &n in &spec.sizes {
        // One pair of uniform arrays per size, shared by every comparison.
        let mut stream = RngStream::with_stream(spec.seed, n as u64);
        let a = stream.sample_uniform(n);
        let b = stream.sample_uniform(n);
        // Poisson variant: rates in [1, 21), counts rounded from a second
        // array on the same range.
        let rates: Vec<f64> = a.iter().map(|u| 1.0 + 20.0 * u).collect();
        let counts: Vec<f64> = b.iter().map(|u| (1.0 + 20.0 * u).round()).collect();
        let zero_bg = vec![0.0; n];

        let gauss = DcLoss::new(NoiseModel::Gaussian { sigma: 1.0 });
        let pois = DcLoss::new(NoiseModel::Poisson);
        // Each repetition draws its reference from its own stream.
        let rs = |k: usize| RngStream::with_stream(spec.seed, (k as u64) << 32 | 1);

        type Cell<'a> = (&'static str, &'static str, &'static str, Box<dyn FnMut(usize) -> Result<f64> + 'a>);
        let cells: Vec<Cell> = vec![
            ("gaussian", "forward", "dc", Box::new(|k| gauss.value(&b, &a, &mut rs(k)))),
            ("gaussian", "forward", "mse", Box::new(|_| mse_value(&a, &b))),
            ("gaussian", "gradient", "dc", Box::new(|k| gauss.eval(&b, &a, &mut rs(k)).map(|e| e.value))),
            ("gaussian", "gradient", "mse", Box::new(|_| mse_loss(&a, &b).map(|e| e.value))),
            ("poisson", "forward", "dc", Box::new(|k| pois.value(&counts, &rates, &mut rs(k)))),
            ("poisson", "forward", "nll", Box::new(|_| poisson_nll_value(&rates, &counts, &zero_bg))),
            ("poisson", "gradient", "dc", Box::new(|k| pois.eval(&counts, &rates, &mut rs(k)).map(|e| e.value))),
            ("poisson", "gradient", "nll", Box::new(|_| poisson_nll(&rates, &counts, &zero_bg).map(|e| e.value))),
        ];
        for (noise, pass, loss, f) in cells {
            let (mean_ms, sd_ms, reps, value) = time_cell(spec.reps, spec.cell_budget_seconds, f)?;
            rows.push(BenchRow {
                n,
                noise,
                pass,
                loss,
                reps,
                mean_ms,
                sd_ms,
                value,
            });
        }
    }
    let report = BenchReport {
        spec: spec.clone(),
        rows,
    };
    if let Some(dir) = out {
        io::ensure_dir(dir)?;
        let mut w = csv::Writer::from_path(dir.join("bench.csv")).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for r in &report.rows {
            w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'static str,
            spec: &'a BenchSpec,
            rows: &'a [BenchRow],
        }
        io::write_json(
            &dir.join("summary.json"),
            &Summary {
                experiment: "bench",
                spec: &report.spec,
                rows: &report.rows,
            },
        )?;
    }
    Ok(report)
}

//! Optimizers and the reconstruction loop.
//!
//! [`run`] drives Adam (on DC, MSE or Poisson NLL data terms plus an optional
//! TV penalty) or MLEM, and records per-iteration metrics into an [`OptRun`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward_ops::ForwardOp;
use crate::losses::{mse_loss, poisson_nll, DcLoss, ReferenceMode};
use crate::metrics::{nrmse, psnr};
use crate::noise_models::{NoiseModel, TailPolicy, POISSON_RATE_FLOOR};
use crate::regularizers::{eptv, tv, Image2D, WeightGradient};
use crate::rng::RngStream;

/// Floor for ratios in the MLEM update.
const MLEM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grad.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps_hat);
        }
        Ok(())
    }
}

pub fn adam_step(state: &AdamState, params: &[f64], grad: &[f64]) -> Result<(AdamState, Vec<f64>)> {
    let mut next = state.clone();
    let mut p = params.to_vec();
    next.update(&mut p, grad)?;
    Ok((next, p))
}

/// One MLEM update x' = x / sens * A^T(m / (A x + b)).
pub fn mlem_step(x: &[f64], m: &[f64], op: &ForwardOp, b: &[f64]) -> Result<Vec<f64>> {
    let sens = op.sensitivity();
    mlem_step_with(x, m, op, b, &sens)
}

fn mlem_step_with(x: &[f64], m: &[f64], op: &ForwardOp, b: &[f64], sens: &[f64]) -> Result<Vec<f64>> {
    check_len(op.output_len(), m.len())?;
    check_len(op.output_len(), b.len())?;
    let proj = op.apply(x)?;
    let ratio: Vec<f64> = proj
        .iter()
        .zip(b)
        .zip(m)
        .map(|((p, bi), mi)| mi / (p + bi).max(MLEM_FLOOR))
        .collect();
    let back = op.adjoint(&ratio)?;
    Ok(x.iter()
        .zip(&back)
        .zip(sens)
        .map(|((xi, bk), s)| if *s > MLEM_FLOOR { xi / s * bk } else { 0.0 })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dc,
    Mse,
    Nll,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Dc => "dc",
            LossKind::Mse => "mse",
            LossKind::Nll => "nll",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Mlem,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Tv,
    Eptv {
        kappa: f64,
        eps: f64,
        weights: WeightGradient,
    },
}

impl RegularizerKind {
    pub fn eptv_default() -> Self {
        RegularizerKind::Eptv {
            kappa: 0.1,
            eps: 1e-8,
            weights: WeightGradient::Detached,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub lr: f64,
    /// Regularization strength.
    pub beta: f64,
    pub regularizer: RegularizerKind,
    /// Multiplied into the estimate after every update.
    #[serde(skip)]
    pub mask: Option<Vec<f64>>,
    /// Divide Adam gradients elementwise by the sensitivity image.
    pub precondition: bool,
    pub seed: u64,
    pub snapshots: Vec<usize>,
    pub reference_mode: ReferenceMode,
    pub randomized_pit: bool,
    pub tail_policy: TailPolicy,
    /// Pass reported images through max(., 0).
    pub relu_output: bool,
    pub psnr_peak: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Dc,
            optimizer: OptimizerKind::Adam,
            iterations: 1000,
            lr: 5e-3,
            beta: 0.0,
            regularizer: RegularizerKind::None,
            mask: None,
            precondition: false,
            seed: 0,
            snapshots: vec![1, 10, 100, 1000, 10000],
            reference_mode: ReferenceMode::FreshSample,
            randomized_pit: false,
            tail_policy: TailPolicy::default(),
            relu_output: false,
            psnr_peak: 1.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.optimizer == OptimizerKind::Adam && !(self.lr > 0.0) {
            return Err(Error::Config("Adam needs lr > 0".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        if !(self.psnr_peak > 0.0) {
            return Err(Error::Config("psnr peak must be > 0".into()));
        }
        self.tail_policy.validate()
    }
}

/// Everything the loop needs to know about the inverse problem.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub op: &'a ForwardOp,
    pub model: NoiseModel,
    pub measurements: &'a [f64],
    pub ground_truth: Option<&'a [f64]>,
    /// Additive background on predicted data (Poisson rates).
    pub background: Vec<f64>,
    /// Width and height when the parameters are an image.
    pub image_shape: Option<(usize, usize)>,
    pub init: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(op: &'a ForwardOp, model: NoiseModel, measurements: &'a [f64], init: Vec<f64>) -> Self {
        Self {
            op,
            model,
            measurements,
            ground_truth: None,
            background: vec![0.0; op.output_len()],
            image_shape: None,
            init,
        }
    }

    pub fn with_truth(mut self, truth: &'a [f64]) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    pub fn with_shape(mut self, width: usize, height: usize) -> Self {
        self.image_shape = Some((width, height));
        self
    }
}

/// Metrics of the estimate after `iteration` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    /// DC loss against the fixed logistic quantiles, so the series is free
    /// of reference-sampling noise whatever the training mode.
    pub dc: f64,
    pub mse: f64,
    /// Poisson NLL of the data; NaN for non-Poisson models.
    pub nll: f64,
    pub nrmse: f64,
    pub psnr: f64,
    /// Data term plus beta times the penalty, at this estimate.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptRun {
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub final_params: Vec<f64>,
}

impl OptRun {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("a run has at least one record")
    }

    /// Record with the smallest NRMSE.
    pub fn best_nrmse(&self) -> &IterRecord {
        self.records
            .iter()
            .min_by(|a, b| a.nrmse.total_cmp(&b.nrmse))
            .expect("a run has at least one record")
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

struct Evaluation {
    record: IterRecord,
    grad: Option<Vec<f64>>,
}

struct Loop<'a, 'p> {
    cfg: &'a RunConfig,
    prob: &'a Problem<'p>,
    dc: DcLoss,
}

impl Loop<'_, '_> {
    fn reported(&self, x: &[f64]) -> Vec<f64> {
        if self.cfg.relu_output {
            relu(x)
        } else {
            x.to_vec()
        }
    }

    fn evaluate(&self, x: &[f64], iteration: usize, need_grad: bool) -> Result<Evaluation> {
        let prob = self.prob;
        let mut yhat = prob.op.apply(x)?;
        for (y, b) in yhat.iter_mut().zip(&prob.background) {
            *y += b;
        }
        let m = prob.measurements;
        // Reference samples are reseeded per iteration from (seed, iteration).
        let mut stream = RngStream::with_stream(self.cfg.seed, iteration as u64);
        let (dc, dc_report) = self.dc.eval_with_quantile_value(m, &yhat, &mut stream)?;
        let mse = mse_loss(&yhat, m)?;
        let nll = if prob.model == NoiseModel::Poisson {
            let rates: Vec<f64> = yhat.iter().map(|y| y.max(POISSON_RATE_FLOOR)).collect();
            Some(poisson_nll(&rates, m, &vec![0.0; m.len()])?)
        } else {
            None
        };
        let (nrmse_v, psnr_v) = match prob.ground_truth {
            Some(truth) => {
                let img = self.reported(x);
                (nrmse(&img, truth)?, psnr(&img, truth, self.cfg.psnr_peak)?)
            }
            None => (f64::NAN, f64::NAN),
        };

        let (data_value, data_grad) = match self.cfg.loss {
            LossKind::Dc => (dc.value, dc.grad_yhat),
            LossKind::Mse => (mse.value, mse.grad_yhat),
            LossKind::Nll => {
                let e = nll
                    .clone()
                    .ok_or_else(|| Error::Config("NLL loss requires the Poisson model".into()))?;
                (e.value, e.grad_yhat)
            }
        };
        let (penalty, penalty_grad) = self.penalty(x)?;
        let objective = data_value + self.cfg.beta * penalty;

        let grad = if need_grad {
            let mut g = prob.op.adjoint(&data_grad)?;
            if let Some(pg) = penalty_grad {
                for (gi, pi) in g.iter_mut().zip(pg) {
                    *gi += self.cfg.beta * pi;
                }
            }
            Some(g)
        } else {
            None
        };
        Ok(Evaluation {
            record: IterRecord {
                iteration,
                dc: dc_report,
                mse: mse.value,
                nll: nll.map_or(f64::NAN, |e| e.value),
                nrmse: nrmse_v,
                psnr: psnr_v,
                objective,
            },
            grad,
        })
    }

    fn penalty(&self, x: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        if self.cfg.beta == 0.0 || self.cfg.regularizer == RegularizerKind::None {
            return Ok((0.0, None));
        }
        let (w, h) = self
            .prob
            .image_shape
            .ok_or_else(|| Error::Config("regularization needs an image shape".into()))?;
        let img = Image2D::new(w, h, x.to_vec())?;
        let (v, g) = match self.cfg.regularizer {
            RegularizerKind::Tv => tv(&img)?,
            RegularizerKind::Eptv {
                kappa,
                eps,
                weights,
            } => eptv(&img, kappa, eps, weights)?,
            RegularizerKind::None => unreachable!(),
        };
        Ok((v, Some(g.values)))
    }
}

/// Runs the configured optimization from `problem.init`.
pub fn run(config: &RunConfig, problem: &Problem<'_>) -> Result<OptRun> {
    config.validate()?;
    let op = problem.op;
    check_len(op.input_len(), problem.init.len())?;
    check_len(op.output_len(), problem.measurements.len())?;
    check_len(op.output_len(), problem.background.len())?;
    if let Some(t) = problem.ground_truth {
        check_len(op.input_len(), t.len())?;
    }
    if let Some(mask) = &config.mask {
        check_len(op.input_len(), mask.len())?;
    }
    if config.loss == LossKind::Nll && problem.model != NoiseModel::Poisson {
        return Err(Error::Config("NLL loss requires the Poisson model".into()));
    }
    if let Some((w, h)) = problem.image_shape {
        check_len(op.input_len(), w * h)?;
    }

    let lp = Loop {
        cfg: config,
        prob: problem,
        dc: DcLoss {
            model: problem.model,
            policy: config.tail_policy,
            mode: config.reference_mode,
            randomized_pit: config.randomized_pit,
        },
    };
    let apply_mask = |x: &mut [f64]| {
        if let Some(mask) = &config.mask {
            x.iter_mut().zip(mask).for_each(|(v, w)| *v *= w);
        }
    };

    let mut x = problem.init.clone();
    apply_mask(&mut x);
    let sens = if config.precondition || config.optimizer == OptimizerKind::Mlem {
        Some(op.sensitivity())
    } else {
        None
    };
    let mut records = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    let mut adam = AdamState::new(x.len(), config.lr);

    let use_adam = config.optimizer == OptimizerKind::Adam;
    let mut grad = if use_adam {
        lp.evaluate(&x, 0, true)?.grad
    } else {
        None
    };

    for it in 1..=config.iterations {
        if use_adam {
            let mut g = grad.take().expect("gradient from previous evaluation");
            if config.precondition {
                let s = sens.as_ref().expect("sensitivity computed");
                g.iter_mut()
                    .zip(s)
                    .for_each(|(gi, si)| *gi = if *si > 0.0 { *gi / si } else { 0.0 });
            }
            adam.update(&mut x, &g)?;
        } else {
            let s = sens.as_ref().expect("sensitivity computed");
            x = mlem_step_with(&x, problem.measurements, op, &problem.background, s)?;
        }
        apply_mask(&mut x);
        let ev = lp.evaluate(&x, it, use_adam && it < config.iterations)?;
        grad = ev.grad;
        records.push(ev.record);
        if config.snapshots.contains(&it) {
            snapshots.push((it, lp.reported(&x)));
        }
    }
    let final_params = lp.reported(&x);
    Ok(OptRun {
        records,
        snapshots,
        final_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_magnitude() {
        let st = AdamState::new(3, 0.01);
        let (next, p) = adam_step(&st, &[1.0, 1.0, 1.0], &[0.5, -2.0, 1e-3]).unwrap();
        assert_eq!(next.step, 1);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.01).abs() < 1e-6);
        assert!((p[2] - 0.99).abs() < 1e-4);
    }

    #[test]
    fn adam_zero_grad_and_determinism() {
        let st = AdamState::new(2, 0.1);
        let (next, p) = adam_step(&st, &[0.3, -0.4], &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, -0.4]);
        assert_eq!(next.step, 1);
        let a = adam_step(&st, &[0.3, -0.4], &[0.2, 0.1]).unwrap();
        let b = adam_step(&st, &[0.3, -0.4], &[0.2, 0.1]).unwrap();
        assert_eq!(a, b);
        assert!(adam_step(&st, &[0.3], &[0.2]).is_err());
    }

    #[test]
    fn mlem_fixed_point_and_counts() {
        let op = ForwardOp::Identity(4);
        let x = [1.0, 2.0, 0.5, 3.0];
        let m = op.apply(&x).unwrap();
        let next = mlem_step(&x, &m, &op, &[0.0; 4]).unwrap();
        for (a, b) in next.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
        let m = [3.0, 0.0, 1.0, 7.0];
        let next = mlem_step(&x, &m, &op, &[0.0; 4]).unwrap();
        assert!((next.iter().sum::<f64>() - m.iter().sum::<f64>()).abs() < 1e-12);
        assert!(next.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig {
            iterations: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.iterations = 1;
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c.lr = 1e-3;
        c.beta = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_gradient_run_keeps_init() {
        // MSE at an exact fit has zero gradient.
        let op = ForwardOp::Identity(3);
        let m = [0.2, 0.4, 0.6];
        let prob = Problem::new(&op, NoiseModel::gaussian(0.1).unwrap(), &m, m.to_vec());
        let cfg = RunConfig {
            loss: LossKind::Mse,
            iterations: 1,
            ..RunConfig::default()
        };
        let out = run(&cfg, &prob).unwrap();
        assert_eq!(out.final_params, m.to_vec());
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn nll_requires_poisson() {
        let op = ForwardOp::Identity(2);
        let m = [1.0, 2.0];
        let prob = Problem::new(&op, NoiseModel::gaussian(0.1).unwrap(), &m, vec![1.0; 2]);
        let cfg = RunConfig {
            loss: LossKind::Nll,
            ..RunConfig::default()
        };
        assert!(run(&cfg, &prob).is_err());
    }
}

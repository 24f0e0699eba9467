//! Data-fidelity losses: the distributional consistency loss and the
//! pointwise baselines (MSE, Poisson negative log-likelihood).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::noise_models::{randomized_poisson_score, NoiseModel, TailPolicy};
use crate::rng::RngStream;
use crate::special::ln_gamma;

/// How the Logistic(0, 1) reference sample is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// N fresh draws from the supplied stream on every evaluation.
    #[default]
    FreshSample,
    /// Deterministic quantiles u_i = logit((i - 0.5) / N).
    FixedQuantiles,
}

/// PIT values and their logit scores for a set of measurements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreVector {
    pub s: Vec<f64>,
    pub r: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Loss value and its gradient with respect to the predicted signal.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_yhat: Vec<f64>,
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_unstable_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Wasserstein-1 distance between two equal-size empirical distributions,
/// with its subgradient in `a` routed back through `a`'s sort order.
pub fn wasserstein1_sorted(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    let mut b_sorted = b.to_vec();
    b_sorted.sort_unstable_by(f64::total_cmp);
    Ok(w1_against_sorted(a, &b_sorted))
}

fn w1_against_sorted(a: &[f64], b_sorted: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len() as f64;
    let order = argsort(a);
    let mut grad = vec![0.0; a.len()];
    let mut total = 0.0;
    for (rank, &j) in order.iter().enumerate() {
        let d = a[j] - b_sorted[rank];
        total += d.abs();
        grad[j] = sign(d) / n;
    }
    (total / n, grad)
}

/// W1 value between two already sorted samples of equal size.
fn w1_value_sorted(a_sorted: &[f64], b_sorted: &[f64]) -> f64 {
    let total: f64 = a_sorted.iter().zip(b_sorted).map(|(a, b)| (a - b).abs()).sum();
    total / a_sorted.len() as f64
}

/// Sorted reference sample for `n` measurements.
pub fn reference_sample(mode: ReferenceMode, n: usize, stream: &mut RngStream) -> Vec<f64> {
    let mut u = match mode {
        ReferenceMode::FreshSample => stream.sample_logistic(n),
        ReferenceMode::FixedQuantiles => (1..=n)
            .map(|i| {
                let p = (i as f64 - 0.5) / n as f64;
                (p / (1.0 - p)).ln()
            })
            .collect(),
    };
    u.sort_unstable_by(f64::total_cmp);
    u
}

/// Configuration of a distributional consistency loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcLoss {
    pub model: NoiseModel,
    pub policy: TailPolicy,
    pub mode: ReferenceMode,
    /// Use the randomized PIT for Poisson counts instead of the plain CDF.
    pub randomized_pit: bool,
}

impl DcLoss {
    pub fn new(model: NoiseModel) -> Self {
        Self {
            model,
            policy: TailPolicy::default(),
            mode: ReferenceMode::default(),
            randomized_pit: false,
        }
    }

    pub fn with_mode(mut self, mode: ReferenceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_randomized_pit(mut self, on: bool) -> Self {
        self.randomized_pit = on;
        self
    }

    fn check(&self, m: &[f64], yhat: &[f64]) -> Result<()> {
        check_len(m.len(), yhat.len())?;
        if m.is_empty() {
            return Err(Error::Input("no measurements".into()));
        }
        self.model.validate()?;
        self.policy.validate()?;
        if self.randomized_pit && self.model != NoiseModel::Poisson {
            return Err(Error::Parameter("randomized PIT requires the Poisson model".into()));
        }
        m.iter().try_for_each(|&mi| self.model.check_measurement(mi))
    }

    /// Per-measurement scores and their derivatives, consuming the stream
    /// for endpoint resampling or randomized PIT as configured.
    fn scores_with_grad(
        &self,
        m: &[f64],
        yhat: &[f64],
        stream: &mut RngStream,
    ) -> (ScoreVector, Vec<f64>) {
        let n = m.len();
        let mut sv = ScoreVector {
            s: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
        };
        let mut dr = Vec::with_capacity(n);
        for (&mi, &yi) in m.iter().zip(yhat) {
            let sc = if self.randomized_pit {
                randomized_poisson_score(mi, yi, stream.uniform())
            } else {
                let m_used = self.model.prepare_measurement(mi, stream);
                self.model.score(m_used, yi, &self.policy)
            };
            sv.s.push(sc.s);
            sv.r.push(sc.r);
            dr.push(sc.dr_dyhat);
        }
        (sv, dr)
    }

    pub fn scores(&self, m: &[f64], yhat: &[f64], stream: &mut RngStream) -> Result<ScoreVector> {
        self.check(m, yhat)?;
        Ok(self.scores_with_grad(m, yhat, stream).0)
    }

    /// Loss value and gradient. The stream feeds the reference sample (fresh
    /// mode) after any per-measurement randomness.
    pub fn eval(&self, m: &[f64], yhat: &[f64], stream: &mut RngStream) -> Result<LossEval> {
        self.check(m, yhat)?;
        let (sv, dr) = self.scores_with_grad(m, yhat, stream);
        let u = reference_sample(self.mode, m.len(), stream);
        let (value, mut grad) = w1_against_sorted(&sv.r, &u);
        for (g, d) in grad.iter_mut().zip(&dr) {
            *g *= d;
        }
        Ok(LossEval {
            value,
            grad_yhat: grad,
        })
    }

    /// Like [`DcLoss::eval`], and additionally the loss of the same scores
    /// against the fixed quantiles, a reference-noise-free diagnostic.
    pub fn eval_with_quantile_value(
        &self,
        m: &[f64],
        yhat: &[f64],
        stream: &mut RngStream,
    ) -> Result<(LossEval, f64)> {
        self.check(m, yhat)?;
        let (sv, dr) = self.scores_with_grad(m, yhat, stream);
        let u = reference_sample(self.mode, m.len(), stream);
        let (value, mut grad) = w1_against_sorted(&sv.r, &u);
        for (g, d) in grad.iter_mut().zip(&dr) {
            *g *= d;
        }
        let quantile_value = if self.mode == ReferenceMode::FixedQuantiles {
            value
        } else {
            let q = reference_sample(ReferenceMode::FixedQuantiles, m.len(), stream);
            let mut r = sv.r;
            r.sort_unstable_by(f64::total_cmp);
            w1_value_sorted(&r, &q)
        };
        Ok((
            LossEval {
                value,
                grad_yhat: grad,
            },
            quantile_value,
        ))
    }

    /// Loss value only; skips the gradient bookkeeping of [`DcLoss::eval`]
    /// but consumes the stream identically and returns the same value.
    pub fn value(&self, m: &[f64], yhat: &[f64], stream: &mut RngStream) -> Result<f64> {
        self.check(m, yhat)?;
        let (sv, _) = self.scores_with_grad(m, yhat, stream);
        let u = reference_sample(self.mode, m.len(), stream);
        let mut r = sv.r;
        r.sort_unstable_by(f64::total_cmp);
        Ok(w1_value_sorted(&r, &u))
    }

    /// Loss value together with the scores it was computed from, for callers
    /// that also need the PIT values. Consumes the stream like [`DcLoss::value`].
    pub fn value_with_scores(
        &self,
        m: &[f64],
        yhat: &[f64],
        stream: &mut RngStream,
    ) -> Result<(f64, ScoreVector)> {
        self.check(m, yhat)?;
        let (sv, _) = self.scores_with_grad(m, yhat, stream);
        let u = reference_sample(self.mode, m.len(), stream);
        let mut r = sv.r.clone();
        r.sort_unstable_by(f64::total_cmp);
        Ok((w1_value_sorted(&r, &u), sv))
    }
}

/// Distributional consistency loss of `yhat` given measurements `m`.
pub fn dc_loss(
    model: &NoiseModel,
    m: &[f64],
    yhat: &[f64],
    mode: ReferenceMode,
    policy: &TailPolicy,
    stream: &mut RngStream,
) -> Result<LossEval> {
    DcLoss {
        model: *model,
        policy: *policy,
        mode,
        randomized_pit: false,
    }
    .eval(m, yhat, stream)
}

pub fn mse_loss(yhat: &[f64], m: &[f64]) -> Result<LossEval> {
    check_len(m.len(), yhat.len())?;
    if m.is_empty() {
        return Err(Error::Input("no measurements".into()));
    }
    let n = m.len() as f64;
    let mut value = 0.0;
    let grad = yhat
        .iter()
        .zip(m)
        .map(|(y, mi)| {
            let d = y - mi;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(LossEval {
        value: value / n,
        grad_yhat: grad,
    })
}

/// Value of [`mse_loss`] without the gradient.
pub fn mse_value(yhat: &[f64], m: &[f64]) -> Result<f64> {
    check_len(m.len(), yhat.len())?;
    if m.is_empty() {
        return Err(Error::Input("no measurements".into()));
    }
    let total: f64 = yhat.iter().zip(m).map(|(y, mi)| (y - mi) * (y - mi)).sum();
    Ok(total / m.len() as f64)
}

/// Negative Poisson log-likelihood of counts `m` at rates `yhat + b`,
/// summed over measurements. Gradient is with respect to `yhat`.
pub fn poisson_nll(yhat: &[f64], m: &[f64], b: &[f64]) -> Result<LossEval> {
    check_len(m.len(), yhat.len())?;
    check_len(m.len(), b.len())?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(m.len());
    for ((&y, &mi), &bi) in yhat.iter().zip(m).zip(b) {
        let (v, g) = nll_term(y + bi, mi)?;
        value += v;
        grad.push(g);
    }
    Ok(LossEval {
        value,
        grad_yhat: grad,
    })
}

/// Value of [`poisson_nll`] without the gradient.
pub fn poisson_nll_value(yhat: &[f64], m: &[f64], b: &[f64]) -> Result<f64> {
    check_len(m.len(), yhat.len())?;
    check_len(m.len(), b.len())?;
    let mut value = 0.0;
    for ((&y, &mi), &bi) in yhat.iter().zip(m).zip(b) {
        value += nll_term(y + bi, mi)?.0;
    }
    Ok(value)
}

/// One measurement's NLL term and its derivative in the rate.
fn nll_term(rate: f64, mi: f64) -> Result<(f64, f64)> {
    if !(mi >= 0.0 && mi.fract() == 0.0) {
        return Err(Error::Input(format!("count {mi} is not a nonnegative integer")));
    }
    if mi == 0.0 && rate >= 0.0 {
        // m ln(rate) vanishes for zero counts, so a zero rate is fine here.
        return Ok((rate, 1.0));
    }
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("nonpositive Poisson rate {rate}")));
    }
    Ok((-mi * rate.ln() + rate + ln_gamma(mi + 1.0), 1.0 - mi / rate))
}

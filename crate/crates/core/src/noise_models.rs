//! Per-measurement noise distributions: CDF, a numerically stable logit of
//! the CDF with closed-form tail expansions, its analytic derivative with
//! respect to the predicted mean, and forward sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{
    gamma_pq, ln_gamma, ln_poisson_pmf, norm_cdf, norm_pdf, norm_sf, poisson_pmf, LN_SQRT_2PI,
};

/// Floor applied to Poisson rates before taking logarithms.
pub const POISSON_RATE_FLOOR: f64 = 1e-12;

/// 1 - Phi(5); the clipped-Gaussian tail threshold that lines up with the
/// default Gaussian |z| threshold of 5.
const SF_AT_FIVE: f64 = 2.866_515_718_791_939e-7;

/// Noise distribution D(yhat) of a single measurement around its predicted
/// mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian {
        sigma: f64,
    },
    /// Gaussian clipped to [0, 1], with linear CDF ramps of width
    /// `ramp_eps` at both ends and a hard clamp `hard_eps` on the CDF.
    ClippedGaussian {
        sigma: f64,
        ramp_eps: f64,
        hard_eps: f64,
    },
    Poisson,
}

/// Thresholds at which the logit-CDF switches to its tail expansions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPolicy {
    /// Gaussian: tails are used for |z| > this.
    pub gaussian_z_threshold: f64,
    /// Poisson: tails are used when the CDF leaves [eps, 1 - eps].
    pub poisson_s_threshold: f64,
    /// Clipped Gaussian: tails are used when the CDF leaves [delta, 1 - delta].
    pub clipped_delta: f64,
}

impl Default for TailPolicy {
    fn default() -> Self {
        Self {
            gaussian_z_threshold: 5.0,
            poisson_s_threshold: 1e-12,
            clipped_delta: SF_AT_FIVE,
        }
    }
}

impl TailPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_z_threshold > 0.0) {
            return Err(Error::Parameter("gaussian_z_threshold must be > 0".into()));
        }
        if !(self.poisson_s_threshold > 0.0 && self.poisson_s_threshold < 0.5) {
            return Err(Error::Parameter("poisson_s_threshold must be in (0, 0.5)".into()));
        }
        if !(self.clipped_delta > 0.0) {
            return Err(Error::Parameter("clipped_delta must be > 0".into()));
        }
        Ok(())
    }
}

/// Which piece of the piecewise logit-CDF produced a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Central,
    LowerTail,
    UpperTail,
    /// CDF clamped to [hard_eps, 1 - hard_eps]; derivative is zero.
    Clamped,
}

/// CDF value, logit score and d(score)/d(yhat) at one measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub s: f64,
    pub r: f64,
    pub dr_dyhat: f64,
    pub branch: Branch,
}

/// Logit score together with the measurement value actually used, which
/// differs from the observed one only for clipped-Gaussian endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitScore {
    pub r: f64,
    pub s: f64,
    pub m_used: f64,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let m = NoiseModel::Gaussian { sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn clipped_gaussian(sigma: f64) -> Result<Self> {
        Self::clipped_gaussian_with(sigma, 1e-3, 1e-12)
    }

    pub fn clipped_gaussian_with(sigma: f64, ramp_eps: f64, hard_eps: f64) -> Result<Self> {
        let m = NoiseModel::ClippedGaussian {
            sigma,
            ramp_eps,
            hard_eps,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn poisson() -> Self {
        NoiseModel::Poisson
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } => check_sigma(sigma),
            NoiseModel::ClippedGaussian {
                sigma,
                ramp_eps,
                hard_eps,
            } => {
                check_sigma(sigma)?;
                if !(ramp_eps > 0.0 && ramp_eps < 0.5) {
                    return Err(Error::Parameter(format!(
                        "ramp_eps must be in (0, 0.5), got {ramp_eps}"
                    )));
                }
                if !(hard_eps > 0.0 && hard_eps < 0.5) {
                    return Err(Error::Parameter(format!(
                        "hard_eps must be in (0, 0.5), got {hard_eps}"
                    )));
                }
                Ok(())
            }
            NoiseModel::Poisson => Ok(()),
        }
    }

    pub fn check_measurement(&self, m: f64) -> Result<()> {
        let ok = match self {
            NoiseModel::Gaussian { .. } => m.is_finite(),
            NoiseModel::ClippedGaussian { .. } => (0.0..=1.0).contains(&m),
            NoiseModel::Poisson => m >= 0.0 && m.fract() == 0.0 && m.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("measurement {m} outside the support of {self:?}")))
        }
    }

    /// s = F(m | yhat).
    pub fn cdf(&self, m: f64, yhat: f64) -> Result<f64> {
        self.check_measurement(m)?;
        Ok(match *self {
            NoiseModel::Gaussian { sigma } => norm_cdf((m - yhat) / sigma),
            NoiseModel::ClippedGaussian {
                sigma, ramp_eps, ..
            } => clipped_cdf(m, yhat, sigma, ramp_eps).0,
            // Poisson-Gamma duality: P(X <= m) = 1 - GammaCDF(yhat; m + 1, 1).
            NoiseModel::Poisson => gamma_pq(m + 1.0, yhat.max(0.0)).1,
        })
    }

    /// Replaces clipped-Gaussian measurements sitting exactly on 0 or 1 by a
    /// uniform draw inside the adjacent ramp. Other models return `m`.
    pub fn prepare_measurement(&self, m: f64, stream: &mut RngStream) -> f64 {
        match *self {
            NoiseModel::ClippedGaussian { ramp_eps, .. } if m == 0.0 => stream.uniform() * ramp_eps,
            NoiseModel::ClippedGaussian { ramp_eps, .. } if m == 1.0 => {
                1.0 - ramp_eps + stream.uniform() * ramp_eps
            }
            _ => m,
        }
    }

    /// r = logit(F(m | yhat)), using tail expansions where the direct route
    /// loses precision. The returned `m_used` must be handed to
    /// [`NoiseModel::dlogit_dyhat`] to differentiate the same evaluation.
    pub fn logit_cdf(
        &self,
        m: f64,
        yhat: f64,
        policy: &TailPolicy,
        stream: &mut RngStream,
    ) -> Result<LogitScore> {
        self.check_measurement(m)?;
        let m_used = self.prepare_measurement(m, stream);
        let sc = self.score(m_used, yhat, policy);
        Ok(LogitScore {
            r: sc.r,
            s: sc.s,
            m_used,
        })
    }

    pub fn dlogit_dyhat(&self, m_used: f64, yhat: f64, policy: &TailPolicy) -> Result<f64> {
        self.check_measurement(m_used)?;
        Ok(self.score(m_used, yhat, policy).dr_dyhat)
    }

    /// Score and derivative in one pass. `m` must already be prepared and
    /// inside the model's support.
    pub fn score(&self, m: f64, yhat: f64, policy: &TailPolicy) -> Score {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                gaussian_score((m - yhat) / sigma, sigma, policy.gaussian_z_threshold)
            }
            NoiseModel::ClippedGaussian {
                sigma,
                ramp_eps,
                hard_eps,
            } => clipped_score(m, yhat, sigma, ramp_eps, hard_eps, policy.clipped_delta),
            NoiseModel::Poisson => poisson_score(m, yhat, policy.poisson_s_threshold),
        }
    }

    /// One noise realization around `yhat`.
    pub fn sample(&self, yhat: &[f64], stream: &mut RngStream) -> Result<Vec<f64>> {
        match *self {
            NoiseModel::Gaussian { sigma } => stream.sample_gaussian(yhat, sigma),
            NoiseModel::ClippedGaussian { sigma, .. } => Ok(stream
                .sample_gaussian(yhat, sigma)?
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()),
            NoiseModel::Poisson => Ok(stream
                .sample_poisson(yhat)?
                .into_iter()
                .map(|k| k as f64)
                .collect()),
        }
    }

    /// Randomized PIT for Poisson data: s = F(m - 1) + U * pmf(m).
    pub fn randomized_pit(&self, m: f64, yhat: f64, stream: &mut RngStream) -> Result<f64> {
        if *self != NoiseModel::Poisson {
            return Err(Error::Parameter("randomized PIT is defined for Poisson only".into()));
        }
        self.check_measurement(m)?;
        if !(yhat >= 0.0) {
            return Err(Error::Input(format!("Poisson rate must be >= 0, got {yhat}")));
        }
        Ok(randomized_poisson_score(m, yhat, stream.uniform()).s)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("sigma must be positive, got {sigma}")))
    }
}

fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

/// Asymptotic upper tail of the standard normal: returns `(ln T, d ln T/dz)`
/// with T ~ 1 - Phi(z), using the Mills-ratio series through the z^-8 term.
fn ln_upper_tail(z: f64) -> (f64, f64) {
    let w = 1.0 / (z * z);
    let series = 1.0 + w * (-1.0 + w * (3.0 + w * (-15.0 + w * 105.0)));
    // d(series)/dz = -2 w / z * d(series)/dw
    let dseries_dw = -1.0 + w * (6.0 + w * (-45.0 + w * 420.0));
    let dseries_dz = -2.0 * w / z * dseries_dw;
    let ln_t = -0.5 * z * z - z.ln() - LN_SQRT_2PI + series.ln();
    let dln_t = -z - 1.0 / z + dseries_dz / series;
    (ln_t, dln_t)
}

/// logit(Phi(z)) for large positive z and its z-derivative.
fn right_tail_logit(z: f64) -> (f64, f64) {
    let (ln_t, dln_t) = ln_upper_tail(z);
    let t = ln_t.exp();
    let r = -ln_t + (-t).ln_1p();
    let dr = -dln_t / (1.0 - t);
    (r, dr)
}

fn gaussian_score(z: f64, sigma: f64, tau: f64) -> Score {
    if z > tau {
        let (r, dr_dz) = right_tail_logit(z);
        Score {
            s: 1.0 - norm_sf(z),
            r,
            dr_dyhat: -dr_dz / sigma,
            branch: Branch::UpperTail,
        }
    } else if z < -tau {
        // logit(Phi(z)) is odd in z.
        let (r, dr_dz) = right_tail_logit(-z);
        Score {
            s: norm_cdf(z),
            r: -r,
            dr_dyhat: -dr_dz / sigma,
            branch: Branch::LowerTail,
        }
    } else {
        let s = norm_cdf(z);
        let sf = norm_sf(z);
        let ds = -norm_pdf(z) / sigma;
        Score {
            s,
            r: s.ln() - sf.ln(),
            dr_dyhat: ds / (s * sf),
            branch: Branch::Central,
        }
    }
}

/// Ramped clipped-Gaussian CDF: `(s, 1 - s, ds/dyhat)`.
fn clipped_cdf(m: f64, yhat: f64, sigma: f64, ramp_eps: f64) -> (f64, f64, f64) {
    if m < ramp_eps {
        let ze = (ramp_eps - yhat) / sigma;
        let frac = m / ramp_eps;
        let s = frac * norm_cdf(ze);
        (s, 1.0 - s, -frac * norm_pdf(ze) / sigma)
    } else if m > 1.0 - ramp_eps {
        let z1 = (1.0 - ramp_eps - yhat) / sigma;
        let frac = (m - (1.0 - ramp_eps)) / ramp_eps;
        let c = norm_cdf(z1);
        let sf = norm_sf(z1);
        (c + frac * sf, (1.0 - frac) * sf, -(1.0 - frac) * norm_pdf(z1) / sigma)
    } else {
        let z = (m - yhat) / sigma;
        (norm_cdf(z), norm_sf(z), -norm_pdf(z) / sigma)
    }
}

fn clipped_score(m: f64, yhat: f64, sigma: f64, ramp_eps: f64, hard_eps: f64, delta: f64) -> Score {
    let z = (m - yhat) / sigma;
    let (s, sf, ds) = clipped_cdf(m, yhat, sigma, ramp_eps);
    // The expansions need |z| well away from zero to be meaningful; inside a
    // ramp a tiny s can coexist with z near 0, where the clamp takes over.
    if s < delta && z < -1.0 {
        let (r, dr_dz) = right_tail_logit(-z);
        return Score {
            s,
            r: -r,
            dr_dyhat: -dr_dz / sigma,
            branch: Branch::LowerTail,
        };
    }
    if sf < delta && z > 1.0 {
        let (r, dr_dz) = right_tail_logit(z);
        return Score {
            s,
            r,
            dr_dyhat: -dr_dz / sigma,
            branch: Branch::UpperTail,
        };
    }
    if s < hard_eps || sf < hard_eps {
        let sc = s.clamp(hard_eps, 1.0 - hard_eps);
        return Score {
            s: sc,
            r: logit(sc),
            dr_dyhat: 0.0,
            branch: Branch::Clamped,
        };
    }
    Score {
        s,
        r: s.ln() - sf.ln(),
        dr_dyhat: ds / (s * sf),
        branch: Branch::Central,
    }
}

fn poisson_score(m: f64, yhat: f64, eps: f64) -> Score {
    let q = yhat.max(POISSON_RATE_FLOOR);
    // Below the floor the score is constant in yhat.
    let chain = if yhat > POISSON_RATE_FLOOR { 1.0 } else { 0.0 };
    let (t, s) = gamma_pq(m + 1.0, q);
    if s <= eps {
        Score {
            s,
            r: m * q.ln() - q - ln_gamma(m + 1.0),
            dr_dyhat: chain * (m / q - 1.0),
            branch: Branch::LowerTail,
        }
    } else if t <= eps {
        Score {
            s,
            r: -(m + 1.0) * q.ln() + q + ln_gamma(m + 2.0),
            dr_dyhat: chain * (1.0 - (m + 1.0) / q),
            branch: Branch::UpperTail,
        }
    } else {
        // ds/dq = -pmf(m; q), the Gamma(m + 1, 1) density at q.
        let pmf = ln_poisson_pmf(m, q).exp();
        Score {
            s,
            r: s.ln() - t.ln(),
            dr_dyhat: -chain * pmf / (s * t),
            branch: Branch::Central,
        }
    }
}

/// Randomized-PIT score for a Poisson count given the auxiliary uniform `u`.
pub(crate) fn randomized_poisson_score(m: f64, yhat: f64, u: f64) -> Score {
    let q = yhat.max(0.0);
    let pmf_m = poisson_pmf(m, q);
    let pmf_prev = if m >= 1.0 { poisson_pmf(m - 1.0, q) } else { 0.0 };
    let below = if m >= 1.0 { gamma_pq(m, q).1 } else { 0.0 };
    let above = if q > 0.0 { gamma_pq(m + 1.0, q).0 } else { 0.0 };
    let tiny = f64::MIN_POSITIVE;
    let s = (below + u * pmf_m).max(tiny);
    let sf = (above + (1.0 - u) * pmf_m).max(tiny);
    let ds = if q > 0.0 {
        -(1.0 - u) * pmf_prev - u * pmf_m
    } else {
        0.0
    };
    Score {
        s: s.min(1.0 - f64::EPSILON / 2.0),
        r: s.ln() - sf.ln(),
        dr_dyhat: ds / (s * sf),
        branch: Branch::Central,
    }
}

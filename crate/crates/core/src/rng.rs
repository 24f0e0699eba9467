//! Seedable random streams used for noise simulation and logistic reference
//! samples.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream_id)`, so the
//! sample sequence is a pure function of the seed, the stream id and the
//! order of calls, independent of platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Rates below this use sequential-search inversion; above it, PTRS.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Fresh stream sharing this stream's seed but with its own id.
    pub fn derive(&self, stream_id: u64) -> Self {
        Self::with_stream(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// One draw strictly inside (0, 1): the midpoint of a 2^-52 grid cell,
    /// so both 0 and 1 are unreachable and the logit is always finite.
    pub fn uniform(&mut self) -> f64 {
        let k = self.rng.next_u64() >> 12;
        (k as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn logistic(&mut self) -> f64 {
        let u = self.uniform();
        (u / (1.0 - u)).ln()
    }

    pub fn sample_uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    pub fn sample_logistic(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.logistic()).collect()
    }

    pub fn sample_gaussian(&mut self, mean: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(mean
            .iter()
            .map(|&mu| mu + sigma * self.standard_normal())
            .collect())
    }

    pub fn sample_poisson(&mut self, rates: &[f64]) -> Result<Vec<u64>> {
        if let Some(bad) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::Parameter(format!(
                "Poisson rate must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(rates.iter().map(|&r| self.poisson(r)).collect())
    }

    /// One Poisson draw. The caller guarantees `rate >= 0`.
    pub fn poisson(&mut self, rate: f64) -> u64 {
        if rate <= 0.0 {
            0
        } else if rate < POISSON_INVERSION_LIMIT {
            self.poisson_inversion(rate)
        } else {
            self.poisson_ptrs(rate)
        }
    }

    fn poisson_inversion(&mut self, rate: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut pmf = (-rate).exp();
        let mut cdf = pmf;
        // The cap only matters if rounding leaves cdf a hair below u.
        while u > cdf && k < 1000 {
            k += 1;
            pmf *= rate / k as f64;
            cdf += pmf;
        }
        k
    }

    // Hörmann's transformed rejection with squeeze (PTRS).
    fn poisson_ptrs(&mut self, rate: f64) -> u64 {
        let slam = rate.sqrt();
        let loglam = rate.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -rate + k * loglam - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

//! Special functions: normal CDF/density and the regularized incomplete
//! gamma pair used for the Poisson CDF.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub use statrs::function::gamma::ln_gamma;

/// ln(sqrt(2*pi)).
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail 1 - Phi(z), accurate for large positive z.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z * FRAC_1_SQRT_2)
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
///
/// The series is used for `x < a + 1` and Lentz's continued fraction
/// otherwise; whichever of the pair is computed directly is the smaller one,
/// so it keeps full relative precision and the other is its complement.
pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x < a + 1.0 {
        let p = gamma_p_series(a, x);
        (p, 1.0 - p)
    } else {
        let q = gamma_q_fraction(a, x);
        (1.0 - q, q)
    }
}

const MAX_ITER: usize = 10_000;
const REL_EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

fn log_prefactor(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a)
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * REL_EPS {
            break;
        }
    }
    sum * log_prefactor(a, x).exp()
}

fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < REL_EPS {
            break;
        }
    }
    log_prefactor(a, x).exp() * h
}

/// ln of the Poisson pmf at `k` for rate `q > 0`.
pub fn ln_poisson_pmf(k: f64, q: f64) -> f64 {
    k * q.ln() - q - ln_gamma(k + 1.0)
}

pub fn poisson_pmf(k: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return if k == 0.0 { 1.0 } else { 0.0 };
    }
    ln_poisson_pmf(k, q).exp()
}

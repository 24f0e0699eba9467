//! Checks shared by the integration tests and the acceptance report. Each
//! returns the measured quantity so callers can print or assert on it.

#![allow(dead_code, clippy::excessive_precision)]

use dcloss::forward_ops::ForwardOp;
use dcloss::harness::deconv::two_tone_signal;
use dcloss::losses::{mse_loss, poisson_nll, DcLoss, LossEval};
use dcloss::metrics::{ks_critical_001, ks_statistic};
use dcloss::noise_models::{Branch, NoiseModel, TailPolicy};
use dcloss::regularizers::{eptv, tv, Image2D, WeightGradient};
use dcloss::{ReferenceMode, RngStream};

/// logit(Phi(z)) at 50 significant digits (mpmath), truncated to f64.
pub const GAUSS_LOGIT_ORACLE: [(f64, f64); 7] = [
    (5.0, 15.064_998_107_337_113),
    (5.5, 17.779_376_333_635_698),
    (6.0, 20.736_768_948_988_118),
    (6.5, 23.938_149_495_121_679),
    (7.0, 27.384_307_498_809_795),
    (7.5, 31.075_890_902_889_969),
    (8.0, 35.013_437_159_914_549),
];

/// Largest relative error of the Gaussian tail branch against the oracle
/// over z in [5, 8] (both signs), with the branch forced on at every point.
pub fn gaussian_tail_rel_err() -> f64 {
    let model = NoiseModel::Gaussian { sigma: 1.0 };
    // a threshold just below 5 puts every oracle point on the tail branch
    let policy = TailPolicy {
        gaussian_z_threshold: 4.999,
        ..TailPolicy::default()
    };
    let mut worst: f64 = 0.0;
    for &(z, r) in &GAUSS_LOGIT_ORACLE {
        for sgn in [1.0, -1.0] {
            let sc = model.score(sgn * z, 0.0, &policy);
            assert_ne!(sc.branch, Branch::Central);
            worst = worst.max((sc.r - sgn * r).abs() / r);
        }
    }
    worst
}

/// Jump of the Gaussian logit-CDF across the default threshold tau = 5.
pub fn gaussian_branch_jump() -> f64 {
    let model = NoiseModel::Gaussian { sigma: 1.0 };
    let tau = TailPolicy::default().gaussian_z_threshold;
    let at = |tau_policy: f64, z: f64| {
        let p = TailPolicy {
            gaussian_z_threshold: tau_policy,
            ..TailPolicy::default()
        };
        model.score(z, 0.0, &p)
    };
    let mut worst: f64 = 0.0;
    for z in [tau, -tau] {
        // the same point evaluated on either side of the switch
        let central = at(tau + 1e-9, z);
        let tail = at(tau - 1e-9, z);
        assert_eq!(central.branch, Branch::Central);
        assert_ne!(tail.branch, Branch::Central);
        worst = worst.max((central.r - tail.r).abs());
    }
    worst
}

/// Largest |sum_{k<=m} pmf(k; lam) - (1 - GammaCDF(lam; m + 1, 1))| over
/// m <= 50 and the listed rates. The left side is summed directly with the
/// pmf recursion; the right side is statrs' regularized lower gamma.
/// Also returns the largest deviation of the library CDF from the sum.
pub fn poisson_gamma_duality() -> (f64, f64) {
    let model = NoiseModel::Poisson;
    let mut dual: f64 = 0.0;
    let mut lib: f64 = 0.0;
    for lam in [0.1f64, 1.0, 5.0, 20.0, 100.0] {
        let mut pmf = (-lam).exp();
        let mut sum = 0.0;
        for m in 0..=50u32 {
            if m > 0 {
                pmf *= lam / m as f64;
            }
            sum += pmf;
            let gamma_cdf = statrs::function::gamma::gamma_lr(m as f64 + 1.0, lam);
            dual = dual.max((sum - (1.0 - gamma_cdf)).abs());
            lib = lib.max((sum - model.cdf(m as f64, lam).unwrap()).abs());
        }
    }
    (dual, lib)
}

/// KS statistic of 10^5 randomized-PIT values of Poisson(3) draws, and the
/// critical value at alpha = 0.01.
pub fn randomized_pit_ks(seed: u64) -> (f64, f64) {
    let n = 100_000;
    let model = NoiseModel::Poisson;
    let mut draws = RngStream::with_stream(seed, 0);
    let counts = model.sample(&vec![3.0; n], &mut draws).unwrap();
    let mut u = RngStream::with_stream(seed, 1);
    let s: Vec<f64> = counts
        .iter()
        .map(|&m| model.randomized_pit(m, 3.0, &mut u).unwrap())
        .collect();
    (ks_statistic(&s, |x| x.clamp(0.0, 1.0)), ks_critical_001(n))
}

/// DC loss with every PIT value at 0.5, against a fresh reference.
pub fn overfit_limit(n: usize, seed: u64) -> f64 {
    let m: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    DcLoss::new(NoiseModel::Gaussian { sigma: 0.1 })
        .value(&m, &m, &mut RngStream::new(seed))
        .unwrap()
}

/// |DC(theta* + 2n) - DC(theta*)| for measurements theta* + n, identity
/// operator, Gaussian sigma = 0.1, fixed quantiles.
pub fn worst_case_gap(n: usize, seed: u64) -> f64 {
    let sigma = 0.1;
    let theta = two_tone_signal(n);
    let model = NoiseModel::Gaussian { sigma };
    let op = ForwardOp::Identity(n);
    let y = op.apply(&theta).unwrap();
    let m = model.sample(&y, &mut RngStream::new(seed)).unwrap();
    let worst: Vec<f64> = theta.iter().zip(&m).map(|(t, mi)| t + 2.0 * (mi - t)).collect();
    let dc = DcLoss::new(model).with_mode(ReferenceMode::FixedQuantiles);
    let mut s = RngStream::new(0);
    let a = dc.value(&m, &op.apply(&theta).unwrap(), &mut s).unwrap();
    let b = dc.value(&m, &op.apply(&worst).unwrap(), &mut s).unwrap();
    (a - b).abs()
}

/// Outcome of one family of finite-difference checks.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub configs: usize,
    /// Worst relative error over coordinates evaluated on central branches.
    pub worst_central: f64,
    /// Worst relative error over coordinates on tail branches.
    pub worst_tail: f64,
    /// Coordinates skipped because a sort tie or kink lies within the step.
    pub skipped: usize,
}

impl GradCheck {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            configs: 0,
            worst_central: 0.0,
            worst_tail: 0.0,
            skipped: 0,
        }
    }

    pub fn passes(&self) -> bool {
        self.worst_central <= 1e-4 && self.worst_tail <= 1e-3
    }

    /// Relative error with the denominator floored at 1e-3 of the largest
    /// gradient component, so coordinates whose exact derivative is zero are
    /// judged on an absolute scale instead of on roundoff.
    fn record(&mut self, analytic: f64, fd: f64, scale: f64, tail: bool) {
        let denom = analytic.abs().max(fd.abs()).max(1e-3 * scale);
        let err = (analytic - fd).abs() / denom;
        if tail {
            self.worst_tail = self.worst_tail.max(err);
        } else {
            self.worst_central = self.worst_central.max(err);
        }
    }
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Uniform draw in [lo, hi).
fn unif(s: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * s.uniform()
}

fn dc_config(k: usize, rng: &mut RngStream) -> (NoiseModel, Vec<f64>, Vec<f64>, ReferenceMode) {
    let n = 5 + (rng.uniform() * 40.0) as usize;
    let mode = if k.is_multiple_of(2) {
        ReferenceMode::FixedQuantiles
    } else {
        ReferenceMode::FreshSample
    };
    match k % 3 {
        0 => {
            let sigma = unif(rng, 0.05, 2.0);
            let yhat: Vec<f64> = (0..n).map(|_| unif(rng, -3.0, 3.0)).collect();
            let mut m = NoiseModel::Gaussian { sigma }.sample(&yhat, rng).unwrap();
            // push a few measurements into the far tails
            for i in (0..n).step_by(4) {
                let z = unif(rng, 5.5, 9.0) * if i % 8 == 0 { 1.0 } else { -1.0 };
                m[i] = yhat[i] + z * sigma;
            }
            (NoiseModel::Gaussian { sigma }, m, yhat, mode)
        }
        1 => {
            let yhat: Vec<f64> = (0..n).map(|_| unif(rng, 0.5, 60.0)).collect();
            let mut m = NoiseModel::Poisson.sample(&yhat, rng).unwrap();
            // zero counts at large rates and large counts at small rates
            // land on the tail branches
            for i in (0..n).step_by(5) {
                m[i] = if i % 10 == 0 { 0.0 } else { (yhat[i] * 4.0 + 40.0).round() };
            }
            (NoiseModel::Poisson, m, yhat, mode)
        }
        _ => {
            let sigma = unif(rng, 0.05, 0.3);
            let yhat: Vec<f64> = (0..n).map(|_| unif(rng, 0.05, 0.95)).collect();
            let model = NoiseModel::clipped_gaussian(sigma).unwrap();
            let m = model.sample(&yhat, rng).unwrap();
            (model, m, yhat, mode)
        }
    }
}

/// DC-loss gradient against central differences of the loss value.
pub fn check_dc_gradients(configs: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("dc_loss");
    let mut rng = RngStream::with_stream(seed, 10);
    let policy = TailPolicy::default();
    for k in 0..configs {
        let (model, m, yhat, mode) = dc_config(k, &mut rng);
        let dc = DcLoss::new(model).with_mode(mode);
        let stream = RngStream::with_stream(seed, 1000 + k as u64);
        let LossEval { value: _, grad_yhat } = dc.eval(&m, &yhat, &mut stream.clone()).unwrap();
        let f = |y: &[f64]| dc.value(&m, y, &mut stream.clone()).unwrap();

        // scores and reference exactly as the loss sees them
        let mut s = stream.clone();
        let scores: Vec<_> = m
            .iter()
            .zip(&yhat)
            .map(|(&mi, &yi)| {
                let l = model.logit_cdf(mi, yi, &policy, &mut s).unwrap();
                (l.r, model.score(l.m_used, yi, &policy))
            })
            .collect();
        let u = dcloss::losses::reference_sample(mode, m.len(), &mut s);
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
        let mut rank = vec![0; m.len()];
        for (k, &j) in order.iter().enumerate() {
            rank[j] = k;
        }
        let scale = max_abs(&grad_yhat);
        for i in 0..m.len() {
            let h = 1e-6 * yhat[i].abs().max(0.1);
            let (r, sc) = &scores[i];
            let reach = 10.0 * h * sc.dr_dyhat.abs();
            // distance to the matched reference point and to neighbours in r
            let gap_ref = (r - u[rank[i]]).abs();
            let gap_nb = scores
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (rj, _))| (r - rj).abs())
                .fold(f64::INFINITY, f64::min);
            if gap_ref < reach || gap_nb < reach {
                out.skipped += 1;
                continue;
            }
            let fd = central_diff(&f, &yhat, i, h);
            out.record(grad_yhat[i], fd, scale, sc.branch != Branch::Central);
        }
        out.configs += 1;
    }
    out
}

pub fn check_mse_gradients(configs: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("mse_loss");
    let mut rng = RngStream::with_stream(seed, 11);
    for _ in 0..configs {
        let n = 2 + (rng.uniform() * 50.0) as usize;
        let yhat: Vec<f64> = (0..n).map(|_| unif(&mut rng, -5.0, 5.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| unif(&mut rng, -5.0, 5.0)).collect();
        let g = mse_loss(&yhat, &m).unwrap().grad_yhat;
        let f = |y: &[f64]| mse_loss(y, &m).unwrap().value;
        let scale = max_abs(&g);
        for (i, &gi) in g.iter().enumerate() {
            out.record(gi, central_diff(&f, &yhat, i, 1e-5), scale, false);
        }
        out.configs += 1;
    }
    out
}

pub fn check_nll_gradients(configs: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("poisson_nll");
    let mut rng = RngStream::with_stream(seed, 12);
    for _ in 0..configs {
        let n = 2 + (rng.uniform() * 50.0) as usize;
        let yhat: Vec<f64> = (0..n).map(|_| unif(&mut rng, 0.2, 50.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| unif(&mut rng, 0.0, 1.0)).collect();
        let rates: Vec<f64> = yhat.iter().zip(&b).map(|(y, bi)| y + bi).collect();
        let m = NoiseModel::Poisson.sample(&rates, &mut rng).unwrap();
        let g = poisson_nll(&yhat, &m, &b).unwrap().grad_yhat;
        let f = |y: &[f64]| poisson_nll(y, &m, &b).unwrap().value;
        let scale = max_abs(&g);
        for i in 0..n {
            let h = 1e-6 * yhat[i];
            out.record(g[i], central_diff(&f, &yhat, i, h), scale, false);
        }
        out.configs += 1;
    }
    out
}

/// Shared driver for the two image penalties: random images with no
/// difference closer to zero than the step, so no kink is crossed.
fn check_penalty(
    name: &'static str,
    configs: usize,
    seed: u64,
    stream_id: u64,
    penalty: &dyn Fn(&Image2D) -> (f64, Image2D),
) -> GradCheck {
    let mut out = GradCheck::new(name);
    let mut rng = RngStream::with_stream(seed, stream_id);
    let h = 1e-7;
    for _ in 0..configs {
        let w = 2 + (rng.uniform() * 9.0) as usize;
        let ht = 2 + (rng.uniform() * 9.0) as usize;
        let vals: Vec<f64> = (0..w * ht).map(|_| unif(&mut rng, 0.0, 1.0)).collect();
        let img = Image2D::new(w, ht, vals.clone()).unwrap();
        let (_, g) = penalty(&img);
        let f = |x: &[f64]| penalty(&Image2D::new(w, ht, x.to_vec()).unwrap()).0;
        let scale = max_abs(&g.values);
        let near_kink = |i: usize| {
            let (x, y) = (i % w, i / w);
            let mut d = f64::INFINITY;
            if x + 1 < w {
                d = d.min((vals[i + 1] - vals[i]).abs());
            }
            if x > 0 {
                d = d.min((vals[i] - vals[i - 1]).abs());
            }
            if y + 1 < ht {
                d = d.min((vals[i + w] - vals[i]).abs());
            }
            if y > 0 {
                d = d.min((vals[i] - vals[i - w]).abs());
            }
            d < 10.0 * h
        };
        for i in 0..vals.len() {
            if near_kink(i) {
                out.skipped += 1;
                continue;
            }
            out.record(g.values[i], central_diff(&f, &vals, i, h), scale, false);
        }
        out.configs += 1;
    }
    out
}

pub fn check_tv_gradients(configs: usize, seed: u64) -> GradCheck {
    check_penalty("tv", configs, seed, 13, &|img| tv(img).unwrap())
}

/// Edge-preserving TV with the weights differentiated (the detached
/// variant is not the gradient of the value by construction).
pub fn check_eptv_gradients(configs: usize, seed: u64) -> GradCheck {
    check_penalty("eptv", configs, seed, 14, &|img| {
        eptv(img, 0.1, 1e-8, WeightGradient::Full).unwrap()
    })
}

pub fn gradient_suite(configs: usize, seed: u64) -> Vec<GradCheck> {
    vec![
        check_dc_gradients(configs, seed),
        check_mse_gradients(configs, seed),
        check_nll_gradients(configs, seed),
        check_tv_gradients(configs, seed),
        check_eptv_gradients(configs, seed),
    ]
}

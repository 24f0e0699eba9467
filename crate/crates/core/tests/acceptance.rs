//! Acceptance report. Prints one PASS/FAIL line per criterion with the
//! measured quantities and wall time, and exits nonzero if any fails.
//!
//! Positional arguments filter checks by name:
//! `cargo test --release --test acceptance -- tomo bench`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use dcloss::harness::{
    run_bench, run_calibrate, run_deconv, run_regsweep, run_tomo, BenchSpec, CalibrateSpec,
    DeconvSpec, RegSweepSpec, TomoSpec,
};
use dcloss::optim::LossKind;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = (&'static str, f64, fn() -> Outcome);

fn overfit() -> Outcome {
    let v = common::overfit_limit(1_000_000, 0);
    outcome((v - 1.386).abs() <= 0.01, format!("dc {v:.6} (target 1.386 +/- 0.01)"))
}

fn calibration() -> Outcome {
    let big = run_calibrate(&CalibrateSpec::default(), None).unwrap();
    let small = run_calibrate(
        &CalibrateSpec {
            n: 10_000,
            ..CalibrateSpec::default()
        },
        None,
    )
    .unwrap();
    let ratio = small.truth.mean / big.truth.mean;
    outcome(
        big.truth.mean <= 0.02 && (5.0..=20.0).contains(&ratio),
        format!(
            "mean dc at truth {:.5} (N=1e6), {:.5} (N=1e4), ratio {ratio:.2} (target <= 0.02, ratio in [5, 20])",
            big.truth.mean, small.truth.mean
        ),
    )
}

fn duality() -> Outcome {
    let (dual, lib) = common::poisson_gamma_duality();
    outcome(
        dual <= 1e-10 && lib <= 1e-10,
        format!("max deviation {dual:.2e} vs gamma, {lib:.2e} library cdf (target <= 1e-10)"),
    )
}

fn tail_fidelity() -> Outcome {
    let rel = common::gaussian_tail_rel_err();
    let jump = common::gaussian_branch_jump();
    outcome(
        rel <= 1e-2 && jump <= 1e-3,
        format!("rel err {rel:.2e} (target <= 1e-2), jump {jump:.2e} (target <= 1e-3)"),
    )
}

fn gradients() -> Outcome {
    let checks = common::gradient_suite(50, 7);
    let pass = checks.iter().all(|c| c.passes() && c.configs == 50);
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}/{:.1e}", c.name, c.worst_central, c.worst_tail))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("worst central/tail: {detail} (target 1e-4/1e-3)"))
}

fn deconv() -> Outcome {
    let rep = run_deconv(&DeconvSpec::default(), None).unwrap();
    let (mse, dc) = (&rep.summaries[0], &rep.summaries[1]);
    let a = (1.24..=1.54).contains(&mse.final_dc);
    let b = dc.final_dc <= 0.15;
    let c = dc.signal_l2_error < mse.signal_l2_error;
    let d = (0.005..=0.02).contains(&dc.final_mse_to_measurements);
    outcome(
        a && b && c && d,
        format!(
            "(a) mse-run dc {:.4} [1.24, 1.54] {}; (b) dc-run dc {:.4} <= 0.15 {}; \
             (c) l2 {:.4} < {:.4} {}; (d) dc-run mse {:.5} [0.005, 0.02] {}",
            mse.final_dc,
            ok(a),
            dc.final_dc,
            ok(b),
            dc.signal_l2_error,
            mse.signal_l2_error,
            ok(c),
            dc.final_mse_to_measurements,
            ok(d)
        ),
    )
}

fn worst_case() -> Outcome {
    let gap = common::worst_case_gap(100_000, 0);
    outcome(gap <= 0.05, format!("|gap| {gap:.2e} (target <= 0.05)"))
}

fn tomography() -> Outcome {
    let rep = run_tomo(&TomoSpec::default(), None).unwrap();
    let ratio = |name: &str| {
        let s = rep.summaries.iter().find(|s| s.method == name).unwrap();
        s.final_nrmse / s.min_nrmse
    };
    let (nll, dc, mlem) = (ratio("nll_adam"), ratio("dc_adam"), ratio("mlem"));
    let records = &rep.run("mlem").unwrap().records;
    let monotone = records.windows(2).all(|w| w[1].nll <= w[0].nll);
    outcome(
        nll >= 1.1 && mlem >= 1.1 && dc <= 1.1 && monotone,
        format!(
            "final/min nrmse: nll_adam {nll:.3} (>= 1.1), mlem {mlem:.3} (>= 1.1), \
             dc_adam {dc:.3} (<= 1.1); mlem nll non-increasing {}",
            ok(monotone)
        ),
    )
}

fn regsweep() -> Outcome {
    let rep = run_regsweep(&RegSweepSpec::default(), None).unwrap();
    let at_zero = |l| rep.curve(l).into_iter().find(|p| p.beta == 0.0).unwrap().nrmse;
    let (dc0, nll0) = (at_zero(LossKind::Dc), at_zero(LossKind::Nll));
    let (dc_best, nll_best) = (rep.best(LossKind::Dc).unwrap(), rep.best(LossKind::Nll).unwrap());
    // reported only: how far the largest beta sits above each minimum
    let top = |l| {
        let c = rep.curve(l);
        c.last().unwrap().nrmse / rep.best(l).unwrap().nrmse
    };
    outcome(
        dc0 < nll0 && dc_best.beta < nll_best.beta,
        format!(
            "beta=0 nrmse dc {dc0:.4} < nll {nll0:.4} {}; argmin beta dc {:.3e} (nrmse {:.4}) < nll {:.3e} (nrmse {:.4}) {}; \
             top-of-grid/min dc {:.2}, nll {:.2}",
            ok(dc0 < nll0),
            dc_best.beta,
            dc_best.nrmse,
            nll_best.beta,
            nll_best.nrmse,
            ok(dc_best.beta < nll_best.beta),
            top(LossKind::Dc),
            top(LossKind::Nll)
        ),
    )
}

fn randomized_pit() -> Outcome {
    let (d, crit) = common::randomized_pit_ks(0);
    outcome(d < crit, format!("KS D {d:.5} < {crit:.5}"))
}

fn bench() -> Outcome {
    let n = 1_000_000;
    let rep = run_bench(
        &BenchSpec {
            sizes: vec![n],
            reps: 1000,
            cell_budget_seconds: Some(15.0),
            ..BenchSpec::default()
        },
        None,
    )
    .unwrap();
    let dc = rep.row(n, "gaussian", "forward", "dc").unwrap();
    let mse = rep.row(n, "gaussian", "forward", "mse").unwrap();
    outcome(
        dc.mean_ms > mse.mean_ms,
        format!(
            "forward at N=1e6: dc {:.2} ms ({} reps) > mse {:.3} ms ({} reps)",
            dc.mean_ms, dc.reps, mse.mean_ms, mse.reps
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn main() -> ExitCode {
    // (name, wall-time budget in seconds, check)
    let checks: [Check; 11] = [
        ("overfit_limit", 5.0, overfit),
        ("calibration_at_truth", 120.0, calibration),
        ("poisson_gamma_duality", 1.0, duality),
        ("tail_fidelity", 1.0, tail_fidelity),
        ("gradient_suite", 60.0, gradients),
        ("deconvolution", 300.0, deconv),
        ("worst_case_invariance", 1.0, worst_case),
        ("toy_tomography", 600.0, tomography),
        ("regularization_sweep", 1800.0, regsweep),
        ("randomized_pit", 1.0, randomized_pit),
        ("bench_ordering", 300.0, bench),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        let secs = t.elapsed().as_secs_f64();
        let pass = o.pass && secs < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{secs:.1} s, budget {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

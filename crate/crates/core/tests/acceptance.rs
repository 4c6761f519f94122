//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use cvon_lab::harness::with_workers;
use cvon_lab::losses::{estimate_constants, DEFAULT_FD_STEP};
use cvon_lab::model::{draw, expected_risk};
use cvon_lab::monitor::{
    excess_risk, monitored_run, norm_error, robbins_siegmund_check, supermartingale_test, ChiModel,
    Lyapunov, MonitorOptions,
};
use cvon_lab::problem::Problem;
use cvon_lab::rng::Stream;
use cvon_lab::sgd::{geometric_checkpoints, RecordPolicy, StepSchedule, Trajectory};
use cvon_lab::stability::{
    converse_bound_check, cvon_profile_at, fit_rate, taylor_decomposition, StabilitySeries,
};
use cvon_lab::{ConvexSet, LossModel, MonteCarlo, ParameterVector, Sample};

const N_STEPS: usize = 100_000;
const M_FRESH: usize = 10_000;
const CHECKPOINTS: usize = 20;
const REPLICATES: usize = 20;
const SEED: u64 = 1;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

struct DefaultRun {
    problem: Problem,
    trajectory: Trajectory,
    checkpoints: Vec<usize>,
    series: StabilitySeries,
    elapsed: f64,
}

fn default_run() -> DefaultRun {
    let problem = Problem::default_quadratic(10).unwrap();
    let checkpoints = geometric_checkpoints(N_STEPS / 10, N_STEPS - 1, CHECKPOINTS);
    let start = Instant::now();
    let (trajectory, series) = with_workers(1, || {
        let t = problem
            .runner(N_STEPS, SEED)
            .record(RecordPolicy::Indices(checkpoints.clone()))
            .run()
            .unwrap();
        let s = cvon_profile_at(
            &t,
            &checkpoints,
            &problem.dist,
            problem.loss,
            &problem.set,
            M_FRESH,
            SEED,
        )
        .unwrap();
        (t, s)
    })
    .unwrap();
    DefaultRun {
        problem,
        trajectory,
        checkpoints,
        series,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

fn cvon_rate(run: &DefaultRun) -> Outcome {
    let Ok(fit) = fit_rate(&run.series) else {
        return outcome(
            false,
            format!("{} usable checkpoints", run.series.usable().len()),
        );
    };
    let passed = (0.8..=1.2).contains(&fit.slope) && fit.r_squared >= 0.9 && run.elapsed < 120.0;
    outcome(
        passed,
        format!(
            "slope {:.4} (need [0.8, 1.2]), r^2 {:.4} (need >= 0.9), {} points, {:.1}s single worker",
            fit.slope, fit.r_squared, fit.points, run.elapsed
        ),
    )
}

fn stability_sign(run: &DefaultRun) -> Outcome {
    let s = &run.series;
    let worst = (0..s.len())
        .map(|i| s.beta_hat[i] / s.ci_halfwidth[i])
        .fold(f64::INFINITY, f64::min);
    let pooled = s.pooled();
    outcome(
        s.sign_consistent() && pooled.mean - pooled.ci_halfwidth > 0.0,
        format!(
            "min beta_hat / ci = {worst:.2} (need >= -1), pooled {:.4e} +- {:.2e}",
            pooled.mean, pooled.ci_halfwidth
        ),
    )
}

fn final_errors(problem: &Problem) -> Vec<f64> {
    let f_k = problem.minimizer().unwrap();
    (0..REPLICATES)
        .into_par_iter()
        .map(|r| {
            let t = problem
                .runner(N_STEPS, 100 + r as u64)
                .record(RecordPolicy::Stride(N_STEPS))
                .run()
                .unwrap();
            t.last().distance(&f_k)
        })
        .collect()
}

fn convergence() -> Outcome {
    let base = Problem::default_quadratic(10).unwrap();
    let within = |errs: &[f64]| errs.iter().filter(|e| **e < 0.1).count();
    let compliant = within(&final_errors(&base));
    let steep = within(&final_errors(
        &base
            .clone()
            .with_schedule(StepSchedule::new(0.5, 1.0, 1.5).unwrap()),
    ));
    let constant = within(&final_errors(
        &base
            .clone()
            .with_schedule(StepSchedule::constant(0.02).unwrap()),
    ));
    let majority_fail = |ok: usize| REPLICATES - ok > REPLICATES / 2;
    outcome(
        compliant >= 18 && majority_fail(steep) && majority_fail(constant),
        format!(
            "within 0.1 of f_K: compliant {compliant}/20 (need >= 18), alpha = 1.5 {steep}/20, constant 0.02 {constant}/20 (need < 10)"
        ),
    )
}

fn projection_inactive() -> Outcome {
    let problem = Problem::default_quadratic(10).unwrap();
    let f_k = problem.minimizer().unwrap();
    let interior = problem.set.in_interior(&f_k, 0.3).unwrap();
    let inactive = (0..REPLICATES)
        .into_par_iter()
        .filter(|r| {
            let t = problem
                .runner(N_STEPS, 100 + *r as u64)
                .record(RecordPolicy::Stride(N_STEPS))
                .run()
                .unwrap();
            t.projection_fraction(N_STEPS / 2) == 0.0
        })
        .count();
    outcome(
        interior && inactive >= 18,
        format!(
            "margin >= 0.3: {interior}; no projection in final half: {inactive}/20 (need >= 18)"
        ),
    )
}

fn taylor() -> Outcome {
    let stream = Stream::new(SEED, 0x7A);
    let probe = |i: u64, dim: usize| -> (ParameterVector, Sample) {
        let u = |j: u64| 2.0 * stream.uniform(i * 64 + j) - 1.0;
        let f = ParameterVector::new((0..dim as u64).map(u).collect()).unwrap();
        let x = (0..dim as u64).map(|j| 1.5 * u(16 + j)).collect();
        (f, Sample::new(x, u(63).signum()).unwrap())
    };
    let mut worst_square = 0.0f64;
    for i in 0..1000 {
        let (f, z) = probe(i, 1 + (i as usize % 10));
        let gamma = 10f64.powf(-1.0 - 3.0 * stream.uniform(1 << 40 | i));
        worst_square = worst_square.max(
            taylor_decomposition(&f, &z, gamma, LossModel::Square)
                .unwrap()
                .relative_residual(),
        );
    }
    let gammas = [1e-2, 1e-3, 1e-4];
    let mean_residual: Vec<f64> = gammas
        .iter()
        .map(|&g| {
            (0..100)
                .map(|i| {
                    let (f, z) = probe(5000 + i, 5);
                    taylor_decomposition(&f, &z, g, LossModel::Logistic)
                        .unwrap()
                        .residual
                        .abs()
                })
                .sum::<f64>()
                / 100.0
        })
        .collect();
    let slope = common::log_log_slope(&gammas, &mean_residual);
    outcome(
        worst_square <= 1e-10 && (slope - 3.0).abs() <= 0.5,
        format!("square worst relative residual {worst_square:.2e} (need <= 1e-10), logistic log-slope {slope:.3} (need 3 +- 0.5)"),
    )
}

fn converse(run: &DefaultRun) -> Outcome {
    let p = &run.problem;
    let Ok(fit) = fit_rate(&run.series) else {
        return outcome(false, "no rate fit".into());
    };
    let f_k = p.minimizer().unwrap();
    let m_hat = estimate_constants(p.loss, &p.set, &p.dist, &f_k, 64, SEED)
        .unwrap()
        .hessian_bound
        .unwrap();
    let usable: Vec<usize> = run
        .series
        .usable()
        .iter()
        .map(|&i| run.checkpoints[i])
        .collect();
    let report = converse_bound_check(
        &run.trajectory,
        Some(&usable),
        &p.dist,
        p.loss,
        fit.c_hat,
        m_hat,
        M_FRESH,
        SEED,
    )
    .unwrap();
    outcome(
        report.satisfied() == usable.len() && !usable.is_empty(),
        format!(
            "C_hat {:.4}, M_hat {m_hat:.3}: {}/{} usable checkpoints satisfied, {} violated, {} skipped",
            fit.c_hat,
            report.satisfied(),
            usable.len(),
            report.violations(),
            report.skipped()
        ),
    )
}

fn robbins_siegmund(run: &DefaultRun) -> Outcome {
    let opts = MonitorOptions::default();
    let det = common::deterministic_recursion(200);
    let reproduces =
        (0..det.len() - 1).all(|i| (det.v[i + 1] - det.recursion_bound(i)).abs() <= 1e-12);
    let d = robbins_siegmund_check(&[det], &opts).unwrap();
    let det_ok = reproduces
        && d.recursion_violations == 0
        && d.beta_summable
        && d.chi_summable
        && d.v_converges
        && d.eta_series_bounded;

    let p = &run.problem;
    let f_k = p.minimizer().unwrap();
    let fit = fit_rate(&run.series).unwrap();
    let m_hat = estimate_constants(p.loss, &p.set, &p.dist, &f_k, 64, SEED)
        .unwrap()
        .hessian_bound
        .unwrap();
    let model = ChiModel::Converse {
        c: fit.c_hat,
        hessian_bound: m_hat,
    };
    let series = (0..REPLICATES)
        .into_par_iter()
        .map(|r| {
            let runner = p
                .runner(N_STEPS, 100 + r as u64)
                .record(RecordPolicy::Stride(N_STEPS));
            monitored_run(
                &runner,
                &f_k,
                model,
                Lyapunov::NormSquared,
                &MonteCarlo::disabled(),
                r,
            )
            .unwrap()
            .1
        })
        .collect::<Vec<_>>();
    let sgd = robbins_siegmund_check(&series, &opts).unwrap();
    let sm = supermartingale_test(&series, &opts).unwrap();
    let sgd_ok = sgd.passes(0.05) && sm.violation_rate() <= 0.05;

    let drift = common::drifting_series(REPLICATES, 100);
    let adv = robbins_siegmund_check(&drift, &opts).unwrap();
    let adv_sm = supermartingale_test(&drift, &opts).unwrap();
    let adv_fails = !adv.passes(0.05) && adv_sm.violations == adv_sm.tested_points;

    outcome(
        det_ok && sgd_ok && adv_fails,
        format!(
            "oracle flags pass: {det_ok}; SGD recursion {:.4} and supermartingale {:.4} violation rates (need <= 0.05), flags pass: {}; counterexample fails: {adv_fails}",
            sgd.violation_rate(),
            sm.violation_rate(),
            sgd.beta_summable && sgd.chi_summable && sgd.v_converges && sgd.eta_series_bounded
        ),
    )
}

fn oracle_cross_checks() -> Outcome {
    let stream = Stream::new(SEED, 0x0C);
    let u = |i: u64| 2.0 * stream.uniform(i) - 1.0;

    let mut fd_worst = 0.0f64;
    for loss in [LossModel::Square, LossModel::Logistic] {
        for i in 0..500u64 {
            let dim = 1 + (i as usize % 8);
            let f = ParameterVector::new((0..dim as u64).map(|j| u(i * 40 + j)).collect()).unwrap();
            let x = (0..dim as u64).map(|j| 2.0 * u(i * 40 + 20 + j)).collect();
            let z = Sample::new(x, u(i * 40 + 39).signum()).unwrap();
            fd_worst = fd_worst.max(loss.check_gradient_fd(&f, &z, DEFAULT_FD_STEP).unwrap());
        }
    }

    let mut proj_worst = 0.0f64;
    for dim in 1..=3usize {
        let sets = [
            ConvexSet::ball(vec![0.2; dim], 0.7).unwrap(),
            ConvexSet::boxed(vec![-0.4; dim], vec![0.5; dim]).unwrap(),
            ConvexSet::simplex(1.0).unwrap(),
            ConvexSet::halfspace((0..dim).map(|j| 1.0 + j as f64).collect(), 0.3).unwrap(),
        ];
        for (s, k) in sets.iter().enumerate() {
            for i in 0..6u64 {
                let x: Vec<f64> = (0..dim as u64)
                    .map(|j| 1.8 * u(10_000 + (s as u64 * 10 + i) * 4 + j))
                    .collect();
                let h = if dim == 3 { 0.02 } else { 0.005 };
                let xv = ParameterVector::new(x.clone()).unwrap();
                let brute =
                    ParameterVector::new(common::brute_force_projection(k, &x, h, 2.0)).unwrap();
                let exact = xv.distance(&k.project(&xv).unwrap());
                let grid = xv.distance(&brute);
                // No grid point of K may beat the projection, and the grid
                // must get within one cell diagonal of it.
                let excess = if exact > grid + 1e-12 {
                    f64::INFINITY
                } else {
                    (grid - exact - 1e-12) / (h * (dim as f64).sqrt())
                };
                proj_worst = proj_worst.max(excess);
            }
        }
    }

    let problem = Problem::default_quadratic(10).unwrap();
    let mut worst_z = 0.0f64;
    for i in 0..5u64 {
        let f = ParameterVector::new((0..10).map(|j| u(20_000 + i * 10 + j)).collect()).unwrap();
        let exact = expected_risk(
            &problem.dist,
            LossModel::Square,
            &f,
            &MonteCarlo::disabled(),
        )
        .unwrap();
        let dist = problem.dist.clone();
        let samples: Vec<f64> = (0..100_000)
            .map(|n| {
                LossModel::Square
                    .value(&f, &draw(&dist, 77 + i, n))
                    .unwrap()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        worst_z = worst_z.max((mean - exact.value).abs() / (var / samples.len() as f64).sqrt());
    }

    let whole = problem.clone().with_set(ConvexSet::whole_space());
    let f_k = whole.minimizer().unwrap();
    let mut id_worst = 0.0f64;
    for i in 0..200u64 {
        let f =
            ParameterVector::new((0..10).map(|j| 3.0 * u(30_000 + i * 10 + j)).collect()).unwrap();
        let e = excess_risk(&whole.dist, whole.loss, &f, &f_k, &MonteCarlo::disabled())
            .unwrap()
            .value;
        id_worst = id_worst.max((e - norm_error(&f, &f_k).unwrap().powi(2)).abs());
    }

    outcome(
        fd_worst < 1e-5 && proj_worst <= 1.0 && worst_z <= 4.0 && id_worst <= 1e-10,
        format!(
            "FD {fd_worst:.2e} (need < 1e-5); projection vs grid search {proj_worst:.3} cell diagonals (need <= 1); risk MC {worst_z:.2} SE (need <= 4); excess = norm^2 to {id_worst:.1e} (need <= 1e-10)"
        ),
    )
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cvon-lab"))
            .args(["run", "--workers", workers, "--out"])
            .arg(&out)
            .output()
            .unwrap()
            .status;
        (status.success(), csv_files(&out))
    };
    let (ok1, a) = run("1", "one");
    let (ok4, b) = run("4", "four");
    let (ok4b, c) = run("4", "again");
    outcome(
        ok1 && ok4 && ok4b && !a.is_empty() && a == b && b == c,
        format!(
            "{} CSV files; 1 vs 4 workers identical: {}; repeat identical: {}",
            a.len(),
            a == b,
            b == c
        ),
    )
}

fn main() {
    let run = default_run();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("CV_on rate", Box::new(|| cvon_rate(&run))),
        ("stability sign", Box::new(|| stability_sign(&run))),
        ("convergence and negative controls", Box::new(convergence)),
        (
            "projection inactive at an interior minimizer",
            Box::new(projection_inactive),
        ),
        ("second-order expansion", Box::new(taylor)),
        ("converse gradient bound", Box::new(|| converse(&run))),
        (
            "Robbins-Siegmund diagnostics",
            Box::new(|| robbins_siegmund(&run)),
        ),
        ("oracle cross-checks", Box::new(oracle_cross_checks)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

//! Robbins-Siegmund diagnostics on three kinds of series: a deterministic
//! recursion, twenty SGD replicates and a drifting counterexample.
//!
//!     cargo run --release --example robbins_siegmund

use rayon::prelude::*;

use cvon_lab::losses::estimate_constants;
use cvon_lab::model::MonteCarlo;
use cvon_lab::monitor::{
    monitored_run, robbins_siegmund_check, supermartingale_test, ChiModel, Lyapunov,
    MonitorOptions, MonitorSeries,
};
use cvon_lab::problem::Problem;
use cvon_lab::sgd::{geometric_checkpoints, RecordPolicy};
use cvon_lab::stability::{cvon_profile_at, fit_rate};

fn deterministic() -> cvon_lab::Result<MonitorSeries> {
    let len = 200;
    let beta: Vec<f64> = (0..len).map(|n| 0.5f64.powi(n as i32)).collect();
    let chi = beta.clone();
    let mut v = vec![1.0];
    let mut eta = Vec::with_capacity(len);
    for n in 0..len {
        eta.push(v[n] / 4.0);
        if n + 1 < len {
            v.push(v[n] * (1.0 + beta[n]) + chi[n] - eta[n]);
        }
    }
    MonitorSeries::new(0, v, beta, chi, eta, 0)
}

fn main() -> cvon_lab::Result<()> {
    let opts = MonitorOptions::default();

    let det = robbins_siegmund_check(&[deterministic()?], &opts)?;
    println!("deterministic: {det:?}");

    let problem = Problem::default_quadratic(10)?;
    let f_k = problem.minimizer()?;
    let n_steps = 100_000;
    let checkpoints = geometric_checkpoints(n_steps / 10, n_steps - 1, 20);
    let t = problem
        .runner(n_steps, 1)
        .record(RecordPolicy::Indices(checkpoints.clone()))
        .run()?;
    let fit = fit_rate(&cvon_profile_at(
        &t,
        &checkpoints,
        &problem.dist,
        problem.loss,
        &problem.set,
        10_000,
        1,
    )?)?;
    let constants = estimate_constants(problem.loss, &problem.set, &problem.dist, &f_k, 64, 1)?;
    let hessian_bound = constants
        .hessian_bound
        .expect("square loss is twice differentiable");
    println!(
        "C_hat = {:.4}  M_hat = {:.4}  D_hat = {:.4}",
        fit.c_hat, hessian_bound, constants.growth
    );

    for (name, model) in [
        (
            "converse",
            ChiModel::Converse {
                c: fit.c_hat,
                hessian_bound,
            },
        ),
        (
            "growth",
            ChiModel::Growth {
                d: constants.growth,
            },
        ),
    ] {
        let series = (0..20)
            .into_par_iter()
            .map(|r| {
                let runner = problem
                    .runner(n_steps, 100 + r as u64)
                    .record(RecordPolicy::Stride(n_steps));
                monitored_run(
                    &runner,
                    &f_k,
                    model,
                    Lyapunov::NormSquared,
                    &MonteCarlo::disabled(),
                    r,
                )
                .map(|(_, s)| s)
            })
            .collect::<cvon_lab::Result<Vec<_>>>()?;
        let rs = robbins_siegmund_check(&series, &opts)?;
        let sm = supermartingale_test(&series, &opts)?;
        println!(
            "{name}: recursion {}/{} ({:.4})  flags beta={} chi={} V={} eta={}  tail shares {:.2e} {:.2e} {:.2e}",
            rs.recursion_violations,
            rs.recursion_tested,
            rs.violation_rate(),
            rs.beta_summable,
            rs.chi_summable,
            rs.v_converges,
            rs.eta_series_bounded,
            rs.beta_tail_share,
            rs.chi_tail_share,
            rs.eta_tail_share
        );
        println!(
            "{name}: supermartingale {}/{} ({:.4})",
            sm.violations,
            sm.tested_points,
            sm.violation_rate()
        );
    }

    let drifting: Vec<MonitorSeries> = (0..20)
        .map(|r| {
            let v: Vec<f64> = (0..100).map(|n| n as f64 + 1.0).collect();
            MonitorSeries::new(0, v, vec![0.0; 100], vec![0.0; 100], vec![0.0; 100], r)
        })
        .collect::<cvon_lab::Result<_>>()?;
    let sm = supermartingale_test(&drifting, &opts)?;
    println!(
        "counterexample: supermartingale {}/{}",
        sm.violations, sm.tested_points
    );
    Ok(())
}

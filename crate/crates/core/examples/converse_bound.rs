//! Checks the converse gradient bound `E|grad V|^2 <= C gamma / (gamma - M gamma^2 / 2)`
//! along the default run, with `C` fitted from the CV_on profile and `M`
//! probed from the loss, and the growth bound `E|grad V|^2 <= D (1 + |f - f_K|^2)`.
//!
//!     cargo run --release --example converse_bound

use cvon_lab::losses::estimate_constants;
use cvon_lab::problem::Problem;
use cvon_lab::sgd::{geometric_checkpoints, RecordPolicy};
use cvon_lab::stability::{converse_bound_check, cvon_profile_at, fit_rate, grad_growth_check};

fn main() -> cvon_lab::Result<()> {
    let problem = Problem::default_quadratic(10)?;
    let f_k = problem.minimizer()?;
    let n_steps = 100_000;
    let checkpoints = geometric_checkpoints(n_steps / 10, n_steps - 1, 20);
    let t = problem
        .runner(n_steps, 1)
        .record(RecordPolicy::Indices(checkpoints.clone()))
        .run()?;
    let series = cvon_profile_at(
        &t,
        &checkpoints,
        &problem.dist,
        problem.loss,
        &problem.set,
        10_000,
        1,
    )?;
    let fit = fit_rate(&series)?;
    let constants = estimate_constants(problem.loss, &problem.set, &problem.dist, &f_k, 64, 1)?;
    let m_hat = constants.hessian_bound.expect("square loss has a Hessian");
    println!(
        "C_hat = {:.4}  M_hat = {:.4}  D_hat = {:.4}",
        fit.c_hat, m_hat, constants.growth
    );

    let converse = converse_bound_check(
        &t,
        Some(&checkpoints),
        &problem.dist,
        problem.loss,
        fit.c_hat,
        m_hat,
        10_000,
        1,
    )?;
    println!(
        "{:>8} {:>12} {:>12} {:>10} {:>10}",
        "n", "E|g|^2", "ci", "bound", "status"
    );
    for row in &converse.rows {
        println!(
            "{:>8} {:>12.5} {:>12.5} {:>10.5} {:>10?}",
            row.n,
            row.second_moment,
            row.ci_halfwidth,
            row.bound.unwrap_or(f64::NAN),
            row.status
        );
    }
    println!(
        "converse: {} satisfied, {} violated, {} skipped",
        converse.satisfied(),
        converse.violations(),
        converse.skipped()
    );

    let growth = grad_growth_check(
        &t,
        Some(&checkpoints),
        &problem.dist,
        problem.loss,
        &f_k,
        constants.growth,
        10_000,
        1,
    )?;
    println!(
        "growth: {} satisfied, {} violated",
        growth.satisfied(),
        growth.violations()
    );
    Ok(())
}

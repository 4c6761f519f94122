//! Estimates the CV_on gap along one SGD run on the default quadratic
//! problem and fits its rate against the step size.
//!
//!     cargo run --release --example cvon_stability

use cvon_lab::problem::Problem;
use cvon_lab::sgd::{geometric_checkpoints, RecordPolicy};
use cvon_lab::stability::{cvon_profile_at, fit_rate};

fn main() -> cvon_lab::Result<()> {
    let problem = Problem::default_quadratic(10)?;
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
    println!(
        "{:>8} {:>12} {:>12} {:>12}",
        "n", "gamma_n", "beta_hat", "ci"
    );
    for i in 0..series.len() {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12.2e}",
            series.step_indices[i], series.gamma[i], series.beta_hat[i], series.ci_halfwidth[i]
        );
    }
    let fit = fit_rate(&series)?;
    println!(
        "slope = {:.4}  C_hat = {:.4}  r^2 = {:.4}  ({} points)",
        fit.slope, fit.c_hat, fit.r_squared, fit.points
    );
    let pooled = series.pooled();
    println!(
        "pooled gap = {:.4e} +- {:.2e}",
        pooled.mean, pooled.ci_halfwidth
    );
    Ok(())
}

//! Splits the one-step loss drop `V(f, z) - V(f - gamma g, z)` into
//! `gamma |g|^2 - gamma^2 <g, H g> / 2` and a remainder, for the square loss
//! (remainder zero) and the logistic loss (remainder of order `gamma^3`).
//!
//!     cargo run --release --example taylor_identity

use cvon_lab::stability::taylor_decomposition;
use cvon_lab::{LossModel, ParameterVector, Sample};

fn main() -> cvon_lab::Result<()> {
    let f = ParameterVector::new(vec![0.3, -0.7, 0.2])?;
    let z = Sample::new(vec![1.2, 0.4, -0.9], 1.0)?;
    println!(
        "{:>9} {:>8} {:>14} {:>14} {:>14} {:>12}",
        "loss", "gamma", "drop", "first", "second", "residual"
    );
    for loss in [LossModel::Square, LossModel::Logistic] {
        for gamma in [1e-1, 1e-2, 1e-3, 1e-4] {
            let t = taylor_decomposition(&f, &z, gamma, loss)?;
            println!(
                "{:>9} {gamma:>8.0e} {:>14.6e} {:>14.6e} {:>14.6e} {:>12.3e}",
                loss.name(),
                t.exact_diff,
                t.first_term,
                t.second_term,
                t.residual
            );
        }
    }
    Ok(())
}

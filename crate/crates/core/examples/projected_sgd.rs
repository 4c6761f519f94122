//! Projected SGD on a least-squares problem constrained to a ball, with the
//! minimiser first inside and then outside `K`.
//!
//!     cargo run --release --example projected_sgd

use cvon_lab::model::make_linear_gaussian;
use cvon_lab::monitor::{excess_risk, norm_error};
use cvon_lab::sgd::{projection_inactivity_index, RecordPolicy, SgdRunner, StepSchedule};
use cvon_lab::{ConvexSet, LossModel, MonteCarlo, ParameterVector};

fn main() -> cvon_lab::Result<()> {
    let k = ConvexSet::centered_ball(4, 1.0)?;
    let schedule = StepSchedule::new(0.5, 1.0, 1.0)?;
    for (label, w) in [
        ("interior", [0.3, -0.2, 0.1, 0.4]),
        ("outside", [1.5, 1.0, -0.5, 0.0]),
    ] {
        let dist = make_linear_gaussian(ParameterVector::new(w.to_vec())?, 0.5)?;
        let f_k = k.project(dist.w_star().unwrap())?;
        let t = SgdRunner::new(&dist, LossModel::Square, &k, schedule, 50_000, 7)
            .record(RecordPolicy::Stride(10_000))
            .run()?;
        println!("{label}: f_K = {:?}", f_k.as_slice());
        for (n, f) in t.indices.iter().zip(&t.iterates) {
            let e = excess_risk(&dist, LossModel::Square, f, &f_k, &MonteCarlo::disabled())?;
            println!(
                "  n = {n:>6}  |f_n - f_K| = {:.5}  excess = {:.3e}",
                norm_error(f, &f_k)?,
                e.value
            );
        }
        match projection_inactivity_index(&t) {
            Some(n) => println!("  projection inactive from step {n}"),
            None => println!("  projection active through the final step"),
        }
        println!(
            "  active on {:.1}% of the second half",
            100.0 * t.projection_fraction(25_000)
        );
    }
    Ok(())
}

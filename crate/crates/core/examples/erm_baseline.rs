//! Batch ERM against one pass of projected SGD over the same samples.
//!
//!     cargo run --release --example erm_baseline

use cvon_lab::model::{expected_risk, make_logistic_gaussian};
use cvon_lab::sgd::{erm_solve, reference_minimizer, RecordPolicy, SgdRunner, StepSchedule};
use cvon_lab::{ConvexSet, Dataset, LossModel, MonteCarlo, ParameterVector};

fn main() -> cvon_lab::Result<()> {
    let dist = make_logistic_gaussian(ParameterVector::new(vec![1.0, -0.5, 0.25])?)?;
    let k = ConvexSet::centered_ball(3, 2.0)?;
    let loss = LossModel::Logistic;
    let mc = MonteCarlo::new(200_000, 99);
    let (f_k, _) = reference_minimizer(&dist, loss, &k, 100_000, 5)?;
    let risk_k = expected_risk(&dist, loss, &f_k, &mc)?.value;
    println!("reference f_K = {:.4?}", f_k.as_slice());
    println!(
        "{:>7} {:>14} {:>14} {:>6}",
        "n", "ERM excess", "SGD excess", "iters"
    );
    for n in [100, 1_000, 10_000, 50_000] {
        let seed = 11;
        let data = Dataset::generate(&dist, n, seed);
        let erm = erm_solve(&data, loss, &k, 1e-8, 5_000)?;
        // The run consumes exactly the samples of `data`.
        let sgd = SgdRunner::new(&dist, loss, &k, StepSchedule::new(2.0, 1.0, 0.75)?, n, seed)
            .record(RecordPolicy::Stride(n))
            .run()?;
        println!(
            "{n:>7} {:>14.4e} {:>14.4e} {:>6}",
            expected_risk(&dist, loss, &erm.f, &mc)?.value - risk_k,
            expected_risk(&dist, loss, sgd.last(), &mc)?.value - risk_k,
            erm.iterations
        );
    }
    Ok(())
}

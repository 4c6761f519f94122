//! Euclidean projections onto the supported sets, with the variational
//! inequality checked against random members.
//!
//!     cargo run --release --example projections

use cvon_lab::rng::Stream;
use cvon_lab::{ConvexSet, ParameterVector};

fn main() -> cvon_lab::Result<()> {
    let sets = [
        ("ball", ConvexSet::ball(vec![0.5, 0.0, 0.0], 1.0)?),
        (
            "box",
            ConvexSet::boxed(vec![-1.0, 0.0, -0.5], vec![1.0, 0.5, 0.5])?,
        ),
        ("simplex", ConvexSet::simplex(1.0)?),
        ("halfspace", ConvexSet::halfspace(vec![1.0, 1.0, 1.0], 0.5)?),
    ];
    let x = ParameterVector::new(vec![2.0, -1.0, 0.7])?;
    let stream = Stream::new(3, 0);
    for (name, k) in &sets {
        let p = k.project(&x)?;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..1000u64 {
            let y = ParameterVector::new(
                (0..3)
                    .map(|j| 6.0 * stream.uniform(3 * i + j) - 3.0)
                    .collect(),
            )?;
            let q = k.project(&y)?;
            worst = worst.max(x.sub(&p).dot(&q.sub(&p)));
        }
        println!(
            "{name:>9}: P(x) = {:>28}  dist = {:.4}  max <x - Px, y - Px> = {worst:.2e}",
            format!("{:.4?}", p.as_slice()),
            x.distance(&p)
        );
    }
    Ok(())
}

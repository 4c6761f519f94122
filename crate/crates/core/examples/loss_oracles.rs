//! Values, gradients and curvature of the three losses, with a
//! finite-difference check and the probed constants around `f_K`.
//!
//!     cargo run --release --example loss_oracles

use cvon_lab::losses::{estimate_constants, DEFAULT_FD_STEP};
use cvon_lab::model::make_linear_gaussian;
use cvon_lab::{ConvexSet, LossModel, ParameterVector, Sample};

fn main() -> cvon_lab::Result<()> {
    let f = ParameterVector::new(vec![0.4, -0.1])?;
    let z = Sample::new(vec![1.0, 2.0], 1.0)?;
    for loss in [LossModel::Square, LossModel::Logistic, LossModel::Hinge] {
        let g = loss.subgradient(&f, &z)?;
        let curvature = loss
            .hessian_quadratic_form(&f, &z, &g, &g)
            .map_or("none".to_string(), |c| format!("{c:.4}"));
        println!(
            "{:>8}: V = {:.4}  g = {:.4?}  <g, H g> = {curvature}  fd error = {:.1e}",
            loss.name(),
            loss.value(&f, &z)?,
            g.as_slice(),
            loss.check_gradient_fd(&f, &z, DEFAULT_FD_STEP)?
        );
    }

    let w = ParameterVector::new(vec![0.5, 0.5])?;
    let dist = make_linear_gaussian(w.clone(), 0.5)?;
    let k = ConvexSet::centered_ball(2, 2.0)?;
    let c = estimate_constants(LossModel::Square, &k, &dist, &w, 256, 1)?;
    println!(
        "square loss near f_K: L_hat = {:.3}  M_hat = {:.3}  D_hat = {:.3} (probe radius {})",
        c.lipschitz,
        c.hessian_bound.unwrap_or(f64::NAN),
        c.growth,
        c.probe_radius
    );
    Ok(())
}

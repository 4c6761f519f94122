//! Empirical CV_on stability.
//!
//! The CV_on gap at step `n` is the conditional expected one-step loss
//! improvement on the incoming point,
//! `E_z[V(f_n, z) - V(f_{n+1}, z) | S_n]`, where `z` is independent of the
//! past. It is estimated by freezing `f_n` and averaging over fresh draws
//! on a stream disjoint from the trajectory's, so estimating never perturbs
//! a run.
//!
//! For a step `f' = f - gamma g` with `g = grad V(f, z)` Taylor's formula
//! gives `V(f) - V(f') = gamma |g|^2 - gamma^2/2 <g, H g>`, exactly for
//! quadratics, so the gap is `Theta(gamma_n)` away from the optimum; the
//! converse bound `E|g|^2 <= C gamma / (gamma - M gamma^2 / 2)` follows by
//! rearranging with `|H| <= M`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::losses::LossModel;
use crate::model::DataDistribution;
use crate::rng::{streams, Stream};
use crate::sets::ConvexSet;
use crate::sgd::{descent_direction, sgd_step, Trajectory};
use crate::stats::{fit_line, simultaneous_z, Running, Z95};
use crate::vector::{ParameterVector, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci_halfwidth: f64,
}

/// CV_on gap at a frozen `f_n` from `m` draws of `stream`.
pub fn cvon_gap_on_stream(
    f_n: &ParameterVector,
    gamma: f64,
    loss: LossModel,
    k: &ConvexSet,
    dist: &DataDistribution,
    m: usize,
    stream: &Stream,
) -> Result<GapEstimate> {
    if m < 2 {
        return Err(LabError::InvalidArgument(
            "need at least 2 fresh draws".into(),
        ));
    }
    let mut acc = Running::default();
    for i in 0..m as u64 {
        let z = dist.draw_from(stream, i);
        let (next, _) = sgd_step(f_n, &z, gamma, loss, k)?;
        acc.push(loss.value(f_n, &z)? - loss.value(&next, &z)?);
    }
    Ok(GapEstimate {
        mean: acc.mean(),
        ci_halfwidth: Z95 * acc.std_error(),
    })
}

pub fn cvon_gap_estimate(
    f_n: &ParameterVector,
    gamma: f64,
    loss: LossModel,
    k: &ConvexSet,
    dist: &DataDistribution,
    m: usize,
    seed: u64,
) -> Result<GapEstimate> {
    let stream = Stream::new(seed, streams::stability(0));
    cvon_gap_on_stream(f_n, gamma, loss, k, dist, m, &stream)
}

/// Gap estimates along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub step_indices: Vec<usize>,
    pub gamma: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub m_samples: usize,
}

impl StabilitySeries {
    pub fn len(&self) -> usize {
        self.step_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_indices.is_empty()
    }

    /// Positions whose interval lies strictly above zero.
    pub fn usable(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.beta_hat[i] - self.ci_halfwidth[i] > 0.0)
            .collect()
    }

    /// Every estimate is at least `-ci_halfwidth`.
    pub fn sign_consistent(&self) -> bool {
        self.beta_hat
            .iter()
            .zip(&self.ci_halfwidth)
            .all(|(b, c)| *b >= -c)
    }

    /// Mean of the per-checkpoint estimates and its 95% half-width,
    /// treating checkpoints as independent.
    pub fn pooled(&self) -> GapEstimate {
        let k = self.len() as f64;
        let mean = self.beta_hat.iter().sum::<f64>() / k;
        let se = self
            .ci_halfwidth
            .iter()
            .map(|c| (c / Z95).powi(2))
            .sum::<f64>()
            .sqrt()
            / k;
        GapEstimate {
            mean,
            ci_halfwidth: Z95 * se,
        }
    }
}

/// [`cvon_profile`] restricted to the given checkpoints, each of which must
/// be recorded in `t`. Checkpoint `i` draws from stream `stability(i)`.
pub fn cvon_profile_at(
    t: &Trajectory,
    checkpoints: &[usize],
    dist: &DataDistribution,
    loss: LossModel,
    k: &ConvexSet,
    m: usize,
    seed: u64,
) -> Result<StabilitySeries> {
    let iterates = checkpoints
        .iter()
        .map(|&n| t.iterate_at(n).ok_or(LabError::NotRecorded(n)))
        .collect::<Result<Vec<_>>>()?;
    let estimates = iterates
        .par_iter()
        .zip(checkpoints.par_iter())
        .enumerate()
        .map(|(i, (f, &n))| {
            let stream = Stream::new(seed, streams::stability(i as u64));
            cvon_gap_on_stream(f, t.schedule.gamma(n), loss, k, dist, m, &stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilitySeries {
        step_indices: checkpoints.to_vec(),
        gamma: checkpoints.iter().map(|&n| t.schedule.gamma(n)).collect(),
        beta_hat: estimates.iter().map(|e| e.mean).collect(),
        ci_halfwidth: estimates.iter().map(|e| e.ci_halfwidth).collect(),
        m_samples: m,
    })
}

/// Gap estimates at every recorded iterate before the final step.
pub fn cvon_profile(
    t: &Trajectory,
    dist: &DataDistribution,
    loss: LossModel,
    k: &ConvexSet,
    m: usize,
    seed: u64,
) -> Result<StabilitySeries> {
    let checkpoints: Vec<usize> = t
        .indices
        .iter()
        .copied()
        .filter(|&n| n < t.n_steps)
        .collect();
    cvon_profile_at(t, &checkpoints, dist, loss, k, m, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `log beta_hat` against `log gamma`.
    pub slope: f64,
    /// Geometric mean of `beta_hat / gamma`.
    pub c_hat: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const MIN_RATE_POINTS: usize = 5;

/// Log-log least squares over the usable points of `series`.
pub fn fit_rate(series: &StabilitySeries) -> Result<RateFit> {
    let usable = series.usable();
    if usable.len() < MIN_RATE_POINTS {
        return Err(LabError::TooFewPoints {
            needed: MIN_RATE_POINTS,
            got: usable.len(),
        });
    }
    let xs: Vec<f64> = usable.iter().map(|&i| series.gamma[i].ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|&i| series.beta_hat[i].ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or(LabError::TooFewPoints {
        needed: MIN_RATE_POINTS,
        got: 1,
    })?;
    let log_ratio = ys.iter().zip(&xs).map(|(y, x)| y - x).sum::<f64>() / xs.len() as f64;
    Ok(RateFit {
        slope: fit.slope,
        c_hat: log_ratio.exp(),
        r_squared: fit.r_squared,
        points: usable.len(),
    })
}

/// Second-order expansion of one unprojected step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorTerms {
    /// `gamma |g|^2`
    pub first_term: f64,
    /// `gamma^2 / 2 <g, H(f) g>`, Hessian taken at the starting point.
    pub second_term: f64,
    /// `V(f, z) - V(f - gamma g, z)`
    pub exact_diff: f64,
    /// `exact_diff - (first_term - second_term)`
    pub residual: f64,
    pub value_before: f64,
    pub value_after: f64,
}

impl TaylorTerms {
    /// Residual relative to the largest quantity it was computed from.
    pub fn relative_residual(&self) -> f64 {
        let scale = self
            .value_before
            .abs()
            .max(self.value_after.abs())
            .max(self.first_term.abs())
            .max(self.second_term.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.residual.abs() / scale
        }
    }
}

pub fn taylor_decomposition(
    f: &ParameterVector,
    z: &Sample,
    gamma: f64,
    loss: LossModel,
) -> Result<TaylorTerms> {
    if !loss.twice_differentiable() {
        return Err(LabError::NoHessian(loss.name()));
    }
    let g = loss.gradient(f, z)?;
    let next = f.axpy(-gamma, &g);
    let first_term = gamma * g.norm_sq();
    let second_term = 0.5 * gamma * gamma * loss.hessian_quadratic_form(f, z, &g, &g)?;
    let value_before = loss.value(f, z)?;
    let value_after = loss.value(&next, z)?;
    let exact_diff = value_before - value_after;
    Ok(TaylorTerms {
        first_term,
        second_term,
        exact_diff,
        residual: exact_diff - (first_term - second_term),
        value_before,
        value_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    Satisfied,
    Violated,
    /// Precondition failed; see the row note.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub gamma: f64,
    /// Monte Carlo `E_z |grad V(f_n, z)|^2`.
    pub second_moment: f64,
    pub ci_halfwidth: f64,
    pub bound: Option<f64>,
    pub status: BoundStatus,
    pub note: Option<String>,
}

/// Family-wise level of the violation decisions in a [`BoundReport`].
pub const BOUND_TEST_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Critical value shared by all tested rows: the bound must hold at
    /// every checkpoint simultaneously, so a row is violated only when its
    /// simultaneous interval lies entirely above the bound.
    pub critical_z: f64,
}

impl BoundReport {
    fn decide(mut rows: Vec<BoundRow>) -> Self {
        let tested = rows.iter().filter(|r| r.bound.is_some()).count();
        let critical_z = simultaneous_z(BOUND_TEST_LEVEL, tested);
        for row in &mut rows {
            if let Some(bound) = row.bound {
                let lower = row.second_moment - critical_z * row.ci_halfwidth / Z95;
                row.status = if lower > bound {
                    BoundStatus::Violated
                } else {
                    BoundStatus::Satisfied
                };
            }
        }
        Self { rows, critical_z }
    }

    pub fn violations(&self) -> usize {
        self.count(BoundStatus::Violated)
    }

    pub fn satisfied(&self) -> usize {
        self.count(BoundStatus::Satisfied)
    }

    pub fn skipped(&self) -> usize {
        self.count(BoundStatus::Skipped)
    }

    fn count(&self, s: BoundStatus) -> usize {
        self.rows.iter().filter(|r| r.status == s).count()
    }
}

/// `E_z |grad V(f, z)|^2` with its 95% half-width.
pub fn gradient_second_moment(
    f: &ParameterVector,
    dist: &DataDistribution,
    loss: LossModel,
    m: usize,
    stream: &Stream,
) -> Result<GapEstimate> {
    let mut acc = Running::default();
    for i in 0..m as u64 {
        acc.push(descent_direction(loss, f, &dist.draw_from(stream, i))?.norm_sq());
    }
    Ok(GapEstimate {
        mean: acc.mean(),
        ci_halfwidth: Z95 * acc.std_error(),
    })
}

/// Monte Carlo mean of `grad V(f, z)` with per-coordinate standard errors.
pub fn gradient_mean_estimate(
    f: &ParameterVector,
    dist: &DataDistribution,
    loss: LossModel,
    m: usize,
    seed: u64,
) -> Result<(ParameterVector, Vec<f64>)> {
    let stream = Stream::new(seed, streams::gradient_mean(0));
    let mut acc = vec![Running::default(); f.dim()];
    for i in 0..m as u64 {
        let g = descent_direction(loss, f, &dist.draw_from(&stream, i))?;
        for (a, gi) in acc.iter_mut().zip(g.as_slice()) {
            a.push(*gi);
        }
    }
    let mean = ParameterVector::from_vec_unchecked(acc.iter().map(|a| a.mean()).collect());
    Ok((mean, acc.iter().map(|a| a.std_error()).collect()))
}

fn recorded_checkpoints(
    t: &Trajectory,
    checkpoints: Option<&[usize]>,
) -> Result<Vec<(usize, ParameterVector)>> {
    let ns: Vec<usize> = match checkpoints {
        Some(c) => c.to_vec(),
        None => t
            .indices
            .iter()
            .copied()
            .filter(|&n| n < t.n_steps)
            .collect(),
    };
    ns.into_iter()
        .map(|n| {
            t.iterate_at(n)
                .cloned()
                .map(|f| (n, f))
                .ok_or(LabError::NotRecorded(n))
        })
        .collect()
}

/// Compares `E_z |grad V(f_n, z)|^2` with `C gamma_n / (gamma_n - M gamma_n^2 / 2)`.
/// Checkpoints with `gamma_n >= 2 / M` are skipped. See [`BoundReport`] for
/// the violation rule.
#[allow(clippy::too_many_arguments)]
pub fn converse_bound_check(
    t: &Trajectory,
    checkpoints: Option<&[usize]>,
    dist: &DataDistribution,
    loss: LossModel,
    c_hat: f64,
    hessian_bound: f64,
    m: usize,
    seed: u64,
) -> Result<BoundReport> {
    let points = recorded_checkpoints(t, checkpoints)?;
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, (n, f))| {
            let gamma = t.schedule.gamma(*n);
            let denom = gamma - 0.5 * hessian_bound * gamma * gamma;
            let stream = Stream::new(seed, streams::converse(i as u64));
            let est = gradient_second_moment(f, dist, loss, m, &stream)?;
            if denom.is_nan() || denom <= 0.0 {
                return Ok(BoundRow {
                    n: *n,
                    gamma,
                    second_moment: est.mean,
                    ci_halfwidth: est.ci_halfwidth,
                    bound: None,
                    status: BoundStatus::Skipped,
                    note: Some(format!("gamma_n = {gamma} is not below 2/M")),
                });
            }
            let bound = c_hat * gamma / denom;
            Ok(BoundRow {
                n: *n,
                gamma,
                second_moment: est.mean,
                ci_halfwidth: est.ci_halfwidth,
                bound: Some(bound),
                status: BoundStatus::Satisfied,
                note: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::decide(rows))
}

/// Compares `E_z |grad V(f_n, z)|^2` with `D (1 + |f_n - f_K|^2)`.
#[allow(clippy::too_many_arguments)]
pub fn grad_growth_check(
    t: &Trajectory,
    checkpoints: Option<&[usize]>,
    dist: &DataDistribution,
    loss: LossModel,
    f_k: &ParameterVector,
    growth: f64,
    m: usize,
    seed: u64,
) -> Result<BoundReport> {
    let points = recorded_checkpoints(t, checkpoints)?;
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, (n, f))| {
            let stream = Stream::new(seed, streams::growth(i as u64));
            let est = gradient_second_moment(f, dist, loss, m, &stream)?;
            let bound = growth * (1.0 + f.sub(f_k).norm_sq());
            Ok(BoundRow {
                n: *n,
                gamma: t.schedule.gamma(*n),
                second_moment: est.mean,
                ci_halfwidth: est.ci_halfwidth,
                bound: Some(bound),
                status: BoundStatus::Satisfied,
                note: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::decide(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{draw, make_linear_gaussian};

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    fn synthetic(beta: impl Fn(f64) -> f64) -> StabilitySeries {
        let gamma: Vec<f64> = (0..10).map(|i| 0.1 / (1.0 + i as f64)).collect();
        StabilitySeries {
            step_indices: (0..10).collect(),
            beta_hat: gamma.iter().map(|g| beta(*g)).collect(),
            ci_halfwidth: vec![1e-12; 10],
            gamma,
            m_samples: 1,
        }
    }

    #[test]
    fn exact_linear_rate() {
        let fit = fit_rate(&synthetic(|g| 3.0 * g)).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.c_hat - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_rate() {
        let fit = fit_rate(&synthetic(|g| g * g)).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let mut s = synthetic(|g| g);
        for b in s.beta_hat.iter_mut().skip(3) {
            *b = 0.0;
        }
        assert!(matches!(
            fit_rate(&s),
            Err(LabError::TooFewPoints { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn gap_is_zero_at_noiseless_optimum() {
        let w = pv(&[0.2, -0.4, 1.0]);
        let d = make_linear_gaussian(w.clone(), 0.0).unwrap();
        let est = cvon_gap_estimate(
            &w,
            0.01,
            LossModel::Square,
            &ConvexSet::whole_space(),
            &d,
            100,
            1,
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.ci_halfwidth, 0.0);
    }

    #[test]
    fn taylor_trivial_cases() {
        let f = pv(&[0.3, -0.1]);
        let z = Sample::new(vec![1.0, 2.0], 0.5).unwrap();
        let t = taylor_decomposition(&f, &z, 0.0, LossModel::Logistic).unwrap();
        assert_eq!(
            (t.first_term, t.second_term, t.exact_diff, t.residual),
            (0.0, 0.0, 0.0, 0.0)
        );
        let t = taylor_decomposition(&f, &z, 0.05, LossModel::Square).unwrap();
        assert!(t.relative_residual() < 1e-12);
        assert!(taylor_decomposition(&f, &z, 0.05, LossModel::Hinge).is_err());
    }

    #[test]
    fn converse_trivial_at_noiseless_optimum() {
        let w = pv(&[0.5, 0.5]);
        let d = make_linear_gaussian(w.clone(), 0.0).unwrap();
        let k = ConvexSet::whole_space();
        let t = crate::sgd::SgdRunner::new(&d, LossModel::Square, &k, Default::default(), 50, 1)
            .initial(w.clone())
            .run()
            .unwrap();
        let report =
            converse_bound_check(&t, Some(&[10, 40]), &d, LossModel::Square, 1.0, 4.0, 100, 2)
                .unwrap();
        assert_eq!(report.satisfied(), 2);
        assert!(report.rows.iter().all(|r| r.second_moment == 0.0));
        let growth =
            grad_growth_check(&t, Some(&[10]), &d, LossModel::Square, &w, 1.0, 100, 2).unwrap();
        assert_eq!(growth.rows[0].second_moment, 0.0);
        assert_eq!(growth.satisfied(), 1);
    }

    #[test]
    fn converse_skips_large_steps() {
        let d = make_linear_gaussian(pv(&[1.0]), 0.1).unwrap();
        let k = ConvexSet::whole_space();
        let t = crate::sgd::run_sgd(
            &d,
            LossModel::Square,
            &k,
            Default::default(),
            20,
            1,
            crate::sgd::RecordPolicy::Stride(1),
        )
        .unwrap();
        // gamma_0 = 0.25, M = 100 -> 2/M = 0.02
        let r = converse_bound_check(&t, Some(&[0, 19]), &d, LossModel::Square, 1.0, 100.0, 50, 1)
            .unwrap();
        assert_eq!(r.rows[0].status, BoundStatus::Skipped);
        assert!(r.rows[0].note.is_some());
    }

    #[test]
    fn profile_requires_recorded_points() {
        let d = make_linear_gaussian(pv(&[1.0]), 0.1).unwrap();
        let k = ConvexSet::whole_space();
        let t = crate::sgd::run_sgd(
            &d,
            LossModel::Square,
            &k,
            Default::default(),
            20,
            1,
            crate::sgd::RecordPolicy::Stride(5),
        )
        .unwrap();
        assert!(matches!(
            cvon_profile_at(&t, &[3], &d, LossModel::Square, &k, 10, 1),
            Err(LabError::NotRecorded(3))
        ));
        let s = cvon_profile(&t, &d, LossModel::Square, &k, 10, 1).unwrap();
        assert_eq!(s.step_indices, vec![0, 5, 10, 15]);
        let _ = draw(&d, 0, 0);
    }
}

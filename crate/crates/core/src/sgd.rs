//! Step-size schedules, the projected SGD recursion
//! `f_{n+1} = P_K(f_n - gamma_n grad V(f_n, z_n))`, and a batch ERM baseline.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::losses::LossModel;
use crate::model::{DataDistribution, Dataset};
use crate::rng::{streams, Stream};
use crate::sets::ConvexSet;
use crate::vector::{ParameterVector, Sample};

/// Tolerance below which a pre-projection point counts as already in `K`.
pub const PROJECTION_TOL: f64 = 1e-12;

/// `gamma_n = a / (b + n + 1)^alpha`
///
/// `alpha = 0` gives a constant step, which is accepted as a negative
/// control even though it is not decreasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobbinsMonroReport {
    /// `sum gamma_n = inf`
    pub divergent_sum: bool,
    /// `sum gamma_n^2 < inf`
    pub convergent_sq_sum: bool,
    pub pass: bool,
}

impl StepSchedule {
    pub fn new(a: f64, b: f64, alpha: f64) -> Result<Self> {
        let s = Self { a, b, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new(gamma, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(LabError::InvalidArgument("schedule a must be > 0".into()));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(LabError::InvalidArgument("schedule b must be >= 0".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(LabError::InvalidArgument(
                "schedule alpha must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.a / (self.b + n as f64 + 1.0).powf(self.alpha)
    }
}

/// Decided from `alpha` alone by the p-series test.
pub fn robbins_monro_check(s: &StepSchedule) -> RobbinsMonroReport {
    let divergent_sum = s.alpha <= 1.0;
    let convergent_sq_sum = s.alpha > 0.5;
    RobbinsMonroReport {
        divergent_sum,
        convergent_sq_sum,
        pass: divergent_sum && convergent_sq_sum,
    }
}

/// The descent direction used by SGD: the gradient for smooth losses, the
/// canonical subgradient otherwise.
pub fn descent_direction(
    loss: LossModel,
    f: &ParameterVector,
    z: &Sample,
) -> Result<ParameterVector> {
    if loss.twice_differentiable() {
        loss.gradient(f, z)
    } else {
        loss.subgradient(f, z)
    }
}

/// One projected step. The flag reports whether the projection moved the
/// point.
pub fn sgd_step(
    f: &ParameterVector,
    z: &Sample,
    gamma: f64,
    loss: LossModel,
    k: &ConvexSet,
) -> Result<(ParameterVector, bool)> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(LabError::InvalidArgument("step size must be > 0".into()));
    }
    let g = descent_direction(loss, f, z)?;
    let pre = f.axpy(-gamma, &g);
    let active = !k.contains(&pre, PROJECTION_TOL)?;
    let next = if active { k.project(&pre)? } else { pre };
    Ok((next, active))
}

/// Which iterates a run keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecordPolicy {
    /// Every `k`-th iterate.
    Stride(usize),
    /// Every iterate up to `10^4`, then 20 geometrically spaced per decade.
    Default,
    /// Exactly these indices (plus `0` and the final step).
    Indices(Vec<usize>),
}

impl RecordPolicy {
    pub const DENSE_PREFIX: usize = 10_000;
    pub const PER_DECADE: usize = 20;

    pub fn resolve(&self, n_steps: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = match self {
            RecordPolicy::Stride(k) => (0..=n_steps).step_by((*k).max(1)).collect(),
            RecordPolicy::Default => {
                let dense = Self::DENSE_PREFIX.min(n_steps);
                let mut v: Vec<usize> = (0..=dense).collect();
                if n_steps > dense {
                    v.extend(geometric_indices(dense, n_steps, Self::PER_DECADE));
                }
                v
            }
            RecordPolicy::Indices(v) => v.iter().copied().filter(|&i| i <= n_steps).collect(),
        };
        idx.push(0);
        idx.push(n_steps);
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Integer points between `start` and `end` (inclusive) spaced evenly in
/// `log n`, `per_decade` per factor of ten, deduplicated.
pub fn geometric_indices(start: usize, end: usize, per_decade: usize) -> Vec<usize> {
    let lo = (start.max(1) as f64).log10();
    let hi = (end.max(1) as f64).log10();
    let count = (((hi - lo) * per_decade as f64).ceil() as usize).max(1);
    let mut v: Vec<usize> = (0..=count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / count as f64).round() as usize)
        .map(|i| i.clamp(start.max(1), end))
        .collect();
    v.dedup();
    v
}

/// `count` checkpoints spaced geometrically over `[start, end]`.
pub fn geometric_checkpoints(start: usize, end: usize, count: usize) -> Vec<usize> {
    let lo = (start.max(1) as f64).ln();
    let hi = (end.max(1) as f64).ln();
    let mut v: Vec<usize> = (0..count)
        .map(|i| {
            let t = if count == 1 {
                1.0
            } else {
                i as f64 / (count - 1) as f64
            };
            (lo + (hi - lo) * t).exp().round() as usize
        })
        .collect();
    v.dedup();
    v
}

/// Recorded SGD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Step indices `n` of the recorded iterates, ascending.
    pub indices: Vec<usize>,
    /// `f_n` for each entry of `indices`.
    pub iterates: Vec<ParameterVector>,
    /// `V(f_k, z_k)` for every step `k < n_steps`.
    pub step_losses: Vec<f64>,
    /// Whether the projection was active at step `k`.
    pub projection_active: Vec<bool>,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub n_steps: usize,
    pub loss: LossModel,
    pub set: ConvexSet,
}

impl Trajectory {
    pub fn iterate_at(&self, n: usize) -> Option<&ParameterVector> {
        self.indices
            .binary_search(&n)
            .ok()
            .map(|i| &self.iterates[i])
    }

    pub fn last(&self) -> &ParameterVector {
        self.iterates.last().expect("trajectory always records f_0")
    }

    /// Length of the run of consecutively recorded indices `0, 1, 2, ...`.
    pub fn dense_prefix_len(&self) -> usize {
        self.indices
            .iter()
            .enumerate()
            .take_while(|(i, n)| *i == **n)
            .count()
    }

    /// Fraction of steps in `[from, n_steps)` with an active projection.
    pub fn projection_fraction(&self, from: usize) -> f64 {
        let tail = &self.projection_active[from.min(self.n_steps)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|a| **a).count() as f64 / tail.len() as f64
    }
}

/// Per-step view handed to observers before the update is applied.
#[derive(Debug)]
pub struct StepView<'a> {
    pub n: usize,
    pub gamma: f64,
    pub f: &'a ParameterVector,
    pub z: &'a Sample,
}

/// Projected SGD from `f_0 = 0`.
pub struct SgdRunner<'a> {
    pub dist: &'a DataDistribution,
    pub loss: LossModel,
    pub set: &'a ConvexSet,
    pub schedule: StepSchedule,
    pub n_steps: usize,
    pub seed: u64,
    pub record: RecordPolicy,
    pub initial: Option<ParameterVector>,
}

impl<'a> SgdRunner<'a> {
    pub fn new(
        dist: &'a DataDistribution,
        loss: LossModel,
        set: &'a ConvexSet,
        schedule: StepSchedule,
        n_steps: usize,
        seed: u64,
    ) -> Self {
        Self {
            dist,
            loss,
            set,
            schedule,
            n_steps,
            seed,
            record: RecordPolicy::Default,
            initial: None,
        }
    }

    pub fn record(mut self, record: RecordPolicy) -> Self {
        self.record = record;
        self
    }

    /// Overrides `f_0 = 0`.
    pub fn initial(mut self, f0: ParameterVector) -> Self {
        self.initial = Some(f0);
        self
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.run_observed(|_| {})
    }

    /// Runs the recursion, calling `observer` once per step with `f_n` and
    /// `z_n` before the update.
    pub fn run_observed<O: FnMut(StepView<'_>)>(&self, mut observer: O) -> Result<Trajectory> {
        if self.n_steps == 0 {
            return Err(LabError::InvalidArgument("n_steps must be >= 1".into()));
        }
        self.schedule.validate()?;
        let dim = self.dist.dim();
        let mut f = match &self.initial {
            Some(f0) => {
                f0.check_dim(dim)?;
                f0.clone()
            }
            None => ParameterVector::zeros(dim),
        };
        let limit = 1e6 * (1.0 + self.set.diameter().unwrap_or(1.0));
        let stream = Stream::new(self.seed, streams::TRAJECTORY);
        let indices = self.record.resolve(self.n_steps);
        let mut iterates = Vec::with_capacity(indices.len());
        let mut next_record = 0;
        let mut step_losses = Vec::with_capacity(self.n_steps);
        let mut projection_active = Vec::with_capacity(self.n_steps);

        for n in 0..=self.n_steps {
            if next_record < indices.len() && indices[next_record] == n {
                iterates.push(f.clone());
                next_record += 1;
            }
            if n == self.n_steps {
                break;
            }
            let z = self.dist.draw_from(&stream, n as u64);
            let gamma = self.schedule.gamma(n);
            observer(StepView {
                n,
                gamma,
                f: &f,
                z: &z,
            });
            step_losses.push(self.loss.value(&f, &z)?);
            let (next, active) = sgd_step(&f, &z, gamma, self.loss, self.set)?;
            projection_active.push(active);
            if !next.is_finite() {
                return Err(LabError::Diverged {
                    step: n + 1,
                    reason: "non-finite iterate".into(),
                });
            }
            let norm = next.norm();
            if norm > limit {
                return Err(LabError::Diverged {
                    step: n + 1,
                    reason: format!("|f| = {norm:e} exceeds {limit:e}"),
                });
            }
            f = next;
        }

        Ok(Trajectory {
            indices,
            iterates,
            step_losses,
            projection_active,
            schedule: self.schedule,
            seed: self.seed,
            n_steps: self.n_steps,
            loss: self.loss,
            set: self.set.clone(),
        })
    }
}

pub fn run_sgd(
    dist: &DataDistribution,
    loss: LossModel,
    k: &ConvexSet,
    s: StepSchedule,
    n_steps: usize,
    seed: u64,
    record: RecordPolicy,
) -> Result<Trajectory> {
    SgdRunner::new(dist, loss, k, s, n_steps, seed)
        .record(record)
        .run()
}

/// Smallest `N` such that the projection is inactive at every step after
/// `N`; `None` if it is active at the final step.
pub fn projection_inactivity_index(t: &Trajectory) -> Option<usize> {
    match t.projection_active.iter().rposition(|a| *a) {
        None => Some(0),
        Some(last) if last + 1 == t.projection_active.len() => None,
        Some(last) => Some(last),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmSolution {
    pub f: ParameterVector,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out (or the line search stalled) before
    /// the projected-gradient criterion was met; `f` is then the best
    /// iterate seen.
    pub converged: bool,
    /// Objective after each accepted step, starting from the initial point.
    pub history: Vec<f64>,
}

fn mean_subgradient(
    loss: LossModel,
    f: &ParameterVector,
    data: &Dataset,
) -> Result<ParameterVector> {
    let mut acc = ParameterVector::zeros(f.dim());
    for z in &data.samples {
        acc = acc.add(&loss.subgradient(f, z)?);
    }
    Ok(acc.scale(1.0 / data.len() as f64))
}

/// Batch projected gradient descent with Armijo backtracking on `I_n`,
/// started from `P_K(0)`. Stops when the gradient mapping
/// `|f - P_K(f - t g)| / t` drops below `tol`.
pub fn erm_solve(
    data: &Dataset,
    loss: LossModel,
    k: &ConvexSet,
    tol: f64,
    max_iters: usize,
) -> Result<ErmSolution> {
    let first = data.samples.first().ok_or(LabError::EmptyDataset)?;
    let objective = |f: &ParameterVector| crate::model::empirical_risk(loss, f, data);
    let mut f = k.project(&ParameterVector::zeros(first.dim()))?;
    let mut value = objective(&f)?;
    let mut history = vec![value];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        let g = mean_subgradient(loss, &f, data)?;
        let mut accepted = None;
        while step > 1e-20 {
            let cand = k.project(&f.axpy(-step, &g))?;
            let d = cand.sub(&f);
            let cand_value = objective(&cand)?;
            if cand_value <= value + g.dot(&d) + d.norm_sq() / (2.0 * step) {
                accepted = Some((cand, cand_value, d.norm() / step));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_value, mapping_norm)) = accepted else {
            break;
        };
        iterations += 1;
        if mapping_norm < tol {
            converged = true;
        }
        if cand_value <= value {
            f = cand;
            value = cand_value;
        }
        history.push(value);
        if converged {
            break;
        }
        step *= 2.0;
    }

    Ok(ErmSolution {
        f,
        objective: value,
        iterations,
        converged,
        history,
    })
}

/// `f_K` from the closed form when there is one, otherwise the ERM solution
/// on `samples` draws of a stream reserved for this purpose. The flag says
/// whether the result is exact.
pub fn reference_minimizer(
    dist: &DataDistribution,
    loss: LossModel,
    k: &ConvexSet,
    samples: usize,
    seed: u64,
) -> Result<(ParameterVector, bool)> {
    if dist.analytic_minimizer_available(loss) {
        return Ok((crate::model::true_minimizer(dist, loss, k)?, true));
    }
    if samples == 0 {
        return Err(LabError::NoAnalyticMinimizer(format!(
            "{} with {} loss and no reference sample",
            dist.name(),
            loss.name()
        )));
    }
    let stream = Stream::new(seed, streams::REFERENCE);
    let data = Dataset {
        samples: (0..samples as u64)
            .map(|i| dist.draw_from(&stream, i))
            .collect(),
        seed,
        origin: format!("{} reference", dist.name()),
    };
    Ok((erm_solve(&data, loss, k, 1e-10, 10_000)?.f, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{draw, make_linear_gaussian};

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn robbins_monro_cases() {
        let rm = |alpha| robbins_monro_check(&StepSchedule::new(0.5, 1.0, alpha).unwrap());
        assert!(rm(1.0).pass);
        assert!(rm(0.75).pass);
        let r = rm(0.4);
        assert!(!r.pass && r.divergent_sum && !r.convergent_sq_sum);
        let r = rm(1.5);
        assert!(!r.pass && !r.divergent_sum && r.convergent_sq_sum);
        assert!(!rm(0.0).pass);
    }

    #[test]
    fn schedule_strictly_decreasing() {
        let s = StepSchedule::default();
        assert_eq!(s.gamma(0), 0.25);
        for n in 0..1000 {
            assert!(s.gamma(n + 1) < s.gamma(n));
        }
        assert!(StepSchedule::new(0.0, 1.0, 1.0).is_err());
        assert!(StepSchedule::new(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn single_step_by_hand() {
        let z = Sample::new(vec![1.0, 0.0], 1.0).unwrap();
        let (next, active) = sgd_step(
            &pv(&[0.0, 0.0]),
            &z,
            0.1,
            LossModel::Square,
            &ConvexSet::whole_space(),
        )
        .unwrap();
        assert_eq!(next.as_slice(), &[0.2, 0.0]);
        assert!(!active);
    }

    #[test]
    fn fixed_point_and_boundary() {
        let w = pv(&[0.3, -0.4]);
        let d = make_linear_gaussian(w.clone(), 0.0).unwrap();
        let z = draw(&d, 0, 0);
        let (next, _) =
            sgd_step(&w, &z, 0.5, LossModel::Square, &ConvexSet::whole_space()).unwrap();
        assert_eq!(next, w);

        let ball = ConvexSet::centered_ball(2, 1.0).unwrap();
        let z = Sample::new(vec![1.0, 0.0], 10.0).unwrap();
        let (next, active) = sgd_step(&pv(&[0.0, 0.0]), &z, 1.0, LossModel::Square, &ball).unwrap();
        assert!(active);
        assert!((next.norm() - 1.0).abs() < 1e-15);
        assert!(sgd_step(&w, &z, 0.0, LossModel::Square, &ball).is_err());
    }

    #[test]
    fn one_step_run_matches_sgd_step() {
        let d = make_linear_gaussian(pv(&[1.0, 2.0]), 0.5).unwrap();
        let k = ConvexSet::whole_space();
        let s = StepSchedule::default();
        let t = run_sgd(&d, LossModel::Square, &k, s, 1, 11, RecordPolicy::Stride(1)).unwrap();
        let (expected, _) = sgd_step(
            &ParameterVector::zeros(2),
            &draw(&d, 11, 0),
            s.gamma(0),
            LossModel::Square,
            &k,
        )
        .unwrap();
        assert_eq!(t.indices, vec![0, 1]);
        assert_eq!(t.iterates[0], ParameterVector::zeros(2));
        assert_eq!(t.iterates[1], expected);
    }

    #[test]
    fn zero_steps_rejected() {
        let d = make_linear_gaussian(pv(&[1.0]), 0.5).unwrap();
        let r = run_sgd(
            &d,
            LossModel::Square,
            &ConvexSet::whole_space(),
            StepSchedule::default(),
            0,
            1,
            RecordPolicy::Default,
        );
        assert!(r.is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let d = make_linear_gaussian(pv(&[1.0, 1.0, 1.0, 1.0, 1.0]), 0.5).unwrap();
        let s = StepSchedule::constant(5.0).unwrap();
        let err = run_sgd(
            &d,
            LossModel::Square,
            &ConvexSet::whole_space(),
            s,
            1000,
            1,
            RecordPolicy::Default,
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Diverged { step, .. } if step > 0 && step <= 1000));
    }

    #[test]
    fn record_policies() {
        assert_eq!(RecordPolicy::Stride(3).resolve(10), vec![0, 3, 6, 9, 10]);
        assert_eq!(
            RecordPolicy::Indices(vec![5, 2, 50]).resolve(10),
            vec![0, 2, 5, 10]
        );
        let d = RecordPolicy::Default.resolve(100_000);
        assert_eq!(d[10_000], 10_000);
        assert_eq!(*d.last().unwrap(), 100_000);
        assert!(d.len() < 10_000 + 30);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn checkpoints_are_geometric() {
        let c = geometric_checkpoints(10_000, 100_000, 20);
        assert_eq!(c.len(), 20);
        assert_eq!(c[0], 10_000);
        assert_eq!(c[19], 100_000);
        let ratios: Vec<f64> = c.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
        assert!(ratios
            .iter()
            .all(|r| (r - 10f64.powf(1.0 / 19.0)).abs() < 1e-3));
    }

    #[test]
    fn inactivity_index() {
        let d = make_linear_gaussian(pv(&[0.5, 0.5]), 0.1).unwrap();
        let t = run_sgd(
            &d,
            LossModel::Square,
            &ConvexSet::whole_space(),
            StepSchedule::default(),
            200,
            1,
            RecordPolicy::Stride(10),
        )
        .unwrap();
        assert_eq!(projection_inactivity_index(&t), Some(0));
        let mut t2 = t.clone();
        t2.projection_active[7] = true;
        assert_eq!(projection_inactivity_index(&t2), Some(7));
        t2.projection_active[199] = true;
        assert_eq!(projection_inactivity_index(&t2), None);
    }

    #[test]
    fn erm_interpolates_noiseless_data() {
        let w = pv(&[0.7, -1.3, 0.2]);
        let d = make_linear_gaussian(w.clone(), 0.0).unwrap();
        let data = Dataset::generate(&d, 50, 2);
        let sol = erm_solve(
            &data,
            LossModel::Square,
            &ConvexSet::whole_space(),
            1e-10,
            10_000,
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sol.f.max_abs_diff(&w) < 1e-8, "{:?}", sol.f);
        assert!(sol.history.windows(2).all(|h| h[1] <= h[0]));
    }

    #[test]
    fn erm_single_sample_reaches_zero_residual() {
        let d = make_linear_gaussian(pv(&[1.0, 2.0, -0.5]), 0.3).unwrap();
        let data = Dataset::generate(&d, 1, 8);
        let sol = erm_solve(
            &data,
            LossModel::Square,
            &ConvexSet::whole_space(),
            1e-12,
            10_000,
        )
        .unwrap();
        let z = &data.samples[0];
        assert!((z.y - z.predict(&sol.f)).abs() < 1e-9);
        // min-norm solution is a multiple of x
        let x = z.x_vector();
        let c = sol.f.dot(&x) / x.norm_sq();
        assert!(sol.f.max_abs_diff(&x.scale(c)) < 1e-9);
    }

    #[test]
    fn erm_empty_dataset() {
        let data = Dataset {
            samples: vec![],
            seed: 0,
            origin: "none".into(),
        };
        assert!(matches!(
            erm_solve(
                &data,
                LossModel::Square,
                &ConvexSet::whole_space(),
                1e-6,
                10
            ),
            Err(LabError::EmptyDataset)
        ));
    }

    #[test]
    fn erm_budget_exhaustion_flags() {
        let d = make_linear_gaussian(pv(&[1.0, 2.0]), 0.3).unwrap();
        let data = Dataset::generate(&d, 30, 1);
        let sol = erm_solve(
            &data,
            LossModel::Square,
            &ConvexSet::whole_space(),
            1e-14,
            1,
        )
        .unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }
}

//! Consistency metrics across replicate runs and Robbins-Siegmund
//! diagnostics.
//!
//! The Robbins-Siegmund recursion
//! `E[V_{n+1} | F_n] <= V_n (1 + beta_n) + chi_n - eta_n`
//! with summable `beta`, `chi` gives almost-sure convergence of `V_n` and of
//! `sum eta_n`. Nothing finite can certify an almost-sure statement; the
//! checks here are empirical surrogates:
//!
//! * conditional expectations are replaced by across-replicate means of the
//!   per-path residual `V_{n+1} - (V_n (1 + beta_n) + chi_n - eta_n)`,
//!   grouped into quantile bins of `V_n`;
//! * summability is a heuristic on partial sums (the last decade of indices
//!   adds less than 1% of the total);
//! * convergence of `V_n` means its oscillation over the last 10% of the
//!   series is below `1e-2 (1 + V_0)`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::losses::LossModel;
use crate::model::{
    empirical_risk, expected_risk, risk_gradient, DataDistribution, Dataset, MonteCarlo,
};
use crate::rng::{streams, Stream};
use crate::sgd::{SgdRunner, StepSchedule, Trajectory};
use crate::stats::Running;
use crate::vector::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRisk {
    pub value: f64,
    pub std_error: f64,
    /// Negative value that can only come from Monte Carlo noise.
    pub noise_negative: bool,
}

/// `I(f) - I(f_K)`. Without a closed form, both risks are estimated from
/// the same draws and the paired difference is averaged.
pub fn excess_risk(
    dist: &DataDistribution,
    loss: LossModel,
    f: &ParameterVector,
    f_k: &ParameterVector,
    mc: &MonteCarlo,
) -> Result<ExcessRisk> {
    let at_f = expected_risk(dist, loss, f, &MonteCarlo::disabled());
    let at_fk = expected_risk(dist, loss, f_k, &MonteCarlo::disabled());
    if let (Ok(a), Ok(b)) = (at_f, at_fk) {
        return Ok(ExcessRisk {
            value: a.value - b.value,
            std_error: 0.0,
            noise_negative: false,
        });
    }
    if mc.draws == 0 {
        return Err(LabError::NoRiskBudget);
    }
    f.check_dim(dist.dim())?;
    f_k.check_dim(dist.dim())?;
    let stream = Stream::new(mc.seed, streams::RISK);
    let mut acc = Running::default();
    for i in 0..mc.draws as u64 {
        let z = dist.draw_from(&stream, i);
        acc.push(loss.value(f, &z)? - loss.value(f_k, &z)?);
    }
    Ok(ExcessRisk {
        value: acc.mean(),
        std_error: acc.std_error(),
        noise_negative: acc.mean() < 0.0,
    })
}

/// `|f - f_K|`
pub fn norm_error(f: &ParameterVector, f_k: &ParameterVector) -> Result<f64> {
    f.check_dim(f_k.dim())?;
    Ok(f.distance(f_k))
}

/// `|I_n(f) - I(f)|`
pub fn generalization_gap(
    f: &ParameterVector,
    data: &Dataset,
    dist: &DataDistribution,
    loss: LossModel,
    mc: &MonteCarlo,
) -> Result<f64> {
    let empirical = empirical_risk(loss, f, data)?;
    let expected = expected_risk(dist, loss, f, mc)?;
    Ok((empirical - expected.value).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    /// `exceeding / replicates`
    pub fraction: f64,
    pub exceeding: usize,
    pub replicates: usize,
}

pub const MIN_CURVE_REPLICATES: usize = 10;

/// Fraction of replicates with excess risk above `epsilon` at each
/// checkpoint. With `checkpoints = None` every run must record exactly the
/// same indices.
pub fn consistency_curve(
    runs: &[Trajectory],
    checkpoints: Option<&[usize]>,
    dist: &DataDistribution,
    loss: LossModel,
    f_k: &ParameterVector,
    epsilon: f64,
    mc: &MonteCarlo,
) -> Result<Vec<CurvePoint>> {
    if runs.len() < MIN_CURVE_REPLICATES {
        return Err(LabError::TooFewPoints {
            needed: MIN_CURVE_REPLICATES,
            got: runs.len(),
        });
    }
    let ns: Vec<usize> = match checkpoints {
        Some(c) => c.to_vec(),
        None => {
            if runs.iter().any(|r| r.indices != runs[0].indices) {
                return Err(LabError::MismatchedCheckpoints);
            }
            runs[0].indices.clone()
        }
    };
    let mut curve = Vec::with_capacity(ns.len());
    for n in ns {
        let mut exceeding = 0;
        for run in runs {
            let f = run.iterate_at(n).ok_or(LabError::MismatchedCheckpoints)?;
            if excess_risk(dist, loss, f, f_k, mc)?.value > epsilon {
                exceeding += 1;
            }
        }
        curve.push(CurvePoint {
            n,
            fraction: exceeding as f64 / runs.len() as f64,
            exceeding,
            replicates: runs.len(),
        });
    }
    Ok(curve)
}

/// Four nonnegative sequences indexed by `n = start, start + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub start: usize,
    pub v: Vec<f64>,
    pub beta: Vec<f64>,
    pub chi: Vec<f64>,
    pub eta: Vec<f64>,
    pub replicate_id: usize,
}

impl MonitorSeries {
    pub fn new(
        start: usize,
        v: Vec<f64>,
        beta: Vec<f64>,
        chi: Vec<f64>,
        eta: Vec<f64>,
        replicate_id: usize,
    ) -> Result<Self> {
        let len = v.len();
        for (name, s) in [("beta", &beta), ("chi", &chi), ("eta", &eta)] {
            if s.len() != len {
                return Err(LabError::InvalidArgument(format!(
                    "{name} has length {} but V has {len}",
                    s.len()
                )));
            }
        }
        if [&v, &beta, &chi, &eta]
            .iter()
            .any(|s| s.iter().any(|x| !x.is_finite() || *x < 0.0))
        {
            return Err(LabError::InvalidArgument(
                "monitor sequences must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            start,
            v,
            beta,
            chi,
            eta,
            replicate_id,
        })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Right-hand side `V_n (1 + beta_n) + chi_n - eta_n` at position `i`.
    pub fn recursion_bound(&self, i: usize) -> f64 {
        self.v[i] * (1.0 + self.beta[i]) + self.chi[i] - self.eta[i]
    }

    /// `Y_n = V_n / P_n + sum_{k<n} (eta_k - chi_k) / P_{k+1}` with
    /// `P_n = prod_{k<n} (1 + beta_k)`. A supermartingale whenever the
    /// recursion holds; with `beta = chi = 0` this is
    /// `V_n + sum_{k<n} eta_k`.
    pub fn compensated(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut prod = 1.0;
        let mut acc = 0.0;
        for i in 0..self.len() {
            out.push(self.v[i] / prod + acc);
            prod *= 1.0 + self.beta[i];
            acc += (self.eta[i] - self.chi[i]) / prod;
        }
        out
    }
}

/// Where the `chi_n` and `beta_n` of an SGD-derived series come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChiModel {
    /// Second moment bounded through CV_on stability:
    /// `beta_n = 0`, `chi_n = gamma_n^2 C gamma_n / (gamma_n - M gamma_n^2 / 2)`.
    /// Steps with `gamma_n >= 2 / M` are dropped from the front.
    Converse { c: f64, hessian_bound: f64 },
    /// Second moment bounded by growth: `beta_n = chi_n = D gamma_n^2`.
    Growth { d: f64 },
}

impl ChiModel {
    /// First step index at which the model is defined.
    fn first_valid(&self, schedule: &StepSchedule, limit: usize) -> usize {
        match *self {
            ChiModel::Converse { hessian_bound, .. } => (0..limit)
                .find(|&n| {
                    let g = schedule.gamma(n);
                    g - 0.5 * hessian_bound * g * g > 0.0
                })
                .unwrap_or(limit),
            ChiModel::Growth { .. } => 0,
        }
    }

    fn beta_chi(&self, gamma: f64) -> (f64, f64) {
        match *self {
            ChiModel::Converse { c, hessian_bound } => (
                0.0,
                gamma * gamma * c * gamma / (gamma - 0.5 * hessian_bound * gamma * gamma),
            ),
            ChiModel::Growth { d } => (d * gamma * gamma, d * gamma * gamma),
        }
    }
}

/// The quantity tracked as `V_n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Lyapunov {
    /// `V_n = |f_n - f_K|^2` with `eta_n = 2 gamma_n <f_n - f_K, grad I(f_n)>`.
    #[default]
    NormSquared,
    /// `V_n = I(f_n) - I(f_K)` with `eta_n = gamma_n |grad I(f_n)|^2`. The
    /// second-order term of the descent inequality is scaled by
    /// `smoothness / 2`, an upper bound on the curvature of `I`. The
    /// recursion is exact only while the projection is inactive.
    ExcessRisk { smoothness: f64 },
}

struct SeriesBuffer<'a> {
    model: ChiModel,
    lyapunov: Lyapunov,
    f_k: &'a ParameterVector,
    dist: &'a DataDistribution,
    loss: LossModel,
    mc: &'a MonteCarlo,
    v: Vec<f64>,
    beta: Vec<f64>,
    chi: Vec<f64>,
    eta: Vec<f64>,
}

impl<'a> SeriesBuffer<'a> {
    fn new(
        model: ChiModel,
        lyapunov: Lyapunov,
        f_k: &'a ParameterVector,
        dist: &'a DataDistribution,
        loss: LossModel,
        mc: &'a MonteCarlo,
    ) -> Self {
        Self {
            model,
            lyapunov,
            f_k,
            dist,
            loss,
            mc,
            v: Vec::new(),
            beta: Vec::new(),
            chi: Vec::new(),
            eta: Vec::new(),
        }
    }

    fn push(&mut self, gamma: f64, f: &ParameterVector) -> Result<()> {
        let d = f.sub(self.f_k);
        let grad = risk_gradient(self.dist, self.loss, f, self.mc)?;
        let (beta, chi) = self.model.beta_chi(gamma);
        match self.lyapunov {
            Lyapunov::NormSquared => {
                self.v.push(d.norm_sq());
                self.eta.push((2.0 * gamma * d.dot(&grad)).max(0.0));
                self.beta.push(beta);
                self.chi.push(chi);
            }
            Lyapunov::ExcessRisk { smoothness } => {
                // chi / gamma^2 bounds E|g|^2; the growth form depends on the
                // current distance and is adapted rather than deterministic.
                let second_moment = match self.model {
                    ChiModel::Growth { d: growth } => growth * (1.0 + d.norm_sq()),
                    ChiModel::Converse { .. } => chi / (gamma * gamma),
                };
                let excess = excess_risk(self.dist, self.loss, f, self.f_k, self.mc)?.value;
                self.v.push(excess.max(0.0));
                self.eta.push(gamma * grad.norm_sq());
                self.beta.push(0.0);
                self.chi
                    .push(0.5 * smoothness * gamma * gamma * second_moment);
            }
        }
        Ok(())
    }

    fn finish(self, start: usize, replicate_id: usize) -> Result<MonitorSeries> {
        MonitorSeries::new(start, self.v, self.beta, self.chi, self.eta, replicate_id)
    }
}

/// `V_n` and `eta_n` from `lyapunov`, `beta_n` and `chi_n` from `model`,
/// over the consecutively recorded prefix of `t`.
pub fn sgd_monitor_series(
    t: &Trajectory,
    dist: &DataDistribution,
    f_k: &ParameterVector,
    model: ChiModel,
    lyapunov: Lyapunov,
    mc: &MonteCarlo,
    replicate_id: usize,
) -> Result<MonitorSeries> {
    let dense = t.dense_prefix_len();
    let first = model.first_valid(&t.schedule, dense);
    if dense < first + 2 {
        return Err(LabError::TooFewPoints {
            needed: first + 2,
            got: dense,
        });
    }
    let mut buf = SeriesBuffer::new(model, lyapunov, f_k, dist, t.loss, mc);
    for n in first..dense {
        buf.push(t.schedule.gamma(n), &t.iterates[n])?;
    }
    buf.finish(first, replicate_id)
}

/// Runs `runner` and builds the same series as [`sgd_monitor_series`] over
/// every step `n < n_steps` without storing the iterates.
pub fn monitored_run(
    runner: &SgdRunner<'_>,
    f_k: &ParameterVector,
    model: ChiModel,
    lyapunov: Lyapunov,
    mc: &MonteCarlo,
    replicate_id: usize,
) -> Result<(Trajectory, MonitorSeries)> {
    let first = model.first_valid(&runner.schedule, runner.n_steps);
    let mut buf = SeriesBuffer::new(model, lyapunov, f_k, runner.dist, runner.loss, mc);
    let mut failure = None;
    let t = runner.run_observed(|step| {
        if step.n < first || failure.is_some() {
            return;
        }
        if let Err(e) = buf.push(step.gamma, step.f) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if buf.v.len() < 2 {
        return Err(LabError::TooFewPoints {
            needed: first + 2,
            got: runner.n_steps,
        });
    }
    Ok((t, buf.finish(first, replicate_id)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorOptions {
    /// Quantile bins used to condition on `V_n`.
    pub bins: usize,
    /// Bins are merged until each holds at least this many replicates.
    pub min_per_bin: usize,
    /// A bin violates when its mean exceeds this many standard errors.
    pub z_threshold: f64,
    /// Absolute slack for exact (zero-variance) comparisons.
    pub tolerance: f64,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        Self {
            bins: 10,
            min_per_bin: 10,
            z_threshold: 2.0,
            tolerance: 1e-12,
        }
    }
}

pub const MIN_STOCHASTIC_REPLICATES: usize = 20;

/// Partial-sum heuristic for `sum x_n < inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summability {
    pub total: f64,
    /// Share of the total contributed by the last decade of indices.
    pub tail_share: f64,
    pub summable: bool,
}

pub fn classify_summable(x: &[f64]) -> Summability {
    let total: f64 = x.iter().sum();
    let from = x.len() / 10;
    let tail: f64 = x[from.min(x.len())..].iter().sum();
    let tail = if x.len() < 10 { total } else { tail };
    let tail_share = if total == 0.0 { 0.0 } else { tail / total };
    Summability {
        total,
        tail_share,
        summable: total == 0.0 || (x.len() >= 10 && tail_share <= 0.01),
    }
}

fn v_converges(v: &[f64]) -> bool {
    if v.is_empty() {
        return false;
    }
    let from = v.len() - (v.len() / 10).max(1);
    let tail = &v[from..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    max - min < 1e-2 * (1.0 + v[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobbinsSiegmundReport {
    pub recursion_violations: usize,
    pub recursion_tested: usize,
    pub beta_summable: bool,
    pub chi_summable: bool,
    pub v_converges: bool,
    pub eta_series_bounded: bool,
    /// Largest last-decade share of the partial sums across replicates.
    pub beta_tail_share: f64,
    pub chi_tail_share: f64,
    pub eta_tail_share: f64,
    /// True when the recursion was checked path by path rather than in
    /// conditional mean.
    pub pathwise: bool,
    pub notices: Vec<String>,
}

impl RobbinsSiegmundReport {
    pub fn violation_rate(&self) -> f64 {
        if self.recursion_tested == 0 {
            0.0
        } else {
            self.recursion_violations as f64 / self.recursion_tested as f64
        }
    }

    /// All flags set and at most `max_rate` of recursion tests violated.
    pub fn passes(&self, max_rate: f64) -> bool {
        self.beta_summable
            && self.chi_summable
            && self.v_converges
            && self.eta_series_bounded
            && self.violation_rate() <= max_rate
    }
}

fn common_range(series: &[MonitorSeries]) -> Result<(usize, usize)> {
    let first = series
        .first()
        .ok_or(LabError::TooFewPoints { needed: 1, got: 0 })?;
    if series
        .iter()
        .any(|s| s.start != first.start || s.len() != first.len())
    {
        return Err(LabError::MismatchedCheckpoints);
    }
    Ok((first.start, first.len()))
}

/// Counts positive-drift violations of `E[next - bound | F_n] <= 0`, where
/// `residual(s, i)` is the per-path quantity at position `i`.
fn drift_tests(
    series: &[MonitorSeries],
    len: usize,
    opts: &MonitorOptions,
    residual: impl Fn(usize, usize) -> f64,
) -> (usize, usize, bool) {
    let replicates = series.len();
    if replicates < MIN_STOCHASTIC_REPLICATES {
        let mut violations = 0;
        let mut tested = 0;
        for (r, s) in series.iter().enumerate() {
            for i in 0..len - 1 {
                tested += 1;
                if residual(r, i) > opts.tolerance * (1.0 + s.v[i].abs()) {
                    violations += 1;
                }
            }
        }
        return (violations, tested, true);
    }
    let bins = opts.bins.min(replicates / opts.min_per_bin.max(1)).max(1);
    let mut violations = 0;
    let mut tested = 0;
    let mut order: Vec<usize> = (0..replicates).collect();
    for i in 0..len - 1 {
        order.sort_by(|&a, &b| series[a].v[i].total_cmp(&series[b].v[i]).then(a.cmp(&b)));
        for b in 0..bins {
            let lo = b * replicates / bins;
            let hi = (b + 1) * replicates / bins;
            let acc: Running = order[lo..hi].iter().map(|&r| residual(r, i)).collect();
            tested += 1;
            let se = acc.std_error();
            if acc.mean() > opts.z_threshold * se + opts.tolerance {
                violations += 1;
            }
        }
    }
    (violations, tested, false)
}

/// Recursion, summability and convergence diagnostics. With fewer than
/// [`MIN_STOCHASTIC_REPLICATES`] series the recursion is checked on each
/// path deterministically, and a notice says so.
pub fn robbins_siegmund_check(
    series: &[MonitorSeries],
    opts: &MonitorOptions,
) -> Result<RobbinsSiegmundReport> {
    let (_, len) = common_range(series)?;
    if len < 2 {
        return Err(LabError::TooFewPoints {
            needed: 2,
            got: len,
        });
    }
    let (recursion_violations, recursion_tested, pathwise) =
        drift_tests(series, len, opts, |r, i| {
            let s = &series[r];
            s.v[i + 1] - s.recursion_bound(i)
        });

    let mut notices =
        vec!["summability and convergence flags are finite-sample heuristics".to_string()];
    if pathwise {
        notices.push(format!(
            "{} series (< {}); recursion checked pathwise",
            series.len(),
            MIN_STOCHASTIC_REPLICATES
        ));
    } else {
        notices.push("conditional expectations approximated by quantile bins of V_n".into());
    }

    let worst = |pick: fn(&MonitorSeries) -> &[f64]| {
        series.iter().map(|s| classify_summable(pick(s))).fold(
            Summability {
                total: 0.0,
                tail_share: 0.0,
                summable: true,
            },
            |acc, c| Summability {
                total: acc.total.max(c.total),
                tail_share: acc.tail_share.max(c.tail_share),
                summable: acc.summable && c.summable,
            },
        )
    };
    let beta = worst(|s| &s.beta);
    let chi = worst(|s| &s.chi);
    let eta = worst(|s| &s.eta);

    Ok(RobbinsSiegmundReport {
        recursion_violations,
        recursion_tested,
        beta_summable: beta.summable,
        chi_summable: chi.summable,
        v_converges: series.iter().all(|s| v_converges(&s.v)),
        eta_series_bounded: eta.summable,
        beta_tail_share: beta.tail_share,
        chi_tail_share: chi.tail_share,
        eta_tail_share: eta.tail_share,
        pathwise,
        notices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub violations: usize,
    pub tested_points: usize,
    pub pathwise: bool,
}

impl SupermartingaleReport {
    pub fn violation_rate(&self) -> f64 {
        if self.tested_points == 0 {
            0.0
        } else {
            self.violations as f64 / self.tested_points as f64
        }
    }
}

/// Tests `E[Y_{n+1} | F_n] <= Y_n` for the compensated process
/// [`MonitorSeries::compensated`].
pub fn supermartingale_test(
    series: &[MonitorSeries],
    opts: &MonitorOptions,
) -> Result<SupermartingaleReport> {
    let (_, len) = common_range(series)?;
    if len < 2 {
        return Err(LabError::TooFewPoints {
            needed: 2,
            got: len,
        });
    }
    let ys: Vec<Vec<f64>> = series.iter().map(|s| s.compensated()).collect();
    let (violations, tested_points, pathwise) =
        drift_tests(series, len, opts, |r, i| ys[r][i + 1] - ys[r][i]);
    Ok(SupermartingaleReport {
        violations,
        tested_points,
        pathwise,
    })
}

/// Outcome of [`descent_direction_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentProbe {
    pub probes: usize,
    /// Probes with `<f - f_K, grad I(f)> <= 0`.
    pub violations: usize,
    /// Smallest `<f - f_K, grad I(f)> / |f - f_K|^2` seen.
    pub min_ratio: f64,
    /// The risk gradient was a Monte Carlo mean.
    pub estimated: bool,
}

impl DescentProbe {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Probes `<f - f_K, grad I(f)> > 0` at random points of the whole space
/// around `f_K`, at distances spread over `radius * {0.1, 1, 3}`. Only a
/// finite sample, so a pass is evidence, not a proof.
pub fn descent_direction_check(
    dist: &DataDistribution,
    loss: LossModel,
    f_k: &ParameterVector,
    radius: f64,
    probes: usize,
    mc: &MonteCarlo,
    seed: u64,
) -> Result<DescentProbe> {
    let stream = Stream::new(seed, streams::descent(0));
    let dim = f_k.dim();
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for k in 0..probes {
        let mut rng = stream.at(k as u64);
        let u = ParameterVector::from_vec_unchecked(crate::rng::normal_vec(&mut rng, dim));
        let n = u.norm();
        if n == 0.0 {
            continue;
        }
        let r = radius * [0.1, 1.0, 3.0][k % 3];
        let d = u.scale(r / n);
        let g = risk_gradient(dist, loss, &f_k.add(&d), mc)?;
        let ratio = d.dot(&g) / (r * r);
        if ratio <= 0.0 {
            violations += 1;
        }
        min_ratio = min_ratio.min(ratio);
    }
    let estimated = !matches!(
        (dist, loss),
        (DataDistribution::LinearGaussian { .. }, LossModel::Square)
            | (DataDistribution::Empirical { .. }, _)
    );
    Ok(DescentProbe {
        probes,
        violations,
        min_ratio,
        estimated,
    })
}

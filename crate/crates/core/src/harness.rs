//! Experiment runner: replicates, stability and convergence diagnostics,
//! and the artifact bundle on disk.
//!
//! Bundle layout:
//!
//! ```text
//! config.toml                  canonical config
//! trajectories/replicate_NNN.csv
//! stability.csv  stability.json  stability_trajectory.csv
//! convergence.csv  convergence.json
//! plots/*.svg                  only with plots enabled
//! manifest.json                hashes of everything above
//! ```
//!
//! All numbers are computed before anything is written and files are
//! written by one thread in a fixed order, so the bytes do not depend on the
//! worker count. CSV floats use the shortest decimal that round-trips.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::losses::{estimate_constants, LossConstants};
use crate::model::MonteCarlo;
use crate::monitor::{
    consistency_curve, descent_direction_check, excess_risk, monitored_run, robbins_siegmund_check,
    supermartingale_test, ChiModel, DescentProbe, Lyapunov, MonitorOptions, MonitorSeries,
    RobbinsSiegmundReport, SupermartingaleReport,
};
use crate::plot::LogLogPlot;
use crate::problem::Problem;
use crate::sgd::{reference_minimizer, RecordPolicy, Trajectory};
use crate::stability::{
    converse_bound_check, cvon_profile_at, fit_rate, BoundReport, GapEstimate, RateFit,
    StabilitySeries,
};
use crate::vector::ParameterVector;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CVON_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Run,
    Stability,
    Convergence,
    Sweep,
}

/// Output directory: explicit path, else the config's `output_dir`, else
/// `$CVON_LAB_OUT/<name>`, else `cvon-out/<name>`.
pub fn resolve_out_dir(explicit: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cvon-out"));
    root.join(&cfg.name)
}

/// Runs `f` on a pool of `workers` threads; 0 picks the rayon default.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ReplicateStatus {
    Completed,
    Diverged { step: usize, reason: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEntry {
    pub id: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: ReplicateStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub replicates: Vec<ReplicateEntry>,
    pub files: Vec<FileEntry>,
}

/// Collects files under one root, hashing as it goes.
struct Bundle {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Bundle {
    fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len(),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(
        mut self,
        cfg: &ExperimentConfig,
        command: Command,
        replicates: Vec<ReplicateEntry>,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config_hash: cfg.hash(),
            base_seed: cfg.seed,
            seeds: replicates.iter().map(|r| r.seed).collect(),
            replicates,
            files: std::mem::take(&mut self.files),
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).expect("manifest serializes to JSON");
        text.push('\n');
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// Shared inputs of every phase.
pub struct Context {
    pub problem: Problem,
    pub f_k: ParameterVector,
    /// Whether `f_K` and the risks are closed-form.
    pub exact: bool,
    pub constants: LossConstants,
    pub mc: MonteCarlo,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let problem = cfg.problem()?;
        let (f_k, exact) = reference_minimizer(
            &problem.dist,
            problem.loss,
            &problem.set,
            cfg.monte_carlo.reference_samples,
            cfg.seed,
        )?;
        let constants = estimate_constants(
            problem.loss,
            &problem.set,
            &problem.dist,
            &f_k,
            cfg.stability.probes,
            cfg.seed,
        )?;
        Ok(Self {
            problem,
            f_k,
            exact,
            constants,
            mc: MonteCarlo::new(cfg.monte_carlo.draws, cfg.seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub m: usize,
    pub checkpoints: usize,
    pub usable_points: usize,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    /// Every estimate is at least minus its half-width.
    pub sign_consistent: bool,
    pub pooled: GapEstimate,
    /// Pooled lower confidence limit above zero.
    pub pooled_positive: bool,
    pub constants: LossConstants,
    pub converse_bound: Option<BoundReport>,
    /// The loss has no Hessian, so the expansion behind the gap bounds does
    /// not apply and the profile is descriptive only.
    pub exploratory: bool,
    /// Sampled check that `-grad I` points towards `f_K`.
    pub descent: Option<DescentProbe>,
}

pub struct StabilityOutcome {
    pub trajectory: Trajectory,
    pub series: StabilitySeries,
    pub report: StabilityReport,
}

/// One run with replicate 0's seed, CV_on profile on the configured
/// checkpoints, rate fit and converse-bound check.
pub fn stability_phase(cfg: &ExperimentConfig, ctx: &Context) -> Result<StabilityOutcome> {
    let p = &ctx.problem;
    let checkpoints = cfg.stability_checkpoints();
    let mut recorded = cfg.record_policy().resolve(cfg.n_steps);
    recorded.extend(&checkpoints);
    recorded.sort_unstable();
    recorded.dedup();
    let seed = cfg.replicate_seed(0);
    let trajectory = p
        .runner(cfg.n_steps, seed)
        .record(RecordPolicy::Indices(recorded))
        .run()?;
    let series = cvon_profile_at(
        &trajectory,
        &checkpoints,
        &p.dist,
        p.loss,
        &p.set,
        cfg.stability.m,
        cfg.seed,
    )?;
    let fit = fit_rate(&series);
    let converse_bound = match (&fit, ctx.constants.hessian_bound) {
        (Ok(fit), Some(m_hat)) => Some(converse_bound_check(
            &trajectory,
            Some(&checkpoints),
            &p.dist,
            p.loss,
            fit.c_hat,
            m_hat,
            cfg.stability.m,
            cfg.seed,
        )?),
        _ => None,
    };
    let radius = ctx.f_k.norm().max(1.0);
    let descent = descent_direction_check(
        &p.dist,
        p.loss,
        &ctx.f_k,
        radius,
        cfg.stability.probes,
        &ctx.mc,
        cfg.seed,
    )
    .ok();
    let pooled = series.pooled();
    let report = StabilityReport {
        seed,
        m: cfg.stability.m,
        checkpoints: series.len(),
        usable_points: series.usable().len(),
        fit_error: fit.as_ref().err().map(|e| e.to_string()),
        fit: fit.ok(),
        sign_consistent: series.sign_consistent(),
        pooled_positive: pooled.mean - pooled.ci_halfwidth > 0.0,
        pooled,
        constants: ctx.constants,
        converse_bound,
        exploratory: !p.loss.twice_differentiable(),
        descent,
    };
    Ok(StabilityOutcome {
        trajectory,
        series,
        report,
    })
}

pub struct ReplicateOutcome {
    pub entry: ReplicateEntry,
    pub trajectory: Option<Trajectory>,
    pub series: Option<MonitorSeries>,
    pub csv: Option<String>,
}

impl ReplicateOutcome {
    pub fn completed(&self) -> bool {
        self.entry.status == ReplicateStatus::Completed
    }
}

fn trajectory_csv(t: &Trajectory, ctx: &Context) -> Result<String> {
    let p = &ctx.problem;
    let mut out = String::from("n,gamma_n,loss_at_step,norm_error,excess_risk,projection_active\n");
    for (n, f) in t.indices.iter().zip(&t.iterates) {
        let gamma = t.schedule.gamma(*n);
        let norm = f.distance(&ctx.f_k);
        let excess = excess_risk(&p.dist, p.loss, f, &ctx.f_k, &ctx.mc)?.value;
        match (t.step_losses.get(*n), t.projection_active.get(*n)) {
            (Some(l), Some(a)) => writeln!(out, "{n},{gamma:?},{l:?},{norm:?},{excess:?},{a}"),
            _ => writeln!(out, "{n},{gamma:?},,{norm:?},{excess:?},"),
        }
        .expect("writing to a String");
    }
    Ok(out)
}

/// Runs every replicate, with the Robbins-Siegmund series when `chi` is
/// given. Failures are recorded, not propagated.
pub fn run_replicates(
    cfg: &ExperimentConfig,
    ctx: &Context,
    chi: Option<ChiModel>,
) -> Vec<ReplicateOutcome> {
    let lyapunov = cfg.lyapunov(ctx.constants.hessian_bound);
    let monitor = chi.zip(lyapunov);
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.replicate_seed(r);
            let runner = ctx
                .problem
                .runner(cfg.n_steps, seed)
                .record(cfg.record_policy());
            let result = match monitor {
                Some((model, lyapunov)) => monitored_run(
                    &runner,
                    &ctx.f_k,
                    model,
                    lyapunov,
                    &MonteCarlo::disabled(),
                    r,
                )
                .map(|(t, s)| (t, Some(s))),
                None => runner.run().map(|t| (t, None)),
            }
            .and_then(|(t, s)| trajectory_csv(&t, ctx).map(|csv| (t, s, csv)));
            let (status, trajectory, series, csv) = match result {
                Ok((t, s, csv)) => (ReplicateStatus::Completed, Some(t), s, Some(csv)),
                Err(LabError::Diverged { step, reason }) => {
                    (ReplicateStatus::Diverged { step, reason }, None, None, None)
                }
                Err(e) => (
                    ReplicateStatus::Failed {
                        reason: e.to_string(),
                    },
                    None,
                    None,
                    None,
                ),
            };
            ReplicateOutcome {
                entry: ReplicateEntry {
                    id: r,
                    seed,
                    status,
                },
                trajectory,
                series,
                csv,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub replicates: usize,
    pub completed: usize,
    pub norm_threshold: f64,
    /// Completed replicates with `|f_N - f_K|` below the threshold.
    pub converged: usize,
    pub final_norm_errors: Vec<f64>,
    pub tail_fraction: f64,
    /// Per replicate, fraction of the final steps with an active projection.
    pub projection_tail_fractions: Vec<f64>,
    pub projection_inactive_replicates: usize,
    pub epsilon: f64,
    pub final_fraction_exceeding: Option<f64>,
    pub f_k_exact: bool,
    pub chi_model: Option<ChiModel>,
    pub lyapunov: Option<Lyapunov>,
    pub robbins_siegmund: Option<RobbinsSiegmundReport>,
    pub supermartingale: Option<SupermartingaleReport>,
    pub notes: Vec<String>,
}

pub struct ConvergenceOutcome {
    pub replicates: Vec<ReplicateOutcome>,
    pub csv: String,
    pub report: ConvergenceReport,
}

/// Picks the chi model for the Robbins-Siegmund series, or `None` when the
/// risk gradient has no closed form.
pub fn chi_for(cfg: &ExperimentConfig, ctx: &Context, c_hat: Option<f64>) -> Option<ChiModel> {
    if !ctx.exact {
        return None;
    }
    Some(match c_hat {
        Some(c) => cfg.chi_model(c, ctx.constants.hessian_bound, ctx.constants.growth),
        None => ChiModel::Growth {
            d: ctx.constants.growth,
        },
    })
}

pub fn convergence_phase(
    cfg: &ExperimentConfig,
    ctx: &Context,
    chi: Option<ChiModel>,
) -> Result<ConvergenceOutcome> {
    let p = &ctx.problem;
    let replicates = run_replicates(cfg, ctx, chi);
    let done: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| r.completed()).collect();
    let runs: Vec<Trajectory> = done.iter().filter_map(|r| r.trajectory.clone()).collect();
    let series: Vec<MonitorSeries> = done.iter().filter_map(|r| r.series.clone()).collect();
    let mut notes = Vec::new();

    let final_norm_errors: Vec<f64> = runs.iter().map(|t| t.last().distance(&ctx.f_k)).collect();
    let converged = final_norm_errors
        .iter()
        .filter(|e| **e < cfg.convergence.norm_threshold)
        .count();
    let tail_start =
        cfg.n_steps - (cfg.n_steps as f64 * cfg.convergence.tail_fraction).round() as usize;
    let projection_tail_fractions: Vec<f64> = runs
        .iter()
        .map(|t| t.projection_fraction(tail_start))
        .collect();
    let projection_inactive_replicates = projection_tail_fractions
        .iter()
        .filter(|f| **f == 0.0)
        .count();

    let curve = match consistency_curve(
        &runs,
        None,
        &p.dist,
        p.loss,
        &ctx.f_k,
        cfg.convergence.epsilon,
        &ctx.mc,
    ) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("consistency curve skipped: {e}"));
            None
        }
    };
    if !ctx.exact {
        notes.push("f_K located numerically; risks are Monte Carlo estimates".into());
    }

    let lyapunov = cfg.lyapunov(ctx.constants.hessian_bound);
    let opts = MonitorOptions::default();
    let (robbins_siegmund, supermartingale) = if series.is_empty() {
        notes.push("Robbins-Siegmund series need a closed-form risk gradient and, for excess risk, a curvature bound; skipped".into());
        (None, None)
    } else {
        (
            Some(robbins_siegmund_check(&series, &opts)?),
            Some(supermartingale_test(&series, &opts)?),
        )
    };

    let mut csv = String::from("n,frac_exceeding_eps,V_mean,eta_partial_sum\n");
    if let Some(curve) = &curve {
        let mut eta_cum: Vec<Vec<f64>> = series
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                std::iter::once(0.0)
                    .chain(s.eta.iter().map(|e| {
                        acc += e;
                        acc
                    }))
                    .collect()
            })
            .collect();
        for point in curve {
            let mut v_sum = 0.0;
            for f in runs.iter().filter_map(|t| t.iterate_at(point.n)) {
                v_sum += match lyapunov {
                    Some(Lyapunov::ExcessRisk { .. }) => {
                        excess_risk(&p.dist, p.loss, f, &ctx.f_k, &ctx.mc)?.value
                    }
                    _ => f.sub(&ctx.f_k).norm_sq(),
                };
            }
            let v_mean = v_sum / runs.len() as f64;
            let eta = if eta_cum.is_empty() {
                String::new()
            } else {
                let mean = eta_cum
                    .iter_mut()
                    .zip(&series)
                    .map(|(cum, s)| cum[point.n.saturating_sub(s.start).min(cum.len() - 1)])
                    .sum::<f64>()
                    / series.len() as f64;
                format!("{mean:?}")
            };
            writeln!(csv, "{},{:?},{v_mean:?},{eta}", point.n, point.fraction)
                .expect("writing to a String");
        }
    }

    let report = ConvergenceReport {
        replicates: cfg.replicates,
        completed: done.len(),
        norm_threshold: cfg.convergence.norm_threshold,
        converged,
        final_norm_errors,
        tail_fraction: cfg.convergence.tail_fraction,
        projection_tail_fractions,
        projection_inactive_replicates,
        epsilon: cfg.convergence.epsilon,
        final_fraction_exceeding: curve.as_ref().and_then(|c| c.last()).map(|p| p.fraction),
        f_k_exact: ctx.exact,
        chi_model: chi,
        lyapunov,
        robbins_siegmund,
        supermartingale,
        notes,
    };
    Ok(ConvergenceOutcome {
        replicates,
        csv,
        report,
    })
}

fn stability_csv(series: &StabilitySeries) -> String {
    let mut out = String::from("n,gamma,beta_hat,ci,m\n");
    for i in 0..series.len() {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            series.step_indices[i],
            series.gamma[i],
            series.beta_hat[i],
            series.ci_halfwidth[i],
            series.m_samples
        )
        .expect("writing to a String");
    }
    out
}

fn stability_plot(outcome: &StabilityOutcome) -> String {
    let s = &outcome.series;
    let points: Vec<(f64, f64)> = (0..s.len()).map(|i| (s.gamma[i], s.beta_hat[i])).collect();
    let mut plot =
        LogLogPlot::new("CV_on gap against step size", "gamma_n", "beta_hat_n").scatter(points);
    let usable = s.usable();
    if let (Some(fit), false) = (&outcome.report.fit, usable.is_empty()) {
        // The fitted line passes through the centroid of the usable points.
        let mean_log_g = usable.iter().map(|&i| s.gamma[i].ln()).sum::<f64>() / usable.len() as f64;
        let at = |g: f64| {
            (
                g,
                fit.c_hat * mean_log_g.exp() * (fit.slope * (g.ln() - mean_log_g)).exp(),
            )
        };
        let lo = usable
            .iter()
            .map(|&i| s.gamma[i])
            .fold(f64::INFINITY, f64::min);
        let hi = usable.iter().map(|&i| s.gamma[i]).fold(0.0, f64::max);
        plot = plot.line(vec![at(lo), at(hi)]);
    }
    plot.render()
}

fn norm_plot(replicates: &[ReplicateOutcome], f_k: &ParameterVector) -> String {
    let mut plot = LogLogPlot::new("distance to f_K", "n", "|f_n - f_K|");
    for r in replicates {
        if let Some(t) = &r.trajectory {
            plot = plot.line(
                t.indices
                    .iter()
                    .zip(&t.iterates)
                    .map(|(n, f)| (*n as f64, f.distance(f_k)))
                    .collect(),
            );
        }
    }
    plot.render()
}

/// Result of one harness invocation.
pub struct Summary {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub stability: Option<StabilityReport>,
    pub convergence: Option<ConvergenceReport>,
}

impl Summary {
    /// Replicates that did not complete.
    pub fn aborted(&self) -> usize {
        self.manifest
            .replicates
            .iter()
            .filter(|r| r.status != ReplicateStatus::Completed)
            .count()
    }
}

/// Entry point for the `run`, `stability` and `convergence` commands.
pub fn execute(
    cfg: &ExperimentConfig,
    command: Command,
    out: &Path,
    workers: usize,
    plots: bool,
) -> Result<Summary> {
    with_workers(workers, || {
        execute_in_pool(cfg, command, out, plots || cfg.emit_plots)
    })?
}

fn execute_in_pool(
    cfg: &ExperimentConfig,
    command: Command,
    out: &Path,
    plots: bool,
) -> Result<Summary> {
    let ctx = Context::new(cfg)?;
    let wants_stability = matches!(command, Command::Run | Command::Stability);
    let wants_convergence = matches!(command, Command::Run | Command::Convergence);
    let needs_c_hat = wants_convergence && ctx.exact && ctx.constants.hessian_bound.is_some();

    let stability = if wants_stability || needs_c_hat {
        Some(stability_phase(cfg, &ctx)?)
    } else {
        None
    };
    let convergence = if wants_convergence {
        let c_hat = stability
            .as_ref()
            .and_then(|s| s.report.fit)
            .map(|f| f.c_hat);
        Some(convergence_phase(cfg, &ctx, chi_for(cfg, &ctx, c_hat))?)
    } else {
        None
    };
    let stability = stability.filter(|_| wants_stability);
    write_bundle(cfg, command, out, &ctx, stability, convergence, plots)
}

fn write_bundle(
    cfg: &ExperimentConfig,
    command: Command,
    out: &Path,
    ctx: &Context,
    stability: Option<StabilityOutcome>,
    convergence: Option<ConvergenceOutcome>,
    plots: bool,
) -> Result<Summary> {
    let mut bundle = Bundle::new(out)?;
    bundle.write("config.toml", cfg.to_toml().as_bytes())?;
    let mut entries = Vec::new();
    if let Some(s) = &stability {
        bundle.write("stability.csv", stability_csv(&s.series).as_bytes())?;
        bundle.write_json("stability.json", &s.report)?;
        bundle.write(
            "stability_trajectory.csv",
            trajectory_csv(&s.trajectory, ctx)?.as_bytes(),
        )?;
        if plots {
            bundle.write("plots/stability.svg", stability_plot(s).as_bytes())?;
        }
        if convergence.is_none() {
            entries.push(ReplicateEntry {
                id: 0,
                seed: s.report.seed,
                status: ReplicateStatus::Completed,
            });
        }
    }
    if let Some(c) = &convergence {
        for r in &c.replicates {
            if let Some(csv) = &r.csv {
                bundle.write(
                    &format!("trajectories/replicate_{:03}.csv", r.entry.id),
                    csv.as_bytes(),
                )?;
            }
            entries.push(r.entry.clone());
        }
        bundle.write("convergence.csv", c.csv.as_bytes())?;
        bundle.write_json("convergence.json", &c.report)?;
        if plots {
            bundle.write(
                "plots/norm_error.svg",
                norm_plot(&c.replicates, &ctx.f_k).as_bytes(),
            )?;
        }
    }
    let manifest = bundle.finish(cfg, command, entries)?;
    Ok(Summary {
        out: out.to_path_buf(),
        manifest,
        stability: stability.map(|s| s.report),
        convergence: convergence.map(|c| c.report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub dir: String,
    pub config_hash: String,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub c_hat: Option<f64>,
    pub converged: Option<usize>,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

/// Runs the full pipeline once per value of the dotted config key `param`,
/// each into `out/<param>=<value>`.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[String],
    out: &Path,
    workers: usize,
    plots: bool,
) -> Result<(SweepReport, Vec<Summary>)> {
    let configs = values
        .iter()
        .map(|v| cfg.with_override(param, v))
        .collect::<Result<Vec<_>>>()?;
    let plots = plots || cfg.emit_plots;
    let summaries = with_workers(workers, || {
        configs
            .par_iter()
            .zip(values)
            .map(|(c, v)| {
                let dir = out.join(format!("{param}={v}"));
                let ctx = Context::new(c)?;
                let stability = stability_phase(c, &ctx)?;
                let c_hat = stability.report.fit.map(|f| f.c_hat);
                let convergence = convergence_phase(c, &ctx, chi_for(c, &ctx, c_hat))?;
                Ok((c, dir, ctx, stability, convergence))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut points = Vec::new();
    let mut results = Vec::new();
    let mut root = Bundle::new(out)?;
    for ((c, dir, ctx, stability, convergence), value) in summaries.into_iter().zip(values) {
        let summary = write_bundle(
            c,
            Command::Run,
            &dir,
            &ctx,
            Some(stability),
            Some(convergence),
            plots,
        )?;
        let rel = format!("{param}={value}");
        let manifest_bytes = std::fs::read(dir.join("manifest.json"))?;
        root.files.push(FileEntry {
            path: format!("{rel}/manifest.json"),
            sha256: hex::encode(Sha256::digest(&manifest_bytes)),
            bytes: manifest_bytes.len(),
        });
        let fit = summary.stability.as_ref().and_then(|s| s.fit);
        points.push(SweepPoint {
            value: value.clone(),
            dir: rel,
            config_hash: c.hash(),
            slope: fit.map(|f| f.slope),
            r_squared: fit.map(|f| f.r_squared),
            c_hat: fit.map(|f| f.c_hat),
            converged: summary.convergence.as_ref().map(|r| r.converged),
            aborted: summary.aborted(),
        });
        results.push(summary);
    }
    let report = SweepReport {
        param: param.to_string(),
        points,
    };
    root.write("config.toml", cfg.to_toml().as_bytes())?;
    root.write_json("sweep.json", &report)?;
    root.finish(cfg, Command::Sweep, Vec::new())?;
    Ok((report, results))
}

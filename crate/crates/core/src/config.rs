//! Experiment configuration: one TOML document per experiment.
//!
//! ```toml
//! name = "default"
//! n_steps = 100000
//! replicates = 20
//! seed = 1
//! loss = "square"
//!
//! [distribution]
//! kind = "linear-gaussian"
//! dim = 10
//! noise_sigma = 0.5
//!
//! [constraint]
//! kind = "ball"
//! radius = 2.0
//!
//! [schedule]
//! a = 0.5
//! b = 1.0
//! alpha = 1.0
//! ```
//!
//! Every key has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::losses::LossModel;
use crate::model::{make_linear_gaussian, make_logistic_gaussian};
use crate::monitor::{ChiModel, Lyapunov};
use crate::problem::Problem;
use crate::sets::ConvexSet;
use crate::sgd::{
    geometric_checkpoints, geometric_indices, robbins_monro_check, RecordPolicy, StepSchedule,
};
use crate::vector::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    LinearGaussian,
    LogisticGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub dim: usize,
    /// Defaults to `(1, ..., 1) / sqrt(dim)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_star: Option<Vec<f64>>,
    /// Ignored by the logistic family.
    pub noise_sigma: f64,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        Self {
            kind: DistributionKind::LinearGaussian,
            dim: 10,
            w_star: None,
            noise_sigma: 0.5,
        }
    }
}

/// Constraint set in config form. Boxes are the same interval in every
/// coordinate and a missing ball center is the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSpec {
    WholeSpace,
    Ball {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Box {
        lo: f64,
        hi: f64,
    },
    Simplex {
        scale: f64,
    },
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec::Ball {
            radius: 2.0,
            center: None,
        }
    }
}

impl ConstraintSpec {
    pub fn build(&self, dim: usize) -> Result<ConvexSet> {
        match self {
            ConstraintSpec::WholeSpace => Ok(ConvexSet::whole_space()),
            ConstraintSpec::Ball { radius, center } => {
                ConvexSet::ball(center.clone().unwrap_or_else(|| vec![0.0; dim]), *radius)
            }
            ConstraintSpec::Box { lo, hi } => ConvexSet::boxed(vec![*lo; dim], vec![*hi; dim]),
            ConstraintSpec::Simplex { scale } => ConvexSet::simplex(*scale),
            ConstraintSpec::Halfspace { normal, offset } => {
                ConvexSet::halfspace(normal.clone(), *offset)
            }
        }
    }
}

/// Which iterates are kept and written to the trajectory CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RecordSpec {
    /// `per_decade` log-spaced indices per factor of ten.
    Geometric { per_decade: usize },
    /// Every `every`-th iterate.
    Stride { every: usize },
    /// Every iterate up to 10^4, then 20 per decade.
    DensePrefix,
}

impl Default for RecordSpec {
    fn default() -> Self {
        RecordSpec::Geometric { per_decade: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    /// Fresh draws per checkpoint.
    pub m: usize,
    pub checkpoints: usize,
    /// Checkpoints are log-spaced over `[start_fraction * n_steps, n_steps)`.
    pub start_fraction: f64,
    /// Probe points for the loss constants.
    pub probes: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            m: 10_000,
            checkpoints: 20,
            start_fraction: 0.1,
            probes: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChiKind {
    /// `chi_n` from the converse bound with the fitted stability constant.
    Converse,
    /// `beta_n = chi_n = D gamma_n^2` from the growth constant.
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovKind {
    /// `|f_n - f_K|^2`
    NormSquared,
    /// `I(f_n) - I(f_K)`; needs a loss with a Hessian.
    ExcessRisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceOptions {
    /// Excess-risk level of the consistency curve.
    pub epsilon: f64,
    /// A replicate converged when `|f_N - f_K|` is below this.
    pub norm_threshold: f64,
    pub chi: ChiKind,
    /// What the Robbins-Siegmund series track as `V_n`.
    pub lyapunov: LyapunovKind,
    /// Projection activity is measured over the last `tail_fraction` of
    /// steps.
    pub tail_fraction: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            norm_threshold: 0.1,
            chi: ChiKind::Converse,
            lyapunov: LyapunovKind::NormSquared,
            tail_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloOptions {
    /// Draws per risk evaluation without a closed form.
    pub draws: usize,
    /// Samples used to locate `f_K` numerically when it has no closed form.
    pub reference_samples: usize,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            draws: 100_000,
            reference_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_steps: usize,
    pub replicates: usize,
    /// Replicate `r` runs with seed `seed + r`.
    pub seed: u64,
    pub allow_non_rm: bool,
    pub emit_plots: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub loss: LossModel,
    pub distribution: DistributionSpec,
    pub constraint: ConstraintSpec,
    pub schedule: StepSchedule,
    pub record: RecordSpec,
    pub stability: StabilityOptions,
    pub convergence: ConvergenceOptions,
    pub monte_carlo: MonteCarloOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            n_steps: 100_000,
            replicates: 20,
            seed: 1,
            allow_non_rm: false,
            emit_plots: false,
            output_dir: None,
            loss: LossModel::Square,
            distribution: DistributionSpec::default(),
            constraint: ConstraintSpec::default(),
            schedule: StepSchedule::default(),
            record: RecordSpec::default(),
            stability: StabilityOptions::default(),
            convergence: ConvergenceOptions::default(),
            monte_carlo: MonteCarloOptions::default(),
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> LabError {
    LabError::Config(format!("{field}: {msg}"))
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::read(path)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Parses without the semantic checks of [`Self::validate`], so that
    /// overrides can be applied first.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    /// [`Self::from_toml`] on a file; errors name the path.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(invalid("n_steps", "must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be >= 1"));
        }
        self.schedule
            .validate()
            .map_err(|e| invalid("schedule", e))?;
        let rm = robbins_monro_check(&self.schedule);
        if !rm.pass && !self.allow_non_rm {
            let why = if rm.divergent_sum {
                "sum of gamma_n^2 diverges"
            } else {
                "sum of gamma_n converges"
            };
            return Err(invalid(
                "schedule.alpha",
                format!(
                    "alpha = {} violates the Robbins-Monro condition ({why}); set allow_non_rm = true to run it anyway",
                    self.schedule.alpha
                ),
            ));
        }
        let dim = self.distribution.dim;
        if dim == 0 {
            return Err(invalid("distribution.dim", "must be >= 1"));
        }
        if let Some(w) = &self.distribution.w_star {
            if w.len() != dim {
                return Err(invalid(
                    "distribution.w_star",
                    format!("has {} entries but dim = {dim}", w.len()),
                ));
            }
        }
        if !(self.distribution.noise_sigma.is_finite() && self.distribution.noise_sigma >= 0.0) {
            return Err(invalid(
                "distribution.noise_sigma",
                "must be finite and >= 0",
            ));
        }
        let set = self
            .constraint
            .build(dim)
            .map_err(|e| invalid("constraint", e))?;
        if let Some(d) = set.dimension() {
            if d != dim {
                return Err(invalid(
                    "constraint",
                    format!("has dimension {d} but distribution.dim = {dim}"),
                ));
            }
        }
        if let RecordSpec::Geometric { per_decade: 0 } = self.record {
            return Err(invalid("record.per_decade", "must be >= 1"));
        }
        if let RecordSpec::Stride { every: 0 } = self.record {
            return Err(invalid("record.every", "must be >= 1"));
        }
        let st = &self.stability;
        if st.m < 2 {
            return Err(invalid("stability.m", "must be >= 2"));
        }
        if st.checkpoints == 0 {
            return Err(invalid("stability.checkpoints", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&st.start_fraction) {
            return Err(invalid("stability.start_fraction", "must lie in [0, 1)"));
        }
        if st.probes == 0 {
            return Err(invalid("stability.probes", "must be >= 1"));
        }
        let cv = &self.convergence;
        if !(cv.epsilon.is_finite() && cv.epsilon > 0.0) {
            return Err(invalid("convergence.epsilon", "must be > 0"));
        }
        if !(cv.norm_threshold.is_finite() && cv.norm_threshold > 0.0) {
            return Err(invalid("convergence.norm_threshold", "must be > 0"));
        }
        if !(cv.tail_fraction > 0.0 && cv.tail_fraction <= 1.0) {
            return Err(invalid("convergence.tail_fraction", "must lie in (0, 1]"));
        }
        if cv.lyapunov == LyapunovKind::ExcessRisk && !self.loss.twice_differentiable() {
            return Err(invalid(
                "convergence.lyapunov",
                "excess-risk needs a twice differentiable loss",
            ));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        let dim = self.distribution.dim;
        let w = self
            .distribution
            .w_star
            .clone()
            .unwrap_or_else(|| vec![1.0 / (dim as f64).sqrt(); dim]);
        let w = ParameterVector::new(w)?;
        let dist = match self.distribution.kind {
            DistributionKind::LinearGaussian => {
                make_linear_gaussian(w, self.distribution.noise_sigma)?
            }
            DistributionKind::LogisticGaussian => make_logistic_gaussian(w)?,
        };
        Ok(Problem {
            dist,
            loss: self.loss,
            set: self.constraint.build(dim)?,
            schedule: self.schedule,
        })
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    pub fn record_policy(&self) -> RecordPolicy {
        match self.record {
            RecordSpec::Geometric { per_decade } => {
                let mut idx = vec![0];
                idx.extend(geometric_indices(1, self.n_steps, per_decade));
                RecordPolicy::Indices(idx)
            }
            RecordSpec::Stride { every } => RecordPolicy::Stride(every),
            RecordSpec::DensePrefix => RecordPolicy::Default,
        }
    }

    /// Stability checkpoints, log-spaced over the configured window.
    pub fn stability_checkpoints(&self) -> Vec<usize> {
        let start = ((self.n_steps as f64 * self.stability.start_fraction) as usize).max(1);
        geometric_checkpoints(
            start.min(self.n_steps - 1),
            self.n_steps - 1,
            self.stability.checkpoints,
        )
    }

    /// `None` when excess risk is requested without a curvature bound.
    pub fn lyapunov(&self, hessian_bound: Option<f64>) -> Option<Lyapunov> {
        match self.convergence.lyapunov {
            LyapunovKind::NormSquared => Some(Lyapunov::NormSquared),
            LyapunovKind::ExcessRisk => {
                hessian_bound.map(|smoothness| Lyapunov::ExcessRisk { smoothness })
            }
        }
    }

    pub fn chi_model(&self, c_hat: f64, hessian_bound: Option<f64>, growth: f64) -> ChiModel {
        match (self.convergence.chi, hessian_bound) {
            (ChiKind::Converse, Some(m)) => ChiModel::Converse {
                c: c_hat,
                hessian_bound: m,
            },
            _ => ChiModel::Growth { d: growth },
        }
    }

    /// Canonical TOML form. Formatting and key order in the source file do
    /// not affect it.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Copy with the dotted key `path` set to `value`, which is read as a
    /// TOML value and otherwise as a bare string.
    pub fn with_override(&self, path: &str, value: &str) -> Result<Self> {
        let mut root = toml::Table::try_from(self).map_err(|e| LabError::Config(e.to_string()))?;
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(invalid(path, "malformed parameter path"));
        }
        let (last, parents) = keys.split_last().expect("split yields at least one key");
        let mut table = &mut root;
        for key in parents {
            let entry = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| invalid(path, format!("`{key}` is not a table")))?;
        }
        table.insert(last.to_string(), parsed);
        let cfg: ExperimentConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| invalid(path, e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.replicates, 20);
        assert_eq!(cfg.problem().unwrap().dim(), 10);
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
        let reordered = "seed = 1\nname = \"default\"\n";
        assert_eq!(parse_config(reordered).unwrap().hash(), cfg.hash());
    }

    #[test]
    fn non_rm_schedule_needs_flag() {
        let text = "[schedule]\na = 0.5\nb = 1.0\nalpha = 0.4\n";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("Robbins-Monro"), "{err}");
        let ok = format!("allow_non_rm = true\n{text}");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("momentum = 0.9\n").unwrap_err().to_string();
        assert!(err.contains("momentum"), "{err}");
        assert!(parse_config("[schedule]\na = 1\nb = 1\nalpha = 1\ngamma0 = 2\n").is_err());
    }

    #[test]
    fn diagnostics_carry_location() {
        let err = parse_config("n_steps = \"many\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(parse_config("n_steps = 0\n").is_err());
    }

    #[test]
    fn override_by_path() {
        let cfg = ExperimentConfig::default();
        let c = cfg.with_override("schedule.alpha", "0.75").unwrap();
        assert_eq!(c.schedule.alpha, 0.75);
        let c = cfg.with_override("name", "sweep-a").unwrap();
        assert_eq!(c.name, "sweep-a");
        assert!(cfg.with_override("schedule.alpha", "0.3").is_err());
        assert!(cfg.with_override("schedule.momentum", "1").is_err());
        assert!(cfg.with_override("n_steps.x", "1").is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = "[distribution]\ndim = 3\nw_star = [1.0, 2.0]\n";
        assert!(parse_config(text).is_err());
        let text = "[constraint]\nkind = \"ball\"\nradius = 1.0\ncenter = [0.0, 0.0]\n";
        assert!(parse_config(text).is_err());
    }
}

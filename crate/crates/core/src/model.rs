//! Synthetic data distributions, datasets and risk evaluation.
//!
//! The linear-gaussian family draws `x ~ N(0, I_p)` and
//! `y = <w*, x> + sigma * eps` with `eps ~ N(0, 1)`. Under the square loss its
//! expected risk is exactly `|f - w*|^2 + sigma^2`, so the constrained
//! minimizer over any closed convex `K` is the projection of `w*`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::losses::LossModel;
use crate::rng::{normal, normal_vec, streams, Stream};
use crate::sets::ConvexSet;
use crate::stats::Running;
use crate::vector::{ParameterVector, Sample};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataDistribution {
    /// `y = <w*, x> + sigma * eps`
    LinearGaussian {
        w_star: ParameterVector,
        noise_sigma: f64,
    },
    /// `y = +1` with probability `1 / (1 + exp(-<w*, x>))`, else `-1`.
    LogisticGaussian { w_star: ParameterVector },
    /// Uniform resampling from a fixed list.
    Empirical { samples: Vec<Sample> },
}

pub fn make_linear_gaussian(w_star: ParameterVector, noise_sigma: f64) -> Result<DataDistribution> {
    if !noise_sigma.is_finite() || !w_star.is_finite() {
        return Err(LabError::NonFinite("linear-gaussian parameters"));
    }
    if noise_sigma < 0.0 {
        return Err(LabError::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    Ok(DataDistribution::LinearGaussian {
        w_star,
        noise_sigma,
    })
}

pub fn make_logistic_gaussian(w_star: ParameterVector) -> Result<DataDistribution> {
    if !w_star.is_finite() {
        return Err(LabError::NonFinite("logistic-gaussian parameters"));
    }
    Ok(DataDistribution::LogisticGaussian { w_star })
}

pub fn make_empirical(samples: Vec<Sample>) -> Result<DataDistribution> {
    let first = samples.first().ok_or(LabError::EmptyDataset)?;
    let dim = first.dim();
    if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
        return Err(LabError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    Ok(DataDistribution::Empirical { samples })
}

impl DataDistribution {
    pub fn dim(&self) -> usize {
        match self {
            DataDistribution::LinearGaussian { w_star, .. }
            | DataDistribution::LogisticGaussian { w_star } => w_star.dim(),
            DataDistribution::Empirical { samples } => samples[0].dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DataDistribution::LinearGaussian { .. } => "linear-gaussian",
            DataDistribution::LogisticGaussian { .. } => "logistic-gaussian",
            DataDistribution::Empirical { .. } => "custom-empirical",
        }
    }

    pub fn w_star(&self) -> Option<&ParameterVector> {
        match self {
            DataDistribution::LinearGaussian { w_star, .. }
            | DataDistribution::LogisticGaussian { w_star } => Some(w_star),
            DataDistribution::Empirical { .. } => None,
        }
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        match self {
            DataDistribution::LinearGaussian { noise_sigma, .. } => Some(*noise_sigma),
            _ => None,
        }
    }

    /// Whether [`true_minimizer`] has a closed form for this loss.
    pub fn analytic_minimizer_available(&self, loss: LossModel) -> bool {
        matches!(
            (self, loss),
            (DataDistribution::LinearGaussian { .. }, LossModel::Square)
        )
    }

    /// Draw `index` of an arbitrary stream.
    pub fn draw_from(&self, stream: &Stream, index: u64) -> Sample {
        let mut rng = stream.at(index);
        match self {
            DataDistribution::LinearGaussian {
                w_star,
                noise_sigma,
            } => {
                let x = normal_vec(&mut rng, w_star.dim());
                let eps = normal(&mut rng);
                let y = crate::vector::dot(w_star.as_slice(), &x) + noise_sigma * eps;
                Sample { x, y }
            }
            DataDistribution::LogisticGaussian { w_star } => {
                let x = normal_vec(&mut rng, w_star.dim());
                let score = crate::vector::dot(w_star.as_slice(), &x);
                let p = 1.0 / (1.0 + (-score).exp());
                let y = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                Sample { x, y }
            }
            DataDistribution::Empirical { samples } => {
                let i = rng.random_range(0..samples.len());
                samples[i].clone()
            }
        }
    }
}

/// Sample `index` of the online stream for `seed`.
pub fn draw(dist: &DataDistribution, seed: u64, index: u64) -> Sample {
    dist.draw_from(&Stream::new(seed, streams::TRAJECTORY), index)
}

/// Ordered sample `S_n = z_0, ..., z_{n-1}`. Order is the online
/// presentation order and is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub origin: String,
}

impl Dataset {
    /// The first `n` samples of the online stream for `seed`; the same
    /// points an SGD run with that seed consumes.
    pub fn generate(dist: &DataDistribution, n: usize, seed: u64) -> Self {
        let stream = Stream::new(seed, streams::TRAJECTORY);
        Self {
            samples: (0..n as u64).map(|i| dist.draw_from(&stream, i)).collect(),
            seed,
            origin: dist.name().to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Monte Carlo budget for risks without a closed form. `draws == 0` means
/// no budget is configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 0,
        }
    }
}

impl MonteCarlo {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self { draws, seed }
    }

    pub fn disabled() -> Self {
        Self { draws: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Zero for exact evaluations.
    pub std_error: f64,
    /// Monte Carlo sample count; zero for exact evaluations.
    pub draws: usize,
}

impl RiskEstimate {
    pub fn is_exact(&self) -> bool {
        self.draws == 0
    }

    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            draws: 0,
        }
    }
}

/// `I(f) = E_z V(f, z)`.
///
/// Exact for (linear-gaussian, square) and for empirical distributions;
/// otherwise a Monte Carlo mean on the risk stream of `mc.seed`. A fixed
/// risk stream means two evaluations at different `f` share draws, which
/// keeps risk differences low-variance.
pub fn expected_risk(
    dist: &DataDistribution,
    loss: LossModel,
    f: &ParameterVector,
    mc: &MonteCarlo,
) -> Result<RiskEstimate> {
    f.check_dim(dist.dim())?;
    match (dist, loss) {
        (
            DataDistribution::LinearGaussian {
                w_star,
                noise_sigma,
            },
            LossModel::Square,
        ) => Ok(RiskEstimate::exact(
            f.sub(w_star).norm_sq() + noise_sigma * noise_sigma,
        )),
        (DataDistribution::Empirical { samples }, _) => {
            let mut acc = 0.0;
            for z in samples {
                acc += loss.value(f, z)?;
            }
            Ok(RiskEstimate::exact(acc / samples.len() as f64))
        }
        _ => {
            if mc.draws == 0 {
                return Err(LabError::NoRiskBudget);
            }
            let stream = Stream::new(mc.seed, streams::RISK);
            let mut acc = Running::default();
            for i in 0..mc.draws as u64 {
                acc.push(loss.value(f, &dist.draw_from(&stream, i))?);
            }
            Ok(RiskEstimate {
                value: acc.mean(),
                std_error: acc.std_error(),
                draws: mc.draws,
            })
        }
    }
}

/// `grad I(f) = E_z grad V(f, z)`; closed form where [`expected_risk`] has
/// one, otherwise a Monte Carlo mean of (sub)gradients.
pub fn risk_gradient(
    dist: &DataDistribution,
    loss: LossModel,
    f: &ParameterVector,
    mc: &MonteCarlo,
) -> Result<ParameterVector> {
    f.check_dim(dist.dim())?;
    match (dist, loss) {
        (DataDistribution::LinearGaussian { w_star, .. }, LossModel::Square) => {
            Ok(f.sub(w_star).scale(2.0))
        }
        (DataDistribution::Empirical { samples }, _) => {
            let mut acc = ParameterVector::zeros(f.dim());
            for z in samples {
                acc = acc.add(&loss.subgradient(f, z)?);
            }
            Ok(acc.scale(1.0 / samples.len() as f64))
        }
        _ => {
            if mc.draws == 0 {
                return Err(LabError::NoRiskBudget);
            }
            let stream = Stream::new(mc.seed, streams::RISK);
            let mut acc = ParameterVector::zeros(f.dim());
            for i in 0..mc.draws as u64 {
                acc = acc.add(&loss.subgradient(f, &dist.draw_from(&stream, i))?);
            }
            Ok(acc.scale(1.0 / mc.draws as f64))
        }
    }
}

/// `I_n(f)`: mean loss over the dataset.
pub fn empirical_risk(loss: LossModel, f: &ParameterVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(LabError::EmptyDataset);
    }
    let mut acc = 0.0;
    for z in &data.samples {
        acc += loss.value(f, z)?;
    }
    Ok(acc / data.len() as f64)
}

/// `f_K = argmin_{f in K} I(f)`, when it has a closed form.
pub fn true_minimizer(
    dist: &DataDistribution,
    loss: LossModel,
    k: &ConvexSet,
) -> Result<ParameterVector> {
    match (dist, loss) {
        (DataDistribution::LinearGaussian { w_star, .. }, LossModel::Square) => k.project(w_star),
        _ => Err(LabError::NoAnalyticMinimizer(format!(
            "{} with {} loss",
            dist.name(),
            loss.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_truth_noiseless_gives_zero_labels() {
        let d = make_linear_gaussian(pv(&[0.0, 0.0]), 0.0).unwrap();
        for i in 0..100 {
            assert_eq!(draw(&d, 3, i).y, 0.0);
        }
    }

    #[test]
    fn noiseless_label_is_linear_map() {
        let d = make_linear_gaussian(pv(&[1.0, 0.0]), 0.0).unwrap();
        for i in 0..20 {
            let z = draw(&d, 9, i);
            assert_eq!(z.y, z.x[0]);
        }
    }

    #[test]
    fn rejects_bad_noise() {
        assert!(make_linear_gaussian(pv(&[1.0]), -0.1).is_err());
        assert!(make_linear_gaussian(pv(&[1.0]), f64::NAN).is_err());
    }

    #[test]
    fn draw_is_deterministic_and_index_sensitive() {
        let d = make_linear_gaussian(pv(&[1.0, 2.0]), 0.5).unwrap();
        let a = draw(&d, 1, 0);
        let b = draw(&d, 1, 0);
        assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_ne!(a, draw(&d, 1, 1));
    }

    #[test]
    fn closed_form_risks() {
        let d = make_linear_gaussian(pv(&[1.0, -1.0]), 0.5).unwrap();
        let r = expected_risk(
            &d,
            LossModel::Square,
            &pv(&[1.0, -1.0]),
            &MonteCarlo::disabled(),
        )
        .unwrap();
        assert!(r.is_exact());
        assert_eq!(r.value, 0.25);
        let d0 = make_linear_gaussian(pv(&[1.0, -1.0]), 0.0).unwrap();
        let r = expected_risk(
            &d0,
            LossModel::Square,
            &pv(&[2.0, -1.0]),
            &MonteCarlo::disabled(),
        )
        .unwrap();
        assert_eq!(r.value, 1.0);
        let r = expected_risk(
            &d0,
            LossModel::Square,
            &pv(&[1.0, -1.0]),
            &MonteCarlo::disabled(),
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn missing_budget_signaled() {
        let d = make_logistic_gaussian(pv(&[1.0])).unwrap();
        let err = expected_risk(
            &d,
            LossModel::Logistic,
            &pv(&[0.0]),
            &MonteCarlo::disabled(),
        );
        assert!(matches!(err, Err(LabError::NoRiskBudget)));
    }

    #[test]
    fn empirical_risk_cases() {
        let d = make_linear_gaussian(pv(&[0.3, 0.7]), 0.0).unwrap();
        let one = Dataset::generate(&d, 1, 5);
        let f = pv(&[1.0, 1.0]);
        assert_eq!(
            empirical_risk(LossModel::Square, &f, &one).unwrap(),
            LossModel::Square.value(&f, &one.samples[0]).unwrap()
        );
        let many = Dataset::generate(&d, 50, 5);
        assert_eq!(
            empirical_risk(LossModel::Square, &pv(&[0.3, 0.7]), &many).unwrap(),
            0.0
        );
        let empty = Dataset {
            samples: vec![],
            seed: 0,
            origin: "none".into(),
        };
        assert!(matches!(
            empirical_risk(LossModel::Square, &f, &empty),
            Err(LabError::EmptyDataset)
        ));
    }

    #[test]
    fn minimizer_cases() {
        let d = make_linear_gaussian(pv(&[2.0, 0.0]), 0.1).unwrap();
        let whole = true_minimizer(&d, LossModel::Square, &ConvexSet::whole_space()).unwrap();
        assert_eq!(whole.as_slice(), &[2.0, 0.0]);
        let ball = ConvexSet::centered_ball(2, 1.0).unwrap();
        let fk = true_minimizer(&d, LossModel::Square, &ball).unwrap();
        assert_eq!(fk.as_slice(), &[1.0, 0.0]);
        let big = ConvexSet::centered_ball(2, 5.0).unwrap();
        assert_eq!(
            true_minimizer(&d, LossModel::Square, &big)
                .unwrap()
                .as_slice(),
            &[2.0, 0.0]
        );
        let lg = make_logistic_gaussian(pv(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            true_minimizer(&lg, LossModel::Logistic, &ball),
            Err(LabError::NoAnalyticMinimizer(_))
        ));
    }

    #[test]
    fn risk_gradient_vanishes_at_unconstrained_minimizer() {
        let d = make_linear_gaussian(pv(&[0.4, -1.2, 3.0]), 0.7).unwrap();
        let fk = true_minimizer(&d, LossModel::Square, &ConvexSet::whole_space()).unwrap();
        let g = risk_gradient(&d, LossModel::Square, &fk, &MonteCarlo::disabled()).unwrap();
        assert!(g.as_slice().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn logistic_labels_are_signs() {
        let d = make_logistic_gaussian(pv(&[0.5, 0.5])).unwrap();
        for i in 0..50 {
            let y = draw(&d, 2, i).y;
            assert!(y == 1.0 || y == -1.0);
        }
    }
}

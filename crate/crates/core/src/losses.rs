//! Per-sample losses `V(f, z)` for linear predictors, with gradient,
//! subgradient and Hessian oracles.
//!
//! Every shipped loss has a rank-one Hessian `c(f, z) * x x^T`, so Hessians
//! are exposed only through matrix-free products; nothing here allocates a
//! `p x p` matrix.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::DataDistribution;
use crate::rng::{normal_vec, streams, Stream};
use crate::sets::ConvexSet;
use crate::stats::Running;
use crate::vector::{dot, ParameterVector, Sample};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossModel {
    /// `(y - <f, x>)^2`
    Square,
    /// `log(1 + exp(-y <f, x>))`
    Logistic,
    /// `max(0, 1 - y <f, x>)`
    Hinge,
}

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

fn log1p_exp_neg(m: f64) -> f64 {
    // log(1 + e^{-m}) without overflow
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    pub fn name(self) -> &'static str {
        match self {
            LossModel::Square => "square",
            LossModel::Logistic => "logistic",
            LossModel::Hinge => "hinge",
        }
    }

    pub fn convex(self) -> bool {
        true
    }

    pub fn twice_differentiable(self) -> bool {
        !matches!(self, LossModel::Hinge)
    }

    fn check(f: &ParameterVector, z: &Sample) -> Result<()> {
        f.check_dim(z.dim())
    }

    pub fn value(self, f: &ParameterVector, z: &Sample) -> Result<f64> {
        Self::check(f, z)?;
        let pred = z.predict(f);
        Ok(match self {
            LossModel::Square => {
                let r = z.y - pred;
                r * r
            }
            LossModel::Logistic => log1p_exp_neg(z.y * pred),
            LossModel::Hinge => (1.0 - z.y * pred).max(0.0),
        })
    }

    /// Scalar `s` with `grad V(f, z) = s * x`.
    fn gradient_scale(self, f: &ParameterVector, z: &Sample) -> f64 {
        let pred = z.predict(f);
        match self {
            LossModel::Square => -2.0 * (z.y - pred),
            LossModel::Logistic => -z.y * sigmoid(-z.y * pred),
            LossModel::Hinge => {
                if z.y * pred < 1.0 {
                    -z.y
                } else {
                    0.0
                }
            }
        }
    }

    /// Analytic gradient. The hinge loss is rejected exactly at its kink.
    pub fn gradient(self, f: &ParameterVector, z: &Sample) -> Result<ParameterVector> {
        Self::check(f, z)?;
        if self == LossModel::Hinge && z.y * z.predict(f) == 1.0 {
            return Err(LabError::NotDifferentiable("hinge"));
        }
        Ok(self.scaled_x(self.gradient_scale(f, z), z))
    }

    /// A subgradient. Equals [`gradient`](Self::gradient) wherever the loss
    /// is differentiable; at the hinge kink returns the zero vector.
    pub fn subgradient(self, f: &ParameterVector, z: &Sample) -> Result<ParameterVector> {
        Self::check(f, z)?;
        Ok(self.scaled_x(self.gradient_scale(f, z), z))
    }

    fn scaled_x(self, s: f64, z: &Sample) -> ParameterVector {
        ParameterVector::from_vec_unchecked(z.x.iter().map(|x| s * x).collect())
    }

    /// Curvature `c` with `H(V(f, z)) = c * x x^T`.
    fn curvature(self, f: &ParameterVector, z: &Sample) -> Result<f64> {
        match self {
            LossModel::Square => Ok(2.0),
            LossModel::Logistic => {
                let m = z.y * z.predict(f);
                Ok(z.y * z.y * sigmoid(m) * sigmoid(-m))
            }
            LossModel::Hinge => Err(LabError::NoHessian("hinge")),
        }
    }

    /// Hessian-vector product `H(V(f, z)) v`.
    pub fn hessian_apply(
        self,
        f: &ParameterVector,
        z: &Sample,
        v: &ParameterVector,
    ) -> Result<ParameterVector> {
        Self::check(f, z)?;
        v.check_dim(z.dim())?;
        let c = self.curvature(f, z)?;
        Ok(self.scaled_x(c * dot(&z.x, v.as_slice()), z))
    }

    /// `<u, H(V(f, z)) v>`
    pub fn hessian_quadratic_form(
        self,
        f: &ParameterVector,
        z: &Sample,
        u: &ParameterVector,
        v: &ParameterVector,
    ) -> Result<f64> {
        Self::check(f, z)?;
        u.check_dim(z.dim())?;
        v.check_dim(z.dim())?;
        let c = self.curvature(f, z)?;
        Ok(c * dot(&z.x, u.as_slice()) * dot(&z.x, v.as_slice()))
    }

    /// Largest relative error between the analytic gradient and a central
    /// difference with step `h`, normalised by `max(1, |g_i|)`.
    pub fn check_gradient_fd(self, f: &ParameterVector, z: &Sample, h: f64) -> Result<f64> {
        if h.is_nan() || h <= 0.0 {
            return Err(LabError::InvalidArgument(
                "finite-difference step must be > 0".into(),
            ));
        }
        let g = self.gradient(f, z)?;
        let mut worst = 0.0f64;
        for i in 0..f.dim() {
            let e = ParameterVector::basis(f.dim(), i, h);
            let fd = (self.value(&f.add(&e), z)? - self.value(&f.sub(&e), z)?) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1.0));
        }
        Ok(worst)
    }
}

/// Empirical constants from probing. All three are lower bounds on the true
/// suprema, which are unobservable in general.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// `max |grad V(f, z)|` over the probe grid.
    pub lipschitz: f64,
    /// Radius of the ball around `f_K` the probes were drawn from.
    pub probe_radius: f64,
    /// `max |H(V(f, z))|` by power iteration; `None` for the hinge loss.
    pub hessian_bound: Option<f64>,
    /// `max E_z |grad V(f, z)|^2 / (1 + |f - f_K|^2)`.
    pub growth: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub probes: usize,
    /// Fresh draws for the inner expectation in the growth constant.
    pub inner_draws: usize,
    /// Probe radius around `f_K`; defaults to the diameter of `K`, or
    /// `2 (1 + |f_K|)` for unbounded sets.
    pub radius: Option<f64>,
    pub seed: u64,
}

impl ProbeOptions {
    pub fn new(probes: usize, seed: u64) -> Self {
        Self {
            probes,
            inner_draws: 1000,
            radius: None,
            seed,
        }
    }
}

/// Operator norm of a PSD matrix given only through its products.
fn power_iteration(
    apply: impl Fn(&ParameterVector) -> Result<ParameterVector>,
    dim: usize,
) -> Result<f64> {
    let mut v = ParameterVector::from_vec_unchecked(vec![1.0 / (dim as f64).sqrt(); dim]);
    let mut estimate = 0.0;
    for _ in 0..100 {
        let w = apply(&v)?;
        let n = w.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        let done = (n - estimate).abs() <= 1e-13 * n;
        estimate = n;
        v = w.scale(1.0 / n);
        if done {
            break;
        }
    }
    Ok(estimate)
}

pub fn estimate_constants(
    loss: LossModel,
    k: &ConvexSet,
    dist: &DataDistribution,
    f_k: &ParameterVector,
    probes: usize,
    seed: u64,
) -> Result<LossConstants> {
    estimate_constants_with(loss, k, dist, f_k, &ProbeOptions::new(probes, seed))
}

/// Probe `i` is a function of `(seed, i)` only, so raising `probes` only
/// adds points and the running maxima never decrease.
pub fn estimate_constants_with(
    loss: LossModel,
    k: &ConvexSet,
    dist: &DataDistribution,
    f_k: &ParameterVector,
    opts: &ProbeOptions,
) -> Result<LossConstants> {
    if opts.probes == 0 {
        return Err(LabError::InvalidArgument("probes must be >= 1".into()));
    }
    let dim = dist.dim();
    f_k.check_dim(dim)?;
    let radius = opts
        .radius
        .or_else(|| k.diameter())
        .unwrap_or(2.0 * (1.0 + f_k.norm()));
    let points = Stream::new(opts.seed, streams::constants(0));
    let samples = Stream::new(opts.seed, streams::constants(1));

    let mut fs = Vec::with_capacity(opts.probes);
    let mut zs = Vec::with_capacity(opts.probes);
    for i in 0..opts.probes as u64 {
        let f = if i == 0 {
            f_k.clone()
        } else {
            let mut rng = points.at(i);
            let dir = ParameterVector::from_vec_unchecked(normal_vec(&mut rng, dim));
            let r = radius * rng.random::<f64>();
            let n = dir.norm().max(f64::MIN_POSITIVE);
            k.project(&f_k.axpy(r / n, &dir))?
        };
        fs.push(f);
        zs.push(dist.draw_from(&samples, i));
    }

    let mut lipschitz = 0.0f64;
    for f in &fs {
        for z in &zs {
            lipschitz = lipschitz.max(loss.subgradient(f, z)?.norm());
        }
    }

    let hessian_bound = if loss.twice_differentiable() {
        let mut m = 0.0f64;
        for (f, z) in fs.iter().zip(&zs) {
            m = m.max(power_iteration(|v| loss.hessian_apply(f, z, v), dim)?);
        }
        Some(m)
    } else {
        None
    };

    let mut growth = 0.0f64;
    for (i, f) in fs.iter().enumerate() {
        let inner = Stream::new(opts.seed, streams::constants(2 + i as u64));
        let mut acc = Running::default();
        for j in 0..opts.inner_draws as u64 {
            acc.push(loss.subgradient(f, &dist.draw_from(&inner, j))?.norm_sq());
        }
        growth = growth.max(acc.mean() / (1.0 + f.sub(f_k).norm_sq()));
    }

    Ok(LossConstants {
        lipschitz,
        probe_radius: radius,
        hessian_bound,
        growth,
        probes: opts.probes,
    })
}

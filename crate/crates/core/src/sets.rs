//! Closed convex constraint sets with exact Euclidean projections.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::vector::{dot, ParameterVector};

/// Constraint set `K`. Nonempty, closed and convex by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConvexSet {
    WholeSpace,
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{x : x >= 0, sum(x) = scale}`
    Simplex {
        scale: f64,
    },
    /// `{x : <normal, x> <= offset}`
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
}

impl ConvexSet {
    pub fn whole_space() -> Self {
        ConvexSet::WholeSpace
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let k = ConvexSet::Ball { center, radius };
        k.validate()?;
        Ok(k)
    }

    /// Ball of the given radius centred at the origin of `R^dim`.
    pub fn centered_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(vec![0.0; dim], radius)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let k = ConvexSet::Box { lo, hi };
        k.validate()?;
        Ok(k)
    }

    pub fn simplex(scale: f64) -> Result<Self> {
        let k = ConvexSet::Simplex { scale };
        k.validate()?;
        Ok(k)
    }

    pub fn halfspace(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let k = ConvexSet::Halfspace { normal, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LabError::InvalidArgument(msg.to_string()));
        match self {
            ConvexSet::WholeSpace => Ok(()),
            ConvexSet::Ball { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad("ball radius must be finite and > 0");
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return bad("ball center must be finite");
                }
                Ok(())
            }
            ConvexSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return bad("box bounds have different lengths");
                }
                if lo.iter().chain(hi).any(|c| !c.is_finite()) {
                    return bad("box bounds must be finite");
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return bad("box requires lo <= hi in every coordinate");
                }
                Ok(())
            }
            ConvexSet::Simplex { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return bad("simplex scale must be finite and > 0");
                }
                Ok(())
            }
            ConvexSet::Halfspace { normal, offset } => {
                if !offset.is_finite() || normal.iter().any(|c| !c.is_finite()) {
                    return bad("halfspace parameters must be finite");
                }
                if normal.iter().all(|c| *c == 0.0) {
                    return bad("halfspace normal must be nonzero");
                }
                Ok(())
            }
        }
    }

    /// Dimension fixed by the set's parameters, if any.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            ConvexSet::WholeSpace | ConvexSet::Simplex { .. } => None,
            ConvexSet::Ball { center, .. } => Some(center.len()),
            ConvexSet::Box { lo, .. } => Some(lo.len()),
            ConvexSet::Halfspace { normal, .. } => Some(normal.len()),
        }
    }

    fn check(&self, f: &ParameterVector) -> Result<()> {
        match self.dimension() {
            Some(d) => f.check_dim(d),
            None => Ok(()),
        }
    }

    /// Rough size of the set; `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            ConvexSet::WholeSpace | ConvexSet::Halfspace { .. } => None,
            ConvexSet::Ball { radius, .. } => Some(2.0 * radius),
            ConvexSet::Box { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .map(|(l, h)| (h - l) * (h - l))
                    .sum::<f64>()
                    .sqrt(),
            ),
            ConvexSet::Simplex { scale } => Some(std::f64::consts::SQRT_2 * scale),
        }
    }

    /// Euclidean nearest point of `K` to `f`.
    pub fn project(&self, f: &ParameterVector) -> Result<ParameterVector> {
        self.check(f)?;
        let v = f.as_slice();
        let out = match self {
            ConvexSet::WholeSpace => v.to_vec(),
            ConvexSet::Ball { center, radius } => {
                let dist = v
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                if dist <= *radius {
                    v.to_vec()
                } else {
                    let s = radius / dist;
                    v.iter().zip(center).map(|(a, c)| c + s * (a - c)).collect()
                }
            }
            ConvexSet::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(a, (l, h))| a.clamp(*l, *h))
                .collect(),
            ConvexSet::Simplex { scale } => project_simplex(v, *scale),
            ConvexSet::Halfspace { normal, offset } => {
                let excess = dot(normal, v) - offset;
                if excess <= 0.0 {
                    v.to_vec()
                } else {
                    let s = excess / dot(normal, normal);
                    v.iter().zip(normal).map(|(a, n)| a - s * n).collect()
                }
            }
        };
        Ok(ParameterVector::from_vec_unchecked(out))
    }

    /// Euclidean distance from `f` to the set.
    pub fn distance(&self, f: &ParameterVector) -> Result<f64> {
        self.check(f)?;
        let v = f.as_slice();
        Ok(match self {
            ConvexSet::WholeSpace => 0.0,
            ConvexSet::Ball { center, radius } => {
                let d = v
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                (d - radius).max(0.0)
            }
            ConvexSet::Halfspace { normal, offset } => {
                ((dot(normal, v) - offset) / dot(normal, normal).sqrt()).max(0.0)
            }
            _ => f.distance(&self.project(f)?),
        })
    }

    /// `distance(f, K) <= tol`
    pub fn contains(&self, f: &ParameterVector, tol: f64) -> Result<bool> {
        Ok(self.distance(f)? <= tol)
    }

    /// Whether the closed ball of radius `margin` around `f` lies inside `K`.
    ///
    /// The simplex is a (p-1)-dimensional affine slice and has empty interior
    /// in `R^p`, so it never reports an interior point.
    pub fn in_interior(&self, f: &ParameterVector, margin: f64) -> Result<bool> {
        if margin.is_nan() || margin <= 0.0 {
            return Err(LabError::InvalidArgument("margin must be > 0".into()));
        }
        self.check(f)?;
        let v = f.as_slice();
        Ok(match self {
            ConvexSet::WholeSpace => true,
            ConvexSet::Ball { center, radius } => {
                let d = v
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                d + margin <= *radius
            }
            ConvexSet::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(a, (l, h))| *a - margin >= *l && *a + margin <= *h),
            ConvexSet::Simplex { .. } => false,
            ConvexSet::Halfspace { normal, offset } => {
                dot(normal, v) + margin * dot(normal, normal).sqrt() <= *offset
            }
        })
    }
}

/// Sort-and-threshold projection onto `{x >= 0, sum x = scale}`.
fn project_simplex(v: &[f64], scale: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - scale) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|a| (a - theta).max(0.0)).collect()
}

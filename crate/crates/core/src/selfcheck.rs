//! Built-in property suites run by the `check` command.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{LossModel, DEFAULT_FD_STEP};
use crate::rng::{normal, normal_vec, Stream};
use crate::sets::ConvexSet;
use crate::sgd::{robbins_monro_check, StepSchedule};
use crate::stability::taylor_decomposition;
use crate::vector::{ParameterVector, Sample};

const FD_TOLERANCE: f64 = 1e-5;
const PROJECTION_TOLERANCE: f64 = 1e-9;
const TAYLOR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

struct Probe {
    stream: Stream,
    next: u64,
}

impl Probe {
    fn new(seed: u64, tag: u64) -> Self {
        Self {
            stream: Stream::new(seed, 0xC4EC_0000 + tag),
            next: 0,
        }
    }

    fn vector(&mut self, dim: usize, scale: f64) -> ParameterVector {
        let mut rng = self.stream.at(self.next);
        self.next += 1;
        ParameterVector::from_vec_unchecked(
            normal_vec(&mut rng, dim)
                .into_iter()
                .map(|x| x * scale)
                .collect(),
        )
    }

    fn sample(&mut self, dim: usize) -> Sample {
        let mut rng = self.stream.at(self.next);
        self.next += 1;
        let x = normal_vec(&mut rng, dim);
        let y = normal(&mut rng);
        Sample { x, y }
    }
}

fn result(name: &str, cases: usize, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: worst <= tolerance,
        cases,
        worst,
        tolerance,
    }
}

fn gradient_checks(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (tag, loss) in [LossModel::Square, LossModel::Logistic, LossModel::Hinge]
        .into_iter()
        .enumerate()
    {
        let mut probe = Probe::new(seed, tag as u64);
        let mut worst = 0.0f64;
        let mut checked = 0;
        while checked < cases {
            let dim = 1 + checked % 8;
            let f = probe.vector(dim, 1.0);
            let mut z = probe.sample(dim);
            if loss == LossModel::Hinge || loss == LossModel::Logistic {
                z.y = z.y.signum();
            }
            // The hinge is differentiable away from its kink only.
            if loss == LossModel::Hinge && (z.y * z.predict(&f) - 1.0).abs() < 1e-3 {
                continue;
            }
            worst = worst.max(loss.check_gradient_fd(&f, &z, DEFAULT_FD_STEP)?);
            checked += 1;
        }
        out.push(result(
            &format!("gradient-fd/{}", loss.name()),
            cases,
            worst,
            FD_TOLERANCE,
        ));
    }
    Ok(out)
}

fn sets_for(dim: usize, probe: &mut Probe) -> Vec<(&'static str, ConvexSet)> {
    let center = probe.vector(dim, 0.5).into_inner();
    let lo = probe.vector(dim, 0.5).into_inner();
    let hi = lo.iter().map(|l| l + 0.7).collect();
    let normal = probe.vector(dim, 1.0).into_inner();
    vec![
        ("whole-space", ConvexSet::whole_space()),
        (
            "ball",
            ConvexSet::Ball {
                center,
                radius: 0.8,
            },
        ),
        ("box", ConvexSet::Box { lo, hi }),
        ("simplex", ConvexSet::Simplex { scale: 1.5 }),
        (
            "halfspace",
            ConvexSet::Halfspace {
                normal,
                offset: 0.3,
            },
        ),
    ]
}

/// Membership, idempotence, nonexpansiveness and the variational
/// inequality `<x - P x, y - P x> <= 0` for `y` in `K`.
fn projection_checks(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
    let mut probe = Probe::new(seed, 16);
    let names = ["whole-space", "ball", "box", "simplex", "halfspace"];
    let mut worst = [[0.0f64; 4]; 5];
    for case in 0..cases {
        let dim = 1 + case % 6;
        for (i, (_, k)) in sets_for(dim, &mut probe).into_iter().enumerate() {
            let x = probe.vector(dim, 2.0);
            let y = probe.vector(dim, 2.0);
            let px = k.project(&x)?;
            let py = k.project(&y)?;
            let w = &mut worst[i];
            w[0] = w[0].max(k.distance(&px)?);
            w[1] = w[1].max(k.project(&px)?.max_abs_diff(&px));
            w[2] = w[2].max(px.distance(&py) - x.distance(&y));
            w[3] = w[3].max(x.sub(&px).dot(&py.sub(&px)));
        }
    }
    let props = ["membership", "idempotence", "contraction", "variational"];
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        for (j, prop) in props.iter().enumerate() {
            out.push(result(
                &format!("projection/{name}/{prop}"),
                cases,
                worst[i][j],
                PROJECTION_TOLERANCE,
            ));
        }
    }
    Ok(out)
}

fn taylor_check(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut probe = Probe::new(seed, 32);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let dim = 1 + case % 10;
        let f = probe.vector(dim, 1.0);
        let z = probe.sample(dim);
        let gamma = 10f64.powf(-1.0 - 3.0 * probe.stream.uniform(1 << 40 | case as u64));
        let t = taylor_decomposition(&f, &z, gamma, LossModel::Square)?;
        worst = worst.max(t.relative_residual());
    }
    Ok(result("taylor/square", cases, worst, TAYLOR_TOLERANCE))
}

fn schedule_check() -> CheckResult {
    let expected = [
        (0.4, false),
        (0.5, false),
        (0.51, true),
        (0.75, true),
        (1.0, true),
        (1.5, false),
        (0.0, false),
    ];
    let wrong = expected
        .iter()
        .filter(|(alpha, pass)| {
            let s = StepSchedule {
                a: 0.5,
                b: 1.0,
                alpha: *alpha,
            };
            robbins_monro_check(&s).pass != *pass
        })
        .count();
    result("schedule/robbins-monro", expected.len(), wrong as f64, 0.0)
}

/// Gradient finite-difference checks, the projection property suite,
/// exactness of the second-order expansion for the square loss, and the
/// step-size classification.
pub fn self_check(seed: u64, cases: usize) -> Result<CheckReport> {
    let mut results = gradient_checks(seed, cases)?;
    results.extend(projection_checks(seed, cases)?);
    results.push(taylor_check(seed, cases)?);
    results.push(schedule_check());
    Ok(CheckReport { seed, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let report = self_check(7, 200).unwrap();
        for r in &report.results {
            assert!(r.passed, "{r:?}");
        }
        assert!(report.results.len() > 20);
    }
}

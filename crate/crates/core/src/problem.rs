use crate::error::Result;
use crate::losses::LossModel;
use crate::model::{make_linear_gaussian, true_minimizer, DataDistribution};
use crate::sets::ConvexSet;
use crate::sgd::{SgdRunner, StepSchedule};
use crate::vector::ParameterVector;

/// A distribution, loss, constraint set and schedule that together define
/// one SGD experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub dist: DataDistribution,
    pub loss: LossModel,
    pub set: ConvexSet,
    pub schedule: StepSchedule,
}

impl Problem {
    /// Square loss on linear-gaussian data in `R^dim` with
    /// `w* = (1, ..., 1) / sqrt(dim)`, noise `0.5`, `K` the centred ball of
    /// radius 2 and `gamma_n = 0.5 / (n + 2)`. `f_K = w*` sits at distance 1
    /// from the boundary.
    pub fn default_quadratic(dim: usize) -> Result<Self> {
        let w_star = ParameterVector::new(vec![1.0 / (dim as f64).sqrt(); dim])?;
        Ok(Self {
            dist: make_linear_gaussian(w_star, 0.5)?,
            loss: LossModel::Square,
            set: ConvexSet::centered_ball(dim, 2.0)?,
            schedule: StepSchedule::default(),
        })
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_set(mut self, set: ConvexSet) -> Self {
        self.set = set;
        self
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn minimizer(&self) -> Result<ParameterVector> {
        true_minimizer(&self.dist, self.loss, &self.set)
    }

    pub fn runner(&self, n_steps: usize, seed: u64) -> SgdRunner<'_> {
        SgdRunner::new(
            &self.dist,
            self.loss,
            &self.set,
            self.schedule,
            n_steps,
            seed,
        )
    }
}

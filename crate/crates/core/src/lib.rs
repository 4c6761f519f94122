//! Projected stochastic gradient descent with empirical diagnostics for
//! CV_on stability, the converse gradient bound, and Robbins-Siegmund
//! convergence, on synthetic problems whose minimizers are known.

pub mod config;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod monitor;
pub mod plot;
pub mod problem;
pub mod rng;
pub mod selfcheck;
pub mod sets;
pub mod sgd;
pub mod stability;
pub mod stats;
pub mod vector;

pub use error::{LabError, Result};
pub use losses::{LossConstants, LossModel};
pub use model::{DataDistribution, Dataset, MonteCarlo, RiskEstimate};
pub use sets::ConvexSet;
pub use sgd::{RecordPolicy, StepSchedule, Trajectory};
pub use vector::{ParameterVector, Sample};

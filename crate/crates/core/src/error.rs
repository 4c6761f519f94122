use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0} loss is not differentiable at this point; use the subgradient oracle")]
    NotDifferentiable(&'static str),

    #[error("{0} loss has no Hessian")]
    NoHessian(&'static str),

    #[error("no analytic minimizer for {0}")]
    NoAnalyticMinimizer(String),

    #[error("expected risk has no closed form here and no Monte Carlo budget is configured")]
    NoRiskBudget,

    #[error("SGD diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("too few usable points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("replicates do not share checkpoints")]
    MismatchedCheckpoints,

    #[error("trajectory has no iterate recorded at step {0}")]
    NotRecorded(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

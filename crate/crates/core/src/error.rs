use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unstable system: rho = {rho:.4} (rho1 = {rho1:.4}, rho2 = {rho2:.4}) must be < 1")]
    Unstable { rho: f64, rho1: f64, rho2: f64 },

    #[error("coordinate {coord} = {value} out of range 0..={max}")]
    IndexOutOfRange { coord: usize, value: usize, max: usize },

    #[error("flat index {index} out of range for size {size}")]
    FlatIndexOutOfRange { index: usize, size: usize },

    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state is not a decision epoch (activity = {0:?})")]
    NotDecisionEpoch(crate::state::Activity),

    #[error("time step {dt} exceeds stability bound {bound} (0.1 / max exit rate)")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("negative probability {value} at cell {cell}, step {step}")]
    NegativeProbability { value: f64, cell: usize, step: usize },

    #[error("mesh ends at t = {mesh_end} but duration quantile is {required}; uncovered tail mass {tail_mass:e}")]
    MeshCoverage { mesh_end: f64, required: f64, tail_mass: f64 },

    #[error("policy evaluation residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("cycle of undiscounted linking transitions through state {0}")]
    LinkingCycle(usize),

    #[error("policy assigns infeasible action {action:?} at state {state}")]
    InfeasibleAction { state: usize, action: crate::state::Action },

    #[error("policy chose {action:?} at ({n1}, {n2}, l1 = {l1}) where it is infeasible")]
    InfeasibleDecision { n1: usize, n2: usize, l1: usize, action: crate::state::Action },

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error("queue length {len} exceeded simulation cap {cap} for queue {queue}")]
    QueueOverflow { queue: usize, len: usize, cap: usize },

    #[error("not enough samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("samples have zero variance")]
    ZeroVariance,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }
}

use thiserror::Error;

use crate::qp::QpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("points coincide, bearing is undefined")]
    CoincidentPoints,

    #[error("trajectory of UAV {uav} ends {gap:.3e} m away from its goal")]
    EndpointMismatch { uav: usize, gap: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),

    #[error("separation mode requires a reference plan")]
    MissingReference,

    #[error("reference pair ({0}, {1}) coincides at slot {2}")]
    DegenerateReferencePair(usize, usize, usize),

    #[error("solver stopped with status {status:?} after {iterations} iterations")]
    SolverFailure { status: QpStatus, iterations: usize },

    #[error("invalid QP: {0}")]
    InvalidQp(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("swarm is empty")]
    EmptySwarm,

    #[error("log does not belong to the scenario: {0}")]
    MismatchedLog(String),

    #[error("need at least {needed} points for this fit, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("scenario generation exhausted after {0} rejections")]
    GenerationExhausted(usize),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

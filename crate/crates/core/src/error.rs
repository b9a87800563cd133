use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: estimated error {estimate:e} exceeds {tolerance:e}")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("invalid cube structure: {0}")]
    InvalidStructure(String),

    #[error("cannot join structures of different polarity")]
    PolarityMismatch,

    #[error("edge {0} of the root structure received no perturbation rule")]
    UnlabeledEdge(String),

    #[error("least-squares fit is singular: every singular value is below the cutoff")]
    SingularFit,

    #[error("no amplitude in the scan passed the tube check")]
    NoValidEpsilon,

    #[error("degenerate zero set: gradient {gradient:e} at {location:?} is below tolerance")]
    DegenerateZeroSet { gradient: f64, location: Vec<f64> },

    #[error("domain adjacency graph is not a tree: {0}")]
    NotATree(String),

    #[error("zero-set component {0} touches the sampling box")]
    OpenComponent(usize),

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("verification failed at stage `{stage}`: {detail}")]
    VerificationFailed { stage: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidStructure(msg.into())
    }
}

use thiserror::Error;

/// Errors raised by the core estimation and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("not enough observations: {observations} scans for {parameters} parameters")]
    TooFewObservations { observations: usize, parameters: usize },

    #[error("AR coefficient {0} is outside the stationary region")]
    NonStationary(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("covariance block is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("unknown design block: condition {condition}, segment {segment}")]
    UnknownBlock { condition: String, segment: usize },

    #[error("no admissible change-point configuration: {0}")]
    NoCandidates(String),

    #[error("candidate enumeration produced {count} configurations (cap {cap}); supply an explicit list")]
    TooManyCandidates { count: usize, cap: usize },

    #[error("exact log-likelihood tie between candidates {first} and {second}")]
    LikelihoodTie { first: usize, second: usize },

    #[error("focus parameter value {theta} is infeasible: no draw fell in the selection region after {attempts} attempts")]
    Infeasible { theta: f64, attempts: usize },

    #[error("confidence distribution unusable: {0}")]
    ConfidenceDistribution(String),

    #[error("malformed hypothesis tree: {0}")]
    MalformedTree(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_data(msg: impl Into<String>) -> Error {
    Error::InvalidData(msg.into())
}

use ndarray::Array2;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has (near) zero Euclidean norm")]
    ZeroNormRow(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate affinity graph: nodes {nodes:?} have degree below {epsilon:e}")]
    DegenerateGraph { nodes: Vec<usize>, epsilon: f64 },

    #[error("linear system is singular (pivot {pivot:e} at column {column})")]
    SingularSystem { column: usize, pivot: f64 },

    #[error("iterative diffusion did not converge after {iterations} iterations (last update {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// Last iterate, widened to `f64`.
        best: Box<Array2<f64>>,
    },

    #[error("batch contains no scoring pairs")]
    NoValidPairs,

    #[error("need {needed} classes with at least two samples, found {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("recall cutoff {k} requires more than {k} samples, have {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("embedding density undefined: {0}")]
    UndefinedDensity(String),

    #[error("spectrum is rank deficient: {0}")]
    RankDeficient(String),
}

impl Error {
    /// True for failures that stem from the numbers rather than from the
    /// arguments (used by the CLI to pick an exit code).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroNormRow(_)
                | Error::DegenerateGraph { .. }
                | Error::SingularSystem { .. }
                | Error::NotConverged { .. }
                | Error::NoValidPairs
                | Error::UndefinedDensity(_)
                | Error::RankDeficient(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroNormRow(_) => "ZeroNormRow",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::DegenerateGraph { .. } => "DegenerateGraph",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::NotConverged { .. } => "NotConverged",
            Error::NoValidPairs => "NoValidPairs",
            Error::InsufficientClasses { .. } => "InsufficientClasses",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::UndefinedDensity(_) => "UndefinedDensity",
            Error::RankDeficient(_) => "RankDeficient",
        }
    }
}

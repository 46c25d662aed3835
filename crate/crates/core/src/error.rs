use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {index} has (near) zero variance")]
    ZeroVarianceVariable { index: usize },

    #[error("domain {domain} has no samples")]
    EmptyDomain { domain: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("reference variable is uncorrelated with x_j (|cov| = {cov:.3e})")]
    DegenerateReference { cov: f64 },

    #[error("variables ({i}, {j}, {k}) are not pairwise correlated")]
    UncorrelatedTriple { i: usize, j: usize, k: usize },

    #[error("independence test needs at least {required} samples, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },

    #[error("no pure-compatible variable pair was found")]
    NoClustersFound,

    #[error("factor analysis did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("loading matrix is rank deficient")]
    RankDeficientLoadings,

    #[error("transformation matrix H is rank deficient")]
    RankDeficientH,

    #[error("entry of B∘B reaches {0:.3e}, above the overflow cap")]
    OverflowRisk(f64),

    #[error("interest factor {column} has no assigned augmented factor")]
    AssignmentInfeasible { column: usize },

    #[error("regression design is singular")]
    SingularDesign,

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroVarianceVariable { .. } => "ZeroVarianceVariable",
            Error::EmptyDomain { .. } => "EmptyDomain",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DegenerateReference { .. } => "DegenerateReference",
            Error::UncorrelatedTriple { .. } => "UncorrelatedTriple",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::NoClustersFound => "NoClustersFound",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::RankDeficientLoadings => "RankDeficientLoadings",
            Error::RankDeficientH => "RankDeficientH",
            Error::OverflowRisk(_) => "OverflowRisk",
            Error::AssignmentInfeasible { .. } => "AssignmentInfeasible",
            Error::SingularDesign => "SingularDesign",
            Error::NonFiniteObjective => "NonFiniteObjective",
            Error::Io { .. } => "Io",
            Error::Parse { .. } => "Parse",
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. })
    }
}

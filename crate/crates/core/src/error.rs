use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unit index {index} out of range for {n} units")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid probability {0}; expected a value in [0, 1]")]
    InvalidProbability(f64),

    #[error("treatment probability {p} of unit {unit} violates the floor {floor}")]
    ProbabilityFloor { unit: usize, p: f64, floor: f64 },

    #[error("interaction order must be at least 1")]
    ZeroBeta,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("all pairwise covariate distances are zero")]
    DegenerateDistances,

    #[error("subset {subset:?} is not a neighbor subset of unit {unit} with size at most {beta}")]
    InvalidSubset { unit: usize, subset: Vec<usize>, beta: usize },

    #[error("duplicate coefficient for unit {unit} and subset {subset:?}")]
    DuplicateCoefficient { unit: usize, subset: Vec<usize> },

    #[error("empty {0} group")]
    EmptyGroup(&'static str),

    #[error("{0} produced a non-finite estimate")]
    NonFinite(&'static str),

    #[error("all SNIPE weights are zero")]
    ZeroWeights,

    #[error("no overlapping unit pair carries a nonzero weight moment")]
    NoOverlap,

    #[error("{n} units exceed the enumeration budget of {budget}")]
    EnumerationBudget { n: usize, budget: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("true TTE is zero; relative metrics are undefined")]
    ZeroTte,

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

use thiserror::Error;

/// Errors raised by dataset validation, model fitting and conformal calibration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariate dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: String, expected: usize, found: usize },
    #[error("duplicate cluster id `{0}`")]
    DuplicateClusterId(String),
    #[error("cluster `{id}` has non-binary treatment {value}")]
    NonBinaryTreatment { id: String, value: u8 },
    #[error("cluster `{0}` has no members")]
    EmptyCluster(String),
    #[error("cluster `{0}` has a record without an outcome")]
    MissingOutcome(String),
    #[error("cluster `{id}`: column `{column}` is not constant within the cluster")]
    ConstantWithinClusterViolation { id: String, column: String },
    #[error("randomization probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("no clusters satisfy the subgroup predicate")]
    EmptyResult,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no calibration scores")]
    EmptyScores,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("arm {arm} has {got} clusters; at least {needed} are required")]
    TooFewClusters { arm: u8, needed: usize, got: usize },
    #[error("weights must be positive and finite, got {0}")]
    NonpositiveWeight(f64),
    #[error("clusters must all contain exactly {expected} scores, found {found}")]
    UnequalClusterSizes { expected: usize, found: usize },
    #[error("at least two effects are required, got {0}")]
    TooFewEffects(usize),
    #[error("length mismatch: {left} intervals vs {right} truths")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("level must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),
    #[error("invalid subgroup expression `{expr}`: {reason}")]
    InvalidPredicate { expr: String, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("schema violation:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

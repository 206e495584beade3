use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("target column `{0}` not found")]
    TargetNotFound(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown category `{value}` in column `{column}`")]
    UnknownCategory { column: String, value: String },

    #[error("table has no rows")]
    EmptyTable,
    #[error("column `{0}` has no non-missing values")]
    AllMissingColumn(String),

    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("kernel width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("class `{0}` has no training instances")]
    EmptyClass(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("need at least {needed} parent instances, got {got}")]
    TooFewParents { needed: usize, got: usize },
    #[error("crossover fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("expected {expected} predictions, got {got}")]
    PredictionCountMismatch { expected: usize, got: usize },
    #[error("training data contains a single class")]
    SingleClassTraining,

    #[error("mining data is empty")]
    EmptyData,
    #[error("mining data has no categorical columns")]
    NoCategoricalColumns,
    #[error("rule antecedent covers no rows")]
    ZeroCoverage,
    #[error("lift must be non-negative, got {0}")]
    NegativeLift(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate at a model endpoint.
    pub fn is_endpoint_error(&self) -> bool {
        matches!(
            self,
            Error::EndpointUnreachable(_)
                | Error::Protocol(_)
                | Error::PredictionCountMismatch { .. }
        )
    }
}

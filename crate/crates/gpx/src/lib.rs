//! Local symbolic explanations for black-box models.
//!
//! Around a query point, a Gaussian noise set is sampled, labeled by the
//! black-box oracle, and a genetic-programming search evolves a readable
//! symbolic expression that mimics the oracle there. Ridge and decision-tree
//! surrogates plus a benchmark harness with paired permutation tests allow
//! the three explainers to be compared on equal footing.
//!
//! The numeric core ([`expr`], [`gp`], the fidelity metrics and solvers) is
//! generic over the scalar type through [`scalar::Real`]; the aliases below
//! fix `f64` for the pipeline and the CLI.

use serde::{Deserialize, Serialize};

pub mod bench;
pub mod cart;
pub mod cli;
pub mod expr;
pub mod explain;
pub mod gp;
pub mod linalg;
pub mod oracle;
pub mod scalar;
pub mod surrogate;

/// Scalar type used by the concrete pipeline.
pub type Scalar = f64;

/// Expression tree over [`Scalar`].
pub type Expr = expr::ExprTree<Scalar>;

/// GP individual over [`Scalar`].
pub type Individual = gp::Individual<Scalar>;

/// Noise set over [`Scalar`].
pub type NoiseSet = explain::NoiseSet<Scalar>;

/// Whether an oracle predicts a continuous value or a class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Errors across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("variable index {index} out of range for {n_features} features")]
    VariableOutOfRange { index: usize, n_features: usize },

    #[error("empty fitness set")]
    EmptyFitnessSet,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient training data for sigma")]
    InsufficientTrainingData,

    #[error("dimension mismatch: oracle expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular linear system")]
    SingularSystem,

    #[error("singular normal equations; use lambda > 0")]
    SingularNormalEquations,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("oracle protocol error at line {line}: {message}")]
    OracleProtocol { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("missing target column `{0}`")]
    MissingTargetColumn(String),

    #[error("non-binary labels for classification task: {0}")]
    NonBinaryLabels(String),

    #[error("benchmark failure on dataset `{dataset}` (query {query_index:?}): {source}")]
    Bench {
        dataset: String,
        query_index: Option<usize>,
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags an error with the benchmark position it occurred at.
    pub fn in_bench(self, dataset: &str, query_index: Option<usize>) -> Error {
        match self {
            already @ Error::Bench { .. } => already,
            other => Error::Bench {
                dataset: dataset.to_string(),
                query_index,
                source: Box::new(other),
            },
        }
    }
}

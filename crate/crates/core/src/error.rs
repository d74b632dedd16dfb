use thiserror::Error;

use crate::manifold::FactoredPoint;

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sparsity,
    Admission,
    Design,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Sparsity => "sparsity induction",
            Stage::Admission => "admission",
            Stage::Design => "transceiver design",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank-deficient factor: {0}")]
    RankDeficient(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {reason}")]
    NumericalFailure {
        reason: String,
        last_good: Box<FactoredPoint>,
    },
    #[error("{stage} stage failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("inconsistent result: {0}")]
    Inconsistent(String),
    #[error("exhaustive search refused: K = {k} exceeds the guard of {limit}")]
    OracleGuard { k: usize, limit: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        Error::StageFailed {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

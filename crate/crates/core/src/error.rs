use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("{0} did not converge")]
    DidNotConverge(&'static str),
    #[error("rank deficient: numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("negative variance {0}")]
    NegativeVariance(f64),
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("node {node} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("sampling probabilities carry no mass")]
    ZeroProbabilityMass,

    #[error("objective increased from {before:e} to {after:e}; step size too large")]
    StepTooLarge { before: f64, after: f64 },
    #[error("exhaustive search over {supports} supports exceeds the limit of {limit}")]
    TooLarge { supports: u128, limit: u128 },
    #[error("basis is not orthonormal (residual {0:e})")]
    NotOrthonormal(f64),

    #[error("no measurement row is anchored at a training node")]
    NoLabeledMeasurements,
    #[error("embedding of node {0} has zero norm")]
    ZeroNormEmbedding(usize),
    #[error("evaluation split is empty")]
    EmptySplit,

    #[error("RIP constant {0} is outside (0, 1); the error bound is vacuous")]
    DeltaOutOfRange(f64),
    #[error("need at least {needed} {what}, found {found}")]
    InsufficientNodes {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }

    /// Short machine-readable tag, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DidNotConverge(_) => "DidNotConverge",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::NegativeVariance(_) => "NegativeVariance",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidParams(_) => "InvalidParams",
            Error::NodeOutOfRange { .. } => "NodeOutOfRange",
            Error::EmptyGraph => "EmptyGraph",
            Error::ZeroProbabilityMass => "ZeroProbabilityMass",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::TooLarge { .. } => "TooLarge",
            Error::NotOrthonormal(_) => "NotOrthonormal",
            Error::NoLabeledMeasurements => "NoLabeledMeasurements",
            Error::ZeroNormEmbedding(_) => "ZeroNormEmbedding",
            Error::EmptySplit => "EmptySplit",
            Error::DeltaOutOfRange(_) => "DeltaOutOfRange",
            Error::InsufficientNodes { .. } => "InsufficientNodes",
            Error::MissingFile(_) => "MissingFile",
            Error::Parse { .. } => "ParseError",
            Error::InconsistentDimensions(_) => "InconsistentDimensions",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

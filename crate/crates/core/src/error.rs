use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid sensor field of view: {0}")]
    InvalidFov(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty target")]
    EmptyTarget,

    #[error("degenerate correspondences: {effective} effective pairs, need at least 3")]
    DegenerateCorrespondences { effective: usize },

    #[error("rank-deficient weighted configuration (singular values {singular_values:?})")]
    RankDeficient { singular_values: [f64; 3] },

    #[error("alignment produced a reflection")]
    Reflection,

    #[error("no overlap support: every effective weight is zero")]
    NoOverlapSupport,

    #[error("no model support: all responsibilities absorbed by the outlier component")]
    NoModelSupport,

    #[error("model fully outside overlap")]
    ModelOutsideOverlap,

    #[error("too few points: {have} < {need}")]
    TooFewPoints { have: usize, need: usize },

    #[error("empty view")]
    EmptyView,

    #[error("outer iteration {iteration}: {source}")]
    OuterIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Where in a file a parse error happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(offset) => write!(f, "byte offset {offset}"),
            Location::Line(line) => write!(f, "line {line}"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, location: Location, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location,
            message: message.into(),
        }
    }

    /// The innermost error, looking through outer-iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::OuterIteration { source, .. } => source.root(),
            other => other,
        }
    }
}

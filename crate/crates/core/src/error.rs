use std::path::PathBuf;

/// Every failure the toolkit reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("invalid body model: {0}")]
    InvalidModel(String),
    #[error("camera scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("backward called with a cache from a different moderator state")]
    StaleCache,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-length embedding vector")]
    ZeroVector,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("covariance is singular after regularization")]
    SingularCovariance,
    #[error("no prior class for label {0:?}")]
    UnknownLabelClassMissing(String),
    #[error("loss component {0} is not finite")]
    NonFiniteComponent(String),
    #[error("objective is not finite")]
    NonFiniteLoss,
    #[error("optimization diverged at iteration {0}")]
    Diverged(usize),
    #[error("need at least 2 visible keypoints, got {0}")]
    TooFewKeypoints(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unsupported or missing schema: expected {expected:?}, found {found:?}")]
    Schema { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NonFiniteLoss | Diverged(_) | SingularCovariance | NonFiniteComponent(_) => {
                ErrorClass::Numeric
            }
            Io { .. } | Csv(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("CTC target infeasible: needs at least {required} frames, have {available}")]
    CtcInfeasible { required: usize, available: usize },
    #[error("instance too large for enumeration: {0} paths")]
    TooLarge(u128),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("unknown topology `{0}`")]
    UnknownTopology(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transplant rejected: {0}")]
    Transplant(String),
    #[error("corrupt checkpoint {path:?}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::UnknownTopology(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } => 3,
            Error::Diverged { .. } => 4,
            Error::CorruptCheckpoint { .. } | Error::VersionMismatch { .. } => 5,
            Error::VocabMismatch(_) => 6,
            Error::Transplant(_) => 7,
            Error::Parse(_) => 8,
            _ => 1,
        }
    }
}

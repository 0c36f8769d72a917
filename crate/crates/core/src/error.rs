use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid position: {0}")]
    InvalidPosition(String),
    #[error("illegal move: {0}")]
    IllegalMove(String),
    #[error("move cannot be mapped to a policy index: {0}")]
    UnmappableMove(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no legal moves")]
    EmptyLegalSet,
    #[error("position is terminal")]
    TerminalState,
    #[error("root has only one legal move")]
    OnlyOneLegalMove,
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),
    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("degenerate classes: {0}")]
    DegenerateClasses(String),
    #[error("entropy undefined for feature {0} (never active)")]
    UndefinedEntropy(usize),
    #[error("need at least {needed} live features, found {found}")]
    TooFewFeatures { needed: usize, found: usize },
    #[error("empty table")]
    EmptyTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("token id {token} out of range for vocabulary of size {size}")]
    TokenOutOfRange { token: u32, size: u32 },

    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid logits: {0}")]
    InvalidLogits(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank {rank} exceeds limit {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed payload at byte {offset}: {reason}")]
    MalformedPayload { offset: usize, reason: String },

    #[error("frame of {len} bytes exceeds cap of {cap} bytes")]
    FrameTooLarge { len: usize, cap: usize },

    #[error("connection closed")]
    ConnectionClosed,

    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),

    #[error("unknown session {0}")]
    SessionUnknown(u64),

    #[error("session {0} has no remaining token budget")]
    BudgetExhausted(u64),

    #[error("invalid commit: {0}")]
    InvalidCommit(String),

    #[error("out of sync: {0}")]
    OutOfSync(String),

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("remote error {code}: {text}")]
    Remote { code: u16, text: String },

    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),

    #[error("latency report needs at least one response token")]
    ZeroTokens,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        Error::MalformedPayload {
            offset,
            reason: reason.into(),
        }
    }

    /// Short stable identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidVocab(_) => "invalid-vocab",
            Error::TokenOutOfRange { .. } => "token-out-of-range",
            Error::InvalidSequence(_) => "invalid-sequence",
            Error::InvalidLogits(_) => "invalid-logits",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::VocabMismatch(_) => "vocab-mismatch",
            Error::Range(_) => "range",
            Error::EmptyCorpus => "empty-corpus",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::RankTooLarge { .. } => "rank-too-large",
            Error::DegenerateBatch(_) => "degenerate-batch",
            Error::InvalidConfig(_) => "invalid-config",
            Error::MalformedPayload { .. } => "malformed-payload",
            Error::FrameTooLarge { .. } => "frame-too-large",
            Error::ConnectionClosed => "connection-closed",
            Error::HandshakeRejected(_) => "handshake-rejected",
            Error::SessionUnknown(_) => "session-unknown",
            Error::BudgetExhausted(_) => "budget-exhausted",
            Error::InvalidCommit(_) => "invalid-commit",
            Error::OutOfSync(_) => "out-of-sync",
            Error::FingerprintMismatch(_) => "fingerprint-mismatch",
            Error::Remote { .. } => "remote",
            Error::UnexpectedMessage(_) => "unexpected-message",
            Error::ZeroTokens => "zero-tokens",
            Error::Io(_) => "io",
        }
    }
}

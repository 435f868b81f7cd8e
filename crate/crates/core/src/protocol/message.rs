use crate::vocab::{LogitVector, TokenId, Vocab};

pub const PROTOCOL_VERSION: u8 = 1;

/// What a `ServerGenerate` request asks the server to run locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerateMode {
    /// Plain greedy black-box generation; no proxies involved.
    Api,
    /// Offset-adapted generation using the previously uploaded adapter.
    Transfer,
}

impl GenerateMode {
    pub fn tag(self) -> u8 {
        match self {
            GenerateMode::Api => 0,
            GenerateMode::Transfer => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(GenerateMode::Api),
            1 => Some(GenerateMode::Transfer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    VocabMismatch = 1,
    SessionUnknown = 2,
    InvalidCommit = 3,
    BudgetExhausted = 4,
    FingerprintMismatch = 5,
    NoAdapter = 6,
    Malformed = 7,
    Unexpected = 8,
    OutOfSync = 9,
    BadRequest = 10,
}

impl ErrorCode {
    pub fn from_u16(code: u16) -> Option<Self> {
        use ErrorCode::*;
        [
            VocabMismatch,
            SessionUnknown,
            InvalidCommit,
            BudgetExhausted,
            FingerprintMismatch,
            NoAdapter,
            Malformed,
            Unexpected,
            OutOfSync,
            BadRequest,
        ]
        .into_iter()
        .find(|c| *c as u16 == code)
    }
}

/// Everything client and server say to each other. Wire layout lives in
/// [`crate::transport::wire`].
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        protocol_version: u8,
        vocab: Vocab,
        model_fingerprint: u64,
    },
    HelloAck {
        accept: bool,
        reason: String,
    },
    StartSession {
        session_id: u64,
        prompt: Vec<TokenId>,
        draft_len: u32,
        max_new_tokens: u32,
    },
    DraftBatch {
        session_id: u64,
        tokens: Vec<TokenId>,
        logits: Vec<LogitVector>,
    },
    Commit {
        session_id: u64,
        accept_count: u32,
        replacement: Option<TokenId>,
        done: bool,
    },
    /// Full-resend alternative to `Commit`: the client's whole sequence.
    CommitSequence {
        session_id: u64,
        tokens: Vec<TokenId>,
        done: bool,
    },
    UploadAdapter {
        adapter: Vec<u8>,
        base_proxy_fingerprint: u64,
    },
    ServerGenerate {
        session_id: u64,
        prompt: Vec<TokenId>,
        mode: GenerateMode,
        max_new_tokens: u32,
    },
    GenerationResult {
        session_id: u64,
        tokens: Vec<TokenId>,
    },
    ProtocolError {
        code: u16,
        text: String,
    },
}

impl Message {
    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::HelloAck { .. } => "HelloAck",
            Message::StartSession { .. } => "StartSession",
            Message::DraftBatch { .. } => "DraftBatch",
            Message::Commit { .. } => "Commit",
            Message::CommitSequence { .. } => "CommitSequence",
            Message::UploadAdapter { .. } => "UploadAdapter",
            Message::ServerGenerate { .. } => "ServerGenerate",
            Message::GenerationResult { .. } => "GenerationResult",
            Message::ProtocolError { .. } => "ProtocolError",
        }
    }

    pub fn error(code: ErrorCode, text: impl Into<String>) -> Self {
        Message::ProtocolError {
            code: code as u16,
            text: text.into(),
        }
    }
}

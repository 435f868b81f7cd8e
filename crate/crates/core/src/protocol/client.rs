use crate::error::{Error, Result};
use crate::models::LogitModel;
use crate::protocol::message::{ErrorCode, GenerateMode, Message, PROTOCOL_VERSION};
use crate::protocol::session::{validate_prompt, ClientSession, ProxyPair};
use crate::sampling::GenerationConfig;
use crate::transport::{CostLedger, Connection};
use crate::vocab::{TokenId, Vocab};

/// How the client reports a verdict back to the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommitMode {
    /// `(accept_count, replacement)` only.
    #[default]
    Delta,
    /// The whole sequence, prompt included, every round.
    FullSequence,
}

/// Output of one generation plus its per-session counters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generation {
    pub session_id: u64,
    pub tokens: Vec<TokenId>,
    pub rounds: usize,
    pub drafted: usize,
    pub accepted: usize,
    pub replacements: usize,
    /// Client mirror after each commit, when tracing is on.
    pub mirror_trace: Vec<Vec<TokenId>>,
}

impl Generation {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.drafted > 0).then(|| self.accepted as f64 / self.drafted as f64)
    }
}

/// A single-session-at-a-time client. Proxies are optional: API-mode and
/// adapter-upload runs never touch them.
#[derive(Debug)]
pub struct Client {
    conn: Connection,
    vocab: Vocab,
    proxies: Option<ProxyPair>,
    next_session: u64,
    commit_mode: CommitMode,
    trace: bool,
}

fn remote_error(code: u16, text: String) -> Error {
    match ErrorCode::from_u16(code) {
        Some(ErrorCode::FingerprintMismatch) => Error::FingerprintMismatch(text),
        Some(ErrorCode::VocabMismatch) => Error::VocabMismatch(text),
        _ => Error::Remote { code, text },
    }
}

impl Client {
    /// Sends the preamble and `Hello`, and waits for the server's verdict.
    pub fn connect(mut conn: Connection, vocab: Vocab, proxies: Option<ProxyPair>) -> Result<Self> {
        if let Some(p) = &proxies {
            if p.vocab() != vocab {
                return Err(Error::VocabMismatch("proxy vocabulary differs from client vocabulary".into()));
            }
        }
        conn.write_preamble()?;
        conn.send(&Message::Hello {
            protocol_version: PROTOCOL_VERSION,
            vocab,
            model_fingerprint: proxies.as_ref().map_or(0, |p| p.base().fingerprint()),
        })?;
        match conn.recv()? {
            Message::HelloAck { accept: true, .. } => conn.set_vocab_size(vocab.len()),
            Message::HelloAck {
                accept: false,
                reason,
            } => return Err(Error::HandshakeRejected(reason)),
            Message::ProtocolError { code, text } => return Err(remote_error(code, text)),
            other => return Err(Error::UnexpectedMessage(other.name().into())),
        }
        Ok(Self {
            conn,
            vocab,
            proxies,
            next_session: 1,
            commit_mode: CommitMode::Delta,
            trace: false,
        })
    }

    pub fn with_commit_mode(mut self, mode: CommitMode) -> Self {
        self.commit_mode = mode;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn ledger(&self) -> &CostLedger {
        self.conn.ledger()
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    fn fresh_session(&mut self) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        id
    }

    /// Draft-then-verify generation with drafts of up to `draft_len` tokens.
    pub fn run_speculative(
        &mut self,
        prompt: &[TokenId],
        draft_len: usize,
        config: &GenerationConfig,
    ) -> Result<Generation> {
        let proxies = self
            .proxies
            .clone()
            .ok_or_else(|| Error::InvalidConfig("offset adaptation needs proxy models".into()))?;
        let draft_len_u32 = u32::try_from(draft_len)
            .ok()
            .filter(|&s| (1..=u16::MAX as u32).contains(&s))
            .ok_or_else(|| Error::Range(format!("draft length {draft_len} outside 1..=65535")))?;
        let id = self.fresh_session();
        let mut session = ClientSession::new(id, prompt.to_vec(), draft_len, config, self.vocab)?;
        let mut gen = Generation {
            session_id: id,
            ..Generation::default()
        };
        self.conn.send(&Message::StartSession {
            session_id: id,
            prompt: prompt.to_vec(),
            draft_len: draft_len_u32,
            max_new_tokens: config.max_new_tokens,
        })?;
        loop {
            match self.conn.recv()? {
                Message::GenerationResult { session_id, tokens } if session_id == id => {
                    if !session.is_done() || !tokens.is_empty() {
                        return Err(Error::OutOfSync(
                            "server ended a session the client considers open".into(),
                        ));
                    }
                    break;
                }
                Message::DraftBatch {
                    session_id,
                    tokens,
                    logits,
                } if session_id == id => {
                    let verdict = session.verify(&proxies, &tokens, &logits)?;
                    let replaced = verdict.replacement.is_some();
                    self.conn
                        .ledger_mut()
                        .record_round(tokens.len(), verdict.accept_count, replaced);
                    gen.rounds += 1;
                    gen.drafted += tokens.len();
                    gen.accepted += verdict.accept_count;
                    gen.replacements += replaced as usize;
                    if self.trace {
                        gen.mirror_trace.push(session.mirror().to_vec());
                    }
                    let reply = match self.commit_mode {
                        CommitMode::Delta => Message::Commit {
                            session_id: id,
                            accept_count: verdict.accept_count as u32,
                            replacement: verdict.replacement,
                            done: verdict.done,
                        },
                        CommitMode::FullSequence => Message::CommitSequence {
                            session_id: id,
                            tokens: session.mirror().to_vec(),
                            done: verdict.done,
                        },
                    };
                    self.conn.send(&reply)?;
                    if verdict.done {
                        break;
                    }
                }
                Message::ProtocolError { code, text } => return Err(remote_error(code, text)),
                other => {
                    return Err(Error::UnexpectedMessage(format!(
                        "{} during session {id}",
                        other.name()
                    )))
                }
            }
        }
        gen.tokens = session.generated_tokens().to_vec();
        Ok(gen)
    }

    /// One token per round: the draft length fixed at 1.
    pub fn run_per_token(&mut self, prompt: &[TokenId], config: &GenerationConfig) -> Result<Generation> {
        self.run_speculative(prompt, 1, config)
    }

    /// Uploads the adapter and lets the server run the whole offset-adapted
    /// generation against its own copy of the base proxy.
    pub fn run_transfer(
        &mut self,
        prompt: &[TokenId],
        adapter: &[u8],
        base_fingerprint: u64,
        max_new_tokens: u32,
    ) -> Result<Generation> {
        validate_prompt(prompt, &self.vocab)?;
        self.conn.send(&Message::UploadAdapter {
            adapter: adapter.to_vec(),
            base_proxy_fingerprint: base_fingerprint,
        })?;
        self.server_generate(prompt, GenerateMode::Transfer, max_new_tokens)
    }

    /// Plain black-box generation; proxies are never consulted.
    pub fn run_api(&mut self, prompt: &[TokenId], max_new_tokens: u32) -> Result<Generation> {
        validate_prompt(prompt, &self.vocab)?;
        self.server_generate(prompt, GenerateMode::Api, max_new_tokens)
    }

    fn server_generate(
        &mut self,
        prompt: &[TokenId],
        mode: GenerateMode,
        max_new_tokens: u32,
    ) -> Result<Generation> {
        let id = self.fresh_session();
        self.conn.send(&Message::ServerGenerate {
            session_id: id,
            prompt: prompt.to_vec(),
            mode,
            max_new_tokens,
        })?;
        match self.conn.recv()? {
            Message::GenerationResult { session_id, tokens } if session_id == id => {
                self.vocab.check_tokens(&tokens)?;
                self.conn.ledger_mut().record_server_tokens(tokens.len());
                Ok(Generation {
                    session_id: id,
                    tokens,
                    ..Generation::default()
                })
            }
            Message::ProtocolError { code, text } => Err(remote_error(code, text)),
            other => Err(Error::UnexpectedMessage(other.name().into())),
        }
    }
}

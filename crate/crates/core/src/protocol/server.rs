use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::models::{LogitModel, TinyNeuralLM};
use crate::protocol::local::{black_box_greedy, offset_generate};
use crate::protocol::message::{ErrorCode, GenerateMode, Message, PROTOCOL_VERSION};
use crate::protocol::session::{ProxyPair, ServerSession};
use crate::sampling::GenerationConfig;
use crate::transport::{in_process_pair, Connection, Side};
use crate::vocab::{TokenId, Vocab};

/// Handshake verdict: vocabularies must agree exactly. Model fingerprints
/// are informational only, since the black-box and the proxy are different
/// models by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Handshake {
    Accept,
    Reject(String),
}

pub fn handshake(client: &Vocab, server: &Vocab) -> Handshake {
    if client.size() != server.size() {
        return Handshake::Reject(format!(
            "vocab-mismatch: client size {} vs server size {}",
            client.size(),
            server.size()
        ));
    }
    if client.eos() != server.eos() || client.bos() != server.bos() {
        return Handshake::Reject(format!(
            "vocab-mismatch: client eos/bos {}/{} vs server {}/{}",
            client.eos(),
            client.bos(),
            server.eos(),
            server.bos()
        ));
    }
    Handshake::Accept
}

/// Called with `(session_id, canonical sequence)` after every applied commit.
pub type CommitObserver = Arc<dyn Fn(u64, &[TokenId]) + Send + Sync>;

/// Serves the black-box model, and optionally a base-proxy copy for
/// adapter-upload sessions. Cheap to clone; models are shared.
#[derive(Clone)]
pub struct Server {
    black_box: Arc<dyn LogitModel>,
    base_proxy: Option<Arc<TinyNeuralLM>>,
    observer: Option<CommitObserver>,
}

impl std::fmt::Debug for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server")
            .field("vocab", &self.black_box.vocab())
            .field("has_base_proxy", &self.base_proxy.is_some())
            .finish()
    }
}

struct ConnectionState {
    sessions: HashMap<u64, ServerSession>,
    uploaded: Option<std::result::Result<ProxyPair, (ErrorCode, String)>>,
    peer_fingerprint: u64,
}

impl Server {
    pub fn new(black_box: Arc<dyn LogitModel>) -> Self {
        Self {
            black_box,
            base_proxy: None,
            observer: None,
        }
    }

    pub fn with_base_proxy(mut self, base: Arc<TinyNeuralLM>) -> Self {
        self.base_proxy = Some(base);
        self
    }

    pub fn with_commit_observer(mut self, observer: CommitObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn vocab(&self) -> Vocab {
        self.black_box.vocab()
    }

    /// Runs one connection until the peer hangs up.
    pub fn serve(&self, mut conn: Connection) -> Result<()> {
        conn.read_preamble()?;
        let vocab = self.vocab();
        let peer_fingerprint = match conn.recv()? {
            Message::Hello {
                protocol_version,
                vocab: client_vocab,
                model_fingerprint,
            } => {
                let verdict = if protocol_version != PROTOCOL_VERSION {
                    Handshake::Reject(format!(
                        "unsupported protocol version {protocol_version}"
                    ))
                } else {
                    handshake(&client_vocab, &vocab)
                };
                match verdict {
                    Handshake::Accept => {
                        conn.set_vocab_size(vocab.len());
                        conn.send(&Message::HelloAck {
                            accept: true,
                            reason: String::new(),
                        })?;
                        model_fingerprint
                    }
                    Handshake::Reject(reason) => {
                        conn.send(&Message::HelloAck {
                            accept: false,
                            reason,
                        })?;
                        return Ok(());
                    }
                }
            }
            other => {
                conn.send(&Message::error(
                    ErrorCode::Unexpected,
                    format!("expected Hello, got {}", other.name()),
                ))?;
                return Ok(());
            }
        };

        let mut state = ConnectionState {
            sessions: HashMap::new(),
            uploaded: None,
            peer_fingerprint,
        };
        loop {
            let msg = match conn.recv() {
                Ok(m) => m,
                Err(Error::ConnectionClosed) => return Ok(()),
                Err(e @ Error::MalformedPayload { .. }) => {
                    conn.send(&Message::error(ErrorCode::Malformed, e.to_string()))?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if let Some(reply) = self.handle(&mut state, msg) {
                match conn.send(&reply) {
                    Ok(()) => {}
                    Err(Error::ConnectionClosed) => return Ok(()),
                    Err(e) => return Err(e),
                }
            }
        }
    }

    fn handle(&self, state: &mut ConnectionState, msg: Message) -> Option<Message> {
        let vocab = self.vocab();
        match msg {
            Message::StartSession {
                session_id,
                prompt,
                draft_len,
                max_new_tokens,
            } => {
                if state.sessions.contains_key(&session_id) {
                    return Some(Message::error(
                        ErrorCode::BadRequest,
                        format!("session {session_id} already active"),
                    ));
                }
                let mut session =
                    match ServerSession::new(session_id, prompt, draft_len as usize, max_new_tokens, vocab) {
                        Ok(s) => s,
                        Err(e) => return Some(Message::error(ErrorCode::BadRequest, e.to_string())),
                    };
                if session.is_done() {
                    return Some(Message::GenerationResult {
                        session_id,
                        tokens: Vec::new(),
                    });
                }
                let reply = self.draft_reply(&mut session);
                state.sessions.insert(session_id, session);
                Some(reply)
            }
            Message::Commit {
                session_id,
                accept_count,
                replacement,
                done,
            } => self.on_commit(state, session_id, |s| {
                s.commit(accept_count as usize, replacement, done)
            }),
            Message::CommitSequence {
                session_id,
                tokens,
                done,
            } => self.on_commit(state, session_id, |s| s.commit_sequence(&tokens, done)),
            Message::UploadAdapter {
                adapter,
                base_proxy_fingerprint,
            } => {
                state.uploaded = Some(self.accept_upload(&adapter, base_proxy_fingerprint));
                None
            }
            Message::ServerGenerate {
                session_id,
                prompt,
                mode,
                max_new_tokens,
            } => {
                let result = match mode {
                    GenerateMode::Api => black_box_greedy(self.black_box.as_ref(), &prompt, max_new_tokens)
                        .map_err(|e| (ErrorCode::BadRequest, e.to_string())),
                    GenerateMode::Transfer => match &state.uploaded {
                        None => Err((ErrorCode::NoAdapter, "no adapter uploaded".to_string())),
                        Some(Err(e)) => Err(e.clone()),
                        Some(Ok(proxies)) => offset_generate(
                            self.black_box.as_ref(),
                            proxies,
                            &prompt,
                            &GenerationConfig::greedy(max_new_tokens),
                        )
                        .map_err(|e| (ErrorCode::BadRequest, e.to_string())),
                    },
                };
                Some(match result {
                    Ok(tokens) => Message::GenerationResult { session_id, tokens },
                    Err((code, text)) => Message::error(code, text),
                })
            }
            other => Some(Message::error(
                ErrorCode::Unexpected,
                format!(
                    "{} is not a client request (peer fingerprint {:016x})",
                    other.name(),
                    state.peer_fingerprint
                ),
            )),
        }
    }

    fn draft_reply(&self, session: &mut ServerSession) -> Message {
        match session.draft(self.black_box.as_ref()) {
            Ok(d) => Message::DraftBatch {
                session_id: session.id(),
                tokens: d.tokens,
                logits: d.logits,
            },
            Err(e @ Error::BudgetExhausted(_)) => Message::error(ErrorCode::BudgetExhausted, e.to_string()),
            Err(e) => Message::error(ErrorCode::BadRequest, e.to_string()),
        }
    }

    fn on_commit(
        &self,
        state: &mut ConnectionState,
        session_id: u64,
        apply: impl FnOnce(&mut ServerSession) -> Result<crate::protocol::CommitOutcome>,
    ) -> Option<Message> {
        let Some(session) = state.sessions.get_mut(&session_id) else {
            return Some(Message::error(
                ErrorCode::SessionUnknown,
                Error::SessionUnknown(session_id).to_string(),
            ));
        };
        match apply(session) {
            Ok(outcome) => {
                if let Some(obs) = &self.observer {
                    obs(session_id, session.canonical());
                }
                if outcome.done {
                    state.sessions.remove(&session_id);
                    None
                } else {
                    Some(self.draft_reply(session))
                }
            }
            Err(e) => {
                state.sessions.remove(&session_id);
                let code = match e {
                    Error::OutOfSync(_) => ErrorCode::OutOfSync,
                    _ => ErrorCode::InvalidCommit,
                };
                Some(Message::error(code, e.to_string()))
            }
        }
    }

    fn accept_upload(
        &self,
        adapter: &[u8],
        fingerprint: u64,
    ) -> std::result::Result<ProxyPair, (ErrorCode, String)> {
        let base = self
            .base_proxy
            .as_ref()
            .ok_or((ErrorCode::NoAdapter, "server hosts no base proxy".to_string()))?;
        let expected = base.fingerprint();
        if expected != fingerprint {
            return Err((
                ErrorCode::FingerprintMismatch,
                format!("server base proxy {expected:016x}, adapter trained on {fingerprint:016x}"),
            ));
        }
        let adapter =
            LoraAdapter::from_bytes(adapter).map_err(|e| (ErrorCode::Malformed, e.to_string()))?;
        ProxyPair::new(base.clone(), adapter).map_err(|e| (ErrorCode::BadRequest, e.to_string()))
    }

    /// Starts a server thread on an in-process pipe and returns the client end.
    pub fn spawn_in_process(&self) -> (Connection, JoinHandle<Result<()>>) {
        let (client, server_end) = in_process_pair();
        let server = self.clone();
        let handle = std::thread::spawn(move || server.serve(server_end));
        (client, handle)
    }

    pub fn bind(&self, addr: impl ToSocketAddrs) -> Result<SocketServer> {
        Ok(SocketServer {
            listener: TcpListener::bind(addr)?,
            server: self.clone(),
        })
    }
}

/// TCP front end: one thread per accepted connection.
#[derive(Debug)]
pub struct SocketServer {
    listener: TcpListener,
    server: Server,
}

impl SocketServer {
    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections forever.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let conn = Connection::tcp(stream?, Side::Server)?;
            let server = self.server.clone();
            std::thread::spawn(move || server.serve(conn));
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, std::thread::spawn(move || self.run())))
    }
}

//! Client/server state machines for offset-adapted generation.
//!
//! Three ways to generate:
//!
//! - speculative ([`Client::run_speculative`]): the server drafts up to `S`
//!   greedy tokens with their logits, the client verifies them against the
//!   offset-adjusted samples, accepts the agreeing prefix and replaces the
//!   first disagreement. With `S = 1` this is exactly the one-token-per-round
//!   loop ([`Client::run_per_token`]).
//! - transfer ([`Client::run_transfer`]): the client uploads its adapter and
//!   the server runs the whole adapted loop against its own base-proxy copy.
//! - api ([`Client::run_api`]): plain black-box greedy generation.

mod client;
pub mod local;
mod message;
mod server;
mod session;

pub use client::{Client, CommitMode, Generation};
pub use message::{ErrorCode, GenerateMode, Message, PROTOCOL_VERSION};
pub use server::{handshake, CommitObserver, Handshake, Server, SocketServer};
pub use session::{ClientSession, CommitOutcome, Draft, ProxyPair, ServerSession, Verdict};

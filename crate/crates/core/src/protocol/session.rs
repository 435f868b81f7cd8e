use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lora::{apply_adapter, AdaptedModel, LoraAdapter};
use crate::models::{LogitModel, TinyNeuralLM};
use crate::offset::{adapted_next_token, OffsetTriple};
use crate::sampling::{argmax_sample, GenerationConfig, TokenSampler};
use crate::vocab::{LogitVector, TokenId, TokenSequence, Vocab};

/// Client-side proxies: the frozen base and the same base with an adapter.
#[derive(Debug, Clone)]
pub struct ProxyPair {
    base: Arc<TinyNeuralLM>,
    adapted: AdaptedModel,
}

impl ProxyPair {
    pub fn new(base: Arc<TinyNeuralLM>, adapter: LoraAdapter) -> Result<Self> {
        let adapted = apply_adapter(base.clone(), adapter)?;
        Ok(Self { base, adapted })
    }

    pub fn base(&self) -> &Arc<TinyNeuralLM> {
        &self.base
    }

    pub fn adapted(&self) -> &AdaptedModel {
        &self.adapted
    }

    pub fn vocab(&self) -> Vocab {
        self.base.vocab()
    }
}

pub(crate) fn validate_prompt(prompt: &[TokenId], vocab: &Vocab) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::InvalidSequence("prompt must not be empty".into()));
    }
    TokenSequence::new(prompt.to_vec(), vocab).map(|_| ())
}

/// A freshly drafted continuation, not yet part of the canonical sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub tokens: Vec<TokenId>,
    pub logits: Vec<LogitVector>,
}

/// Server-side state of one generation. `canonical` is the committed
/// history; a new draft is always computed from it, so truncating the
/// rejected suffix is the whole of cache rollback.
#[derive(Debug, Clone)]
pub struct ServerSession {
    id: u64,
    vocab: Vocab,
    canonical: Vec<TokenId>,
    prompt_len: usize,
    draft_len: usize,
    max_new_tokens: u32,
    generated: u32,
    pending: Option<Vec<TokenId>>,
    done: bool,
}

/// What a processed commit added to the canonical sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitOutcome {
    pub committed: Vec<TokenId>,
    pub done: bool,
}

impl ServerSession {
    pub fn new(
        id: u64,
        prompt: Vec<TokenId>,
        draft_len: usize,
        max_new_tokens: u32,
        vocab: Vocab,
    ) -> Result<Self> {
        validate_prompt(&prompt, &vocab)?;
        if draft_len == 0 {
            return Err(Error::Range("draft length must be at least 1".into()));
        }
        let done = max_new_tokens == 0 || prompt.last() == Some(&vocab.eos());
        Ok(Self {
            id,
            vocab,
            prompt_len: prompt.len(),
            canonical: prompt,
            draft_len,
            max_new_tokens,
            generated: 0,
            pending: None,
            done,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn canonical(&self) -> &[TokenId] {
        &self.canonical
    }

    pub fn generated_tokens(&self) -> &[TokenId] {
        &self.canonical[self.prompt_len..]
    }

    pub fn tokens_generated(&self) -> u32 {
        self.generated
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn remaining(&self) -> u32 {
        self.max_new_tokens - self.generated
    }

    /// Greedy autoregressive draft of up to `min(S, remaining budget)`
    /// tokens, stopping right after an EOS.
    pub fn draft(&mut self, model: &dyn LogitModel) -> Result<Draft> {
        if self.done || self.remaining() == 0 {
            return Err(Error::BudgetExhausted(self.id));
        }
        let n = self.draft_len.min(self.remaining() as usize);
        let mut ctx = self.canonical.clone();
        let mut tokens = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for _ in 0..n {
            let z = model.next_logits(&ctx)?;
            let t = argmax_sample(&z);
            ctx.push(t);
            tokens.push(t);
            logits.push(z);
            if t == self.vocab.eos() {
                break;
            }
        }
        self.pending = Some(tokens.clone());
        Ok(Draft { tokens, logits })
    }

    /// Appends the accepted draft prefix and the optional replacement and
    /// discards the rest of the outstanding draft.
    pub fn commit(
        &mut self,
        accept_count: usize,
        replacement: Option<TokenId>,
        client_done: bool,
    ) -> Result<CommitOutcome> {
        let draft = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidCommit("no outstanding draft".into()))?;
        if accept_count > draft.len() {
            return Err(Error::InvalidCommit(format!(
                "accepted {accept_count} of {} drafted tokens",
                draft.len()
            )));
        }
        if replacement.is_some() != (accept_count < draft.len()) {
            return Err(Error::InvalidCommit(format!(
                "replacement must be present exactly when the draft is cut short \
                 (accepted {accept_count} of {})",
                draft.len()
            )));
        }
        if let Some(t) = replacement {
            self.vocab
                .check_token(t)
                .map_err(|e| Error::InvalidCommit(e.to_string()))?;
        }
        let mut committed = draft[..accept_count].to_vec();
        committed.extend(replacement);
        self.apply(committed, client_done)
    }

    /// Full-resend variant: `sequence` is the client's whole sequence and
    /// must extend the canonical one by a draft prefix plus at most one
    /// replacement token.
    pub fn commit_sequence(&mut self, sequence: &[TokenId], client_done: bool) -> Result<CommitOutcome> {
        if sequence.len() <= self.canonical.len() || !sequence.starts_with(&self.canonical) {
            return Err(Error::OutOfSync(
                "resent sequence does not extend the committed history".into(),
            ));
        }
        let draft = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::InvalidCommit("no outstanding draft".into()))?;
        let added = &sequence[self.canonical.len()..];
        let agree = added.iter().zip(draft).take_while(|(a, b)| a == b).count();
        let (accept_count, replacement) = if agree == added.len() {
            (agree, None)
        } else if agree + 1 == added.len() {
            (agree, Some(added[agree]))
        } else {
            return Err(Error::InvalidCommit(
                "resent sequence diverges from the draft at more than one position".into(),
            ));
        };
        self.commit(accept_count, replacement, client_done)
    }

    fn apply(&mut self, committed: Vec<TokenId>, client_done: bool) -> Result<CommitOutcome> {
        self.generated += committed.len() as u32;
        self.canonical.extend_from_slice(&committed);
        let done = self.generated == self.max_new_tokens || committed.last() == Some(&self.vocab.eos());
        if done != client_done {
            return Err(Error::OutOfSync(format!(
                "client says done={client_done}, server computes done={done}"
            )));
        }
        self.done = done;
        Ok(CommitOutcome { committed, done })
    }
}

/// The client's verdict on one draft.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub accept_count: usize,
    pub replacement: Option<TokenId>,
    pub done: bool,
}

/// Client-side mirror of a session.
#[derive(Debug, Clone)]
pub struct ClientSession {
    id: u64,
    vocab: Vocab,
    mirror: Vec<TokenId>,
    prompt_len: usize,
    draft_len: usize,
    max_new_tokens: u32,
    generated: u32,
    sampler: TokenSampler,
    done: bool,
}

impl ClientSession {
    pub fn new(
        id: u64,
        prompt: Vec<TokenId>,
        draft_len: usize,
        config: &GenerationConfig,
        vocab: Vocab,
    ) -> Result<Self> {
        config.validate()?;
        validate_prompt(&prompt, &vocab)?;
        if draft_len == 0 {
            return Err(Error::Range("draft length must be at least 1".into()));
        }
        let done = config.max_new_tokens == 0 || prompt.last() == Some(&vocab.eos());
        Ok(Self {
            id,
            vocab,
            prompt_len: prompt.len(),
            mirror: prompt,
            draft_len,
            max_new_tokens: config.max_new_tokens,
            generated: 0,
            sampler: config.sampler(),
            done,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mirror(&self) -> &[TokenId] {
        &self.mirror
    }

    pub fn generated_tokens(&self) -> &[TokenId] {
        &self.mirror[self.prompt_len..]
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Verifies a draft: proxies are evaluated at the contexts ending just
    /// before each drafted token, the adjusted token is sampled at each
    /// position, and the first disagreement with the draft becomes the
    /// replacement. Updates the mirror to match the resulting commit.
    pub fn verify(
        &mut self,
        proxies: &ProxyPair,
        tokens: &[TokenId],
        logits: &[LogitVector],
    ) -> Result<Verdict> {
        if self.done {
            return Err(Error::OutOfSync("draft received for a finished session".into()));
        }
        let n = tokens.len();
        let remaining = (self.max_new_tokens - self.generated) as usize;
        if n == 0 || n != logits.len() || n > self.draft_len.min(remaining) {
            return Err(Error::OutOfSync(format!(
                "draft of {n} tokens / {} logit vectors does not fit draft length {} with {remaining} tokens left",
                logits.len(),
                self.draft_len
            )));
        }
        self.vocab.check_tokens(tokens)?;
        if let Some(pos) = tokens.iter().position(|&t| t == self.vocab.eos()) {
            if pos + 1 != n {
                return Err(Error::OutOfSync("draft continues past EOS".into()));
            }
        }
        for z in logits {
            if z.len() != self.vocab.len() {
                return Err(Error::VocabMismatch(format!(
                    "draft logits have {} entries, vocabulary has {}",
                    z.len(),
                    self.vocab.len()
                )));
            }
        }

        // contexts mirror ++ tokens[..i] for i in 0..n
        let mut contexts = self.mirror.clone();
        contexts.extend_from_slice(&tokens[..n - 1]);
        let base = proxies.base().batch_next_logits(&contexts, n)?;
        let adapted = proxies.adapted().batch_next_logits(&contexts, n)?;

        let mut accept_count = n;
        let mut replacement = None;
        for i in 0..n {
            let triple = OffsetTriple::new(&logits[i], &base[i], &adapted[i])?;
            let x = adapted_next_token(&triple, &mut self.sampler)?;
            if x != tokens[i] {
                accept_count = i;
                replacement = Some(x);
                break;
            }
        }

        self.mirror.extend_from_slice(&tokens[..accept_count]);
        self.mirror.extend(replacement);
        self.generated += (accept_count + replacement.is_some() as usize) as u32;
        self.done = self.generated == self.max_new_tokens || self.mirror.last() == Some(&self.vocab.eos());
        Ok(Verdict {
            accept_count,
            replacement,
            done: self.done,
        })
    }
}

//! Vocabulary, token and logit value types shared by every model and both
//! ends of the protocol.
//!
//! The black-box model and both proxies must agree on one [`Vocab`]; logit
//! vectors from different models are only comparable entry-by-entry because
//! of that agreement.

use std::fmt;

use crate::error::{Error, Result};

/// Shared tokenizer description: number of ids plus the two reserved ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocab {
    size: u32,
    eos_id: u32,
    bos_id: u32,
}

impl Vocab {
    pub fn new(size: u32, eos_id: u32, bos_id: u32) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidVocab(format!("size {size} < 3")));
        }
        if eos_id >= size || bos_id >= size {
            return Err(Error::InvalidVocab(format!(
                "reserved ids (eos {eos_id}, bos {bos_id}) must be below size {size}"
            )));
        }
        if eos_id == bos_id {
            return Err(Error::InvalidVocab("eos_id and bos_id must differ".into()));
        }
        Ok(Self {
            size,
            eos_id,
            bos_id,
        })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos(&self) -> TokenId {
        TokenId(self.eos_id)
    }

    pub fn bos(&self) -> TokenId {
        TokenId(self.bos_id)
    }

    pub fn token(&self, id: u32) -> Result<TokenId> {
        if id < self.size {
            Ok(TokenId(id))
        } else {
            Err(Error::TokenOutOfRange {
                token: id,
                size: self.size,
            })
        }
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        self.token(token.0).map(|_| ())
    }

    /// Checks ids only; the end-of-sequence placement rule is left to
    /// [`TokenSequence::new`].
    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        tokens.iter().try_for_each(|&t| self.check_token(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered tokens, all within a vocabulary, holding at most one EOS and
/// only in last position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        vocab.check_tokens(&tokens)?;
        if let Some(pos) = tokens.iter().position(|&t| t == vocab.eos()) {
            if pos + 1 != tokens.len() {
                return Err(Error::InvalidSequence(format!(
                    "eos at position {pos} is not last (length {})",
                    tokens.len()
                )));
            }
        }
        Ok(Self(tokens))
    }

    pub fn from_ids(ids: &[u32], vocab: &Vocab) -> Result<Self> {
        Self::new(ids.iter().map(|&i| TokenId(i)).collect(), vocab)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|t| t.0).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

/// One finite binary32 score per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f32>);

impl LogitVector {
    pub fn new(scores: Vec<f32>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidLogits("empty logit vector".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidLogits(format!(
                "non-finite score {} at index {i}",
                scores[i]
            )));
        }
        Ok(Self(scores))
    }

    /// Like [`LogitVector::new`] but also pins the length to the vocabulary.
    pub fn for_vocab(scores: Vec<f32>, vocab: &Vocab) -> Result<Self> {
        if scores.len() != vocab.len() {
            return Err(Error::LengthMismatch {
                expected: vocab.len(),
                actual: scores.len(),
            });
        }
        Self::new(scores)
    }

    pub(crate) fn from_f64(scores: &[f64]) -> Result<Self> {
        Self::new(scores.iter().map(|&s| s as f32).collect())
    }

    pub fn scores(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &LogitVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

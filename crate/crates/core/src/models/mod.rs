//! Deterministic next-token-logit backends.
//!
//! Both the server's black-box model and the client's proxies sit behind
//! [`LogitModel`]. Two concrete backends exist: a smoothed bigram count
//! table and a fixed-window MLP ([`TinyNeuralLM`]) that supports low-rank
//! adapters.
//!
//! Snapshot layout (`PRDM`), all little-endian:
//!
//! ```text
//! "PRDM" | version u8 | arch u8 (1 = bigram, 2 = tiny-neural)
//!        | vocab size u32 | eos u32 | bos u32 | parameters...
//! bigram:      counts u32[V*V] row-major | alpha f32
//! tiny-neural: context u32 | embed u32 | hidden u32
//!              | E f32[V*d] | W1 f32[h*C*d] | b1 f32[h] | W2 f32[V*h] | b2 f32[V]
//! ```
//!
//! The fingerprint is FNV-1a 64 over the full snapshot bytes.

mod bigram;
mod tiny;

use std::path::Path;

pub use bigram::{fit_bigram, BigramTableModel};
pub use tiny::{pretrain, PretrainConfig, TinyDims, TinyGrads, TinyNeuralLM};

use crate::codec::{fnv1a64, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::vocab::{LogitVector, TokenId, Vocab};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PRDM";
pub const SNAPSHOT_VERSION: u8 = 1;

const ARCH_BIGRAM: u8 = 1;
const ARCH_TINY: u8 = 2;

pub trait LogitModel: Send + Sync {
    fn vocab(&self) -> Vocab;

    fn fingerprint(&self) -> u64;

    /// Logits for the token that follows `seq`.
    fn next_logits(&self, seq: &[TokenId]) -> Result<LogitVector>;

    /// Logits at the `count` trailing context boundaries of `seq`: element
    /// `j` (0-based) is `next_logits(&seq[..seq.len() - count + 1 + j])`.
    fn batch_next_logits(&self, seq: &[TokenId], count: usize) -> Result<Vec<LogitVector>> {
        if count == 0 || count > seq.len() {
            return Err(Error::Range(format!(
                "batch count {count} outside 1..={}",
                seq.len()
            )));
        }
        let first = seq.len() - count + 1;
        (first..=seq.len())
            .map(|end| self.next_logits(&seq[..end]))
            .collect()
    }
}

pub(crate) fn check_input(vocab: &Vocab, seq: &[TokenId]) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::InvalidSequence("empty input sequence".into()));
    }
    seq.iter().try_for_each(|&t| {
        vocab.check_token(t).map_err(|_| {
            Error::VocabMismatch(format!(
                "token {t} outside model vocabulary of size {}",
                vocab.size()
            ))
        })
    })
}

/// Any snapshot-loadable backend.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Bigram(BigramTableModel),
    Tiny(TinyNeuralLM),
}

impl Model {
    pub fn arch_name(&self) -> &'static str {
        match self {
            Model::Bigram(_) => "bigram",
            Model::Tiny(_) => "tiny-neural",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(SNAPSHOT_MAGIC);
        w.u8(SNAPSHOT_VERSION);
        let vocab = self.vocab();
        w.u8(match self {
            Model::Bigram(_) => ARCH_BIGRAM,
            Model::Tiny(_) => ARCH_TINY,
        });
        w.u32(vocab.size());
        w.u32(vocab.eos().0);
        w.u32(vocab.bos().0);
        match self {
            Model::Bigram(m) => m.write_params(&mut w),
            Model::Tiny(m) => m.write_params(&mut w),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != SNAPSHOT_MAGIC {
            return Err(Error::malformed(0, "bad snapshot magic"));
        }
        let version = r.u8("version")?;
        if version != SNAPSHOT_VERSION {
            return Err(r.malformed(format!("unsupported snapshot version {version}")));
        }
        let arch = r.u8("architecture tag")?;
        let at = r.offset();
        let vocab = Vocab::new(r.u32("vocab size")?, r.u32("eos id")?, r.u32("bos id")?)
            .map_err(|e| Error::malformed(at, e.to_string()))?;
        let model = match arch {
            ARCH_BIGRAM => Model::Bigram(BigramTableModel::read_params(vocab, &mut r)?),
            ARCH_TINY => Model::Tiny(TinyNeuralLM::read_params(vocab, &mut r)?),
            other => return Err(Error::malformed(5, format!("unknown architecture tag {other}"))),
        };
        r.expect_end()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn inner(&self) -> &dyn LogitModel {
        match self {
            Model::Bigram(m) => m,
            Model::Tiny(m) => m,
        }
    }
}

impl LogitModel for Model {
    fn vocab(&self) -> Vocab {
        self.inner().vocab()
    }

    fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    fn next_logits(&self, seq: &[TokenId]) -> Result<LogitVector> {
        self.inner().next_logits(seq)
    }
}

impl From<BigramTableModel> for Model {
    fn from(m: BigramTableModel) -> Self {
        Model::Bigram(m)
    }
}

impl From<TinyNeuralLM> for Model {
    fn from(m: TinyNeuralLM) -> Self {
        Model::Tiny(m)
    }
}

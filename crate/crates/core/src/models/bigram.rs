use crate::codec::{fnv1a64, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::{check_input, LogitModel};
use crate::vocab::{LogitVector, TokenId, TokenSequence, Vocab};

/// Additively smoothed bigram table. Logits for context `i` are
/// `ln(counts[i][j] + alpha)`, left unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramTableModel {
    vocab: Vocab,
    counts: Vec<u32>,
    alpha: f32,
}

impl BigramTableModel {
    pub fn from_counts(vocab: Vocab, counts: Vec<u32>, alpha: f32) -> Result<Self> {
        if counts.len() != vocab.len() * vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "bigram table has {} cells, vocabulary needs {}",
                counts.len(),
                vocab.len() * vocab.len()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            vocab,
            counts,
            alpha,
        })
    }

    pub fn count(&self, from: TokenId, to: TokenId) -> u32 {
        self.counts[from.index() * self.vocab.len() + to.index()]
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub(crate) fn write_params(&self, w: &mut ByteWriter) {
        for &c in &self.counts {
            w.u32(c);
        }
        w.f32(self.alpha);
    }

    pub(crate) fn read_params(vocab: Vocab, r: &mut ByteReader<'_>) -> Result<Self> {
        let cells = vocab.len() * vocab.len();
        if r.remaining() < cells * 4 + 4 {
            return Err(r.malformed("truncated bigram table"));
        }
        let counts = (0..cells)
            .map(|_| r.u32("bigram count"))
            .collect::<Result<Vec<_>>>()?;
        let at = r.offset();
        let alpha = r.f32("alpha")?;
        Self::from_counts(vocab, counts, alpha).map_err(|e| Error::malformed(at, e.to_string()))
    }
}

pub fn fit_bigram(corpus: &[TokenSequence], vocab: Vocab, alpha: f32) -> Result<BigramTableModel> {
    let v = vocab.len();
    let mut counts = vec![0u32; v * v];
    let mut pairs = 0usize;
    for doc in corpus {
        vocab.check_tokens(doc.as_slice())?;
        for w in doc.as_slice().windows(2) {
            counts[w[0].index() * v + w[1].index()] += 1;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyCorpus);
    }
    BigramTableModel::from_counts(vocab, counts, alpha)
}

impl LogitModel for BigramTableModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn fingerprint(&self) -> u64 {
        fnv1a64(&crate::models::Model::Bigram(self.clone()).to_bytes())
    }

    fn next_logits(&self, seq: &[TokenId]) -> Result<LogitVector> {
        check_input(&self.vocab, seq)?;
        let ctx = seq[seq.len() - 1].index();
        let v = self.vocab.len();
        let alpha = self.alpha as f64;
        let scores = self.counts[ctx * v..(ctx + 1) * v]
            .iter()
            .map(|&c| ((c as f64) + alpha).ln() as f32)
            .collect();
        LogitVector::new(scores)
    }
}

//! Logit-offset adaptation.
//!
//! The adapted proxy and the base proxy disagree exactly where fine-tuning
//! moved the proxy. Their raw-logit difference is added to the black-box
//! logits before sampling:
//!
//! ```text
//! z = z_B + (ẑ_P − z_P)
//! ```
//!
//! All arithmetic is binary32 and always evaluated in that order: the
//! offset first, then the sum.

use crate::error::{Error, Result};
use crate::sampling::TokenSampler;
use crate::vocab::{LogitVector, TokenId};

/// Black-box, base-proxy and adapted-proxy logits for one position.
#[derive(Debug, Clone, Copy)]
pub struct OffsetTriple<'a> {
    pub black_box: &'a LogitVector,
    pub base_proxy: &'a LogitVector,
    pub adapted_proxy: &'a LogitVector,
}

impl<'a> OffsetTriple<'a> {
    pub fn new(
        black_box: &'a LogitVector,
        base_proxy: &'a LogitVector,
        adapted_proxy: &'a LogitVector,
    ) -> Result<Self> {
        same_len(black_box, base_proxy)?;
        same_len(black_box, adapted_proxy)?;
        Ok(Self {
            black_box,
            base_proxy,
            adapted_proxy,
        })
    }

    pub fn adjusted(&self) -> Result<LogitVector> {
        adjust(
            self.black_box,
            &adaptation_offset(self.adapted_proxy, self.base_proxy)?,
        )
    }
}

fn same_len(a: &LogitVector, b: &LogitVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `ẑ_P − z_P`, elementwise.
pub fn adaptation_offset(adapted: &LogitVector, base: &LogitVector) -> Result<LogitVector> {
    same_len(adapted, base)?;
    let diff = adapted
        .scores()
        .iter()
        .zip(base.scores())
        .map(|(a, b)| a - b)
        .collect();
    LogitVector::new(diff).map_err(|_| Error::InvalidLogits("offset overflowed binary32".into()))
}

/// `z_B + offset`, elementwise.
pub fn adjust(black_box: &LogitVector, offset: &LogitVector) -> Result<LogitVector> {
    same_len(black_box, offset)?;
    let sum = black_box
        .scores()
        .iter()
        .zip(offset.scores())
        .map(|(z, o)| z + o)
        .collect();
    LogitVector::new(sum)
        .map_err(|_| Error::InvalidLogits("adjusted logits overflowed binary32".into()))
}

/// Samples the next token from the offset-adjusted logits.
pub fn adapted_next_token(triple: &OffsetTriple<'_>, sampler: &mut TokenSampler) -> Result<TokenId> {
    Ok(sampler.sample(&triple.adjusted()?))
}

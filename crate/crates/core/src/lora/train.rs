use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lora::{backprop, init_adapter, LoraAdapter};
use crate::models::TinyNeuralLM;
use crate::vocab::TokenSequence;

/// Plain mini-batch SGD settings for adapter training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Zero is allowed and returns the initial adapter.
    pub epochs: usize,
    pub rank: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 3,
            rank: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.rank == 0 {
            return Err(Error::InvalidConfig("batch size and rank must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Corpus-wide mean loss before the first update.
    pub initial_loss: f64,
    /// Mean of the mini-batch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Corpus-wide mean loss of the returned (binary32-rounded) adapter.
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains a fresh adapter on `corpus` with the base frozen. Deterministic
/// in `(config.seed, corpus order)`. The returned adapter is rounded to
/// binary32 so it survives a file round-trip unchanged.
pub fn train_lora(
    base: &TinyNeuralLM,
    corpus: &[TokenSequence],
    config: &TrainConfig,
) -> Result<(LoraAdapter, TrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut adapter = init_adapter(base, config.rank, config.seed)?;
    let all: Vec<&TokenSequence> = corpus.iter().collect();
    let (initial_loss, _, _) = backprop(base, Some(&adapter), &all, false)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, _, grads) = backprop(base, Some(&adapter), &batch, false)?;
            let grads = grads.expect("adapter present");
            for (f, (db, da)) in adapter.factors.iter_mut().zip(&grads.factors) {
                f.b.add_scaled(db, -config.learning_rate);
                f.a.add_scaled(da, -config.learning_rate);
            }
            total += loss;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    adapter.round_to_f32();
    let (final_loss, _, _) = backprop(base, Some(&adapter), &all, false)?;
    Ok((
        adapter,
        TrainReport {
            initial_loss,
            epoch_losses,
            final_loss,
            steps,
        },
    ))
}

#![allow(dead_code)]

use std::sync::Arc;

use prada_core::lora::{init_adapter, train_lora, LoraAdapter, TrainConfig};
use prada_core::models::{fit_bigram, pretrain, LogitModel, PretrainConfig, TinyDims, TinyNeuralLM};
use prada_core::protocol::{Client, ProxyPair, Server};
use prada_core::{TokenId, TokenSequence, Vocab};
use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EOS: u32 = 1;
pub const BOS: u32 = 0;

pub fn vocab(size: u32) -> Vocab {
    Vocab::new(size, EOS, BOS).unwrap()
}

pub fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&i| TokenId(i)).collect()
}

pub fn small_dims() -> TinyDims {
    TinyDims {
        context: 3,
        embed: 6,
        hidden: 10,
    }
}

/// Row-stochastic transition table over the whole vocabulary.
#[derive(Debug, Clone)]
pub struct Chain {
    pub probs: Vec<Vec<f64>>,
}

impl Chain {
    /// Softmax of Gaussian scores, with the EOS column scaled down so
    /// documents run for a while.
    pub fn random(v: usize, seed: u64, sharpness: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = (0..v)
            .map(|_| {
                let mut row: Vec<f64> = (0..v)
                    .map(|_| {
                        let g: f64 = rng.random_range(-1.0..1.0);
                        (sharpness * g).exp()
                    })
                    .collect();
                row[EOS as usize] *= 0.15;
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
                row
            })
            .collect();
        Self { probs }
    }

    /// Moves mass in every row towards one favoured successor.
    pub fn shifted(&self, boost: f64, seed: u64) -> Self {
        let v = self.probs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = self
            .probs
            .iter()
            .map(|row| {
                let favoured = rng.random_range(2..v);
                let mut r = row.clone();
                r[favoured] *= boost;
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|p| *p /= s);
                r
            })
            .collect();
        Self { probs }
    }

    pub fn sample_corpus(&self, vocab: &Vocab, docs: usize, max_len: usize, seed: u64) -> Vec<TokenSequence> {
        let v = self.probs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<WeightedIndex<f64>> =
            self.probs.iter().map(|r| WeightedIndex::new(r).unwrap()).collect();
        (0..docs)
            .map(|_| {
                let mut seq = vec![rng.random_range(2..v) as u32];
                while seq.len() < max_len {
                    let next = rows[*seq.last().unwrap() as usize].sample(&mut rng) as u32;
                    seq.push(next);
                    if next == EOS {
                        break;
                    }
                }
                TokenSequence::from_ids(&seq, vocab).unwrap()
            })
            .collect()
    }
}

/// Black-box and proxy pair used by most protocol tests.
pub struct World {
    pub vocab: Vocab,
    pub black_box: Arc<dyn LogitModel>,
    pub base: Arc<TinyNeuralLM>,
    pub adapter: LoraAdapter,
}

impl World {
    pub fn proxies(&self) -> ProxyPair {
        ProxyPair::new(self.base.clone(), self.adapter.clone()).unwrap()
    }

    pub fn server(&self) -> Server {
        Server::new(self.black_box.clone()).with_base_proxy(self.base.clone())
    }

    pub fn client(&self) -> Client {
        let (conn, _h) = self.server().spawn_in_process();
        Client::connect(conn, self.vocab, Some(self.proxies())).unwrap()
    }
}

pub enum BlackBoxKind {
    Bigram,
    Tiny,
}

/// Random world: a black-box fit on one chain, a random proxy base and
/// either an untouched (zero-offset) or a trained adapter.
pub fn world(seed: u64, kind: BlackBoxKind, trained: bool) -> World {
    let vocab = vocab(12);
    let chain = Chain::random(12, seed, 2.0);
    let corpus = chain.sample_corpus(&vocab, 40, 12, seed ^ 0x55);
    let black_box: Arc<dyn LogitModel> = match kind {
        BlackBoxKind::Bigram => Arc::new(fit_bigram(&corpus, vocab, 0.5).unwrap()),
        BlackBoxKind::Tiny => Arc::new(
            pretrain(
                &TinyNeuralLM::random(vocab, small_dims(), seed ^ 0x77),
                &corpus,
                &PretrainConfig {
                    epochs: 2,
                    ..PretrainConfig::default()
                },
            )
            .unwrap(),
        ),
    };
    let base = Arc::new(TinyNeuralLM::random(vocab, small_dims(), seed ^ 0x99));
    let adapter = if trained {
        let local = chain.shifted(6.0, seed ^ 0x33).sample_corpus(&vocab, 24, 10, seed ^ 0x44);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 4,
            seed,
            ..TrainConfig::default()
        };
        train_lora(&base, &local, &cfg).unwrap().0
    } else {
        init_adapter(&base, 4, seed).unwrap()
    };
    World {
        vocab,
        black_box,
        base,
        adapter,
    }
}

/// Greedy offset-adapted generation written out longhand: no protocol, no
/// offset module, just the three models and the arithmetic.
pub fn monolithic_oracle(w: &World, prompt: &[TokenId], max_new: u32) -> Vec<TokenId> {
    let proxies = w.proxies();
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    if prompt.last() == Some(&w.vocab.eos()) {
        return out;
    }
    while out.len() < max_new as usize {
        let zb = w.black_box.next_logits(&seq).unwrap();
        let zp = w.base.next_logits(&seq).unwrap();
        let zh = proxies.adapted().next_logits(&seq).unwrap();
        let mut best = 0usize;
        let mut best_score = f32::NEG_INFINITY;
        for j in 0..zb.len() {
            let s = zb.scores()[j] + (zh.scores()[j] - zp.scores()[j]);
            if s > best_score {
                best = j;
                best_score = s;
            }
        }
        let t = TokenId(best as u32);
        seq.push(t);
        out.push(t);
        if t == w.vocab.eos() {
            break;
        }
    }
    out
}

/// Plain black-box greedy decoding, written out longhand.
pub fn black_box_oracle(model: &dyn LogitModel, prompt: &[TokenId], max_new: u32) -> Vec<TokenId> {
    let eos = model.vocab().eos();
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    if prompt.last() == Some(&eos) {
        return out;
    }
    while out.len() < max_new as usize {
        let z = model.next_logits(&seq).unwrap();
        let mut best = 0;
        for j in 1..z.len() {
            if z.scores()[j] > z.scores()[best] {
                best = j;
            }
        }
        let t = TokenId(best as u32);
        seq.push(t);
        out.push(t);
        if t == eos {
            break;
        }
    }
    out
}

pub fn random_prompt(rng: &mut ChaCha8Rng, vocab: &Vocab, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| TokenId(rng.random_range(2..vocab.size())))
        .collect()
}

/// Bigram black-box trained on the cycle 2 -> 3 -> ... -> V-1 -> 2, so its
/// greedy continuation never emits EOS. `repeats` controls how confident it is.
pub fn cycle_black_box(vocab: Vocab, repeats: usize) -> prada_core::models::BigramTableModel {
    let v = vocab.size();
    let cycle: Vec<u32> = (2..v).chain(2..v).collect();
    let corpus: Vec<TokenSequence> = (0..repeats)
        .map(|_| TokenSequence::from_ids(&cycle, &vocab).unwrap())
        .collect();
    fit_bigram(&corpus, vocab, 0.5).unwrap()
}

/// A world whose black-box walks the cycle; the trained adapter learns a
/// corpus where every third step jumps ahead instead.
pub fn cycle_world(v: u32, trained: bool) -> World {
    let vocab = vocab(v);
    let black_box: Arc<dyn LogitModel> = Arc::new(cycle_black_box(vocab, 2));
    let base = Arc::new(TinyNeuralLM::random(vocab, small_dims(), 21));
    let adapter = if trained {
        let next = |c: u32| if c.is_multiple_of(3) { (c + 4 - 2) % (v - 2) + 2 } else { (c + 1 - 2) % (v - 2) + 2 };
        let corpus: Vec<TokenSequence> = (2..v)
            .map(|start| {
                let mut seq = vec![start];
                while seq.len() < 16 {
                    seq.push(next(*seq.last().unwrap()));
                }
                TokenSequence::from_ids(&seq, &vocab).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 30,
            rank: 4,
            batch_size: 4,
            seed: 3,
        };
        train_lora(&base, &corpus, &cfg).unwrap().0
    } else {
        init_adapter(&base, 4, 3).unwrap()
    };
    World {
        vocab,
        black_box,
        base,
        adapter,
    }
}

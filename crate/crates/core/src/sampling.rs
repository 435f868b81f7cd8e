//! Token selection from logits.
//!
//! Greedy decoding takes the lowest index attaining the maximum score.
//! Stochastic decoding draws from `softmax(logits / temperature)` using
//! ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with `seed_from_u64`; every
//! draw consumes exactly one `f64` from the generator and maps it through
//! the cumulative distribution in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{LogitVector, TokenId};

pub type SamplerRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn argmax_sample(logits: &LogitVector) -> TokenId {
    let scores = logits.scores();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

pub fn seeded_sample(logits: &LogitVector, temperature: f64, rng: &mut SamplerRng) -> TokenId {
    debug_assert!(temperature > 0.0);
    let probs = softmax_f64(logits.scores(), temperature);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return TokenId(i as u32);
        }
    }
    // u landed in the rounding gap above the accumulated total
    TokenId(last_positive as u32)
}

fn softmax_f64(scores: &[f32], temperature: f64) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s as f64));
    let mut out: Vec<f64> = scores
        .iter()
        .map(|&s| ((s as f64 - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Log-probabilities in binary64, computed with max-subtraction.
pub fn log_softmax_f64(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    scores.iter().map(|&s| s - lse).collect()
}

pub fn log_softmax(logits: &LogitVector) -> LogitVector {
    let wide: Vec<f64> = logits.scores().iter().map(|&s| s as f64).collect();
    LogitVector::from_f64(&log_softmax_f64(&wide)).expect("log-softmax of finite logits is finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingMode {
    Greedy,
    Stochastic { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub max_new_tokens: u32,
    pub sampling: SamplingMode,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: u32) -> Self {
        Self {
            max_new_tokens,
            sampling: SamplingMode::Greedy,
        }
    }

    pub fn stochastic(max_new_tokens: u32, temperature: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            max_new_tokens,
            sampling: SamplingMode::Stochastic { temperature, seed },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A zero token budget is accepted and yields an empty generation.
    pub fn validate(&self) -> Result<()> {
        if let SamplingMode::Stochastic { temperature, .. } = self.sampling {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "temperature must be positive and finite, got {temperature}"
                )));
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> TokenSampler {
        TokenSampler::new(self.sampling)
    }
}

/// A sampling mode plus its generator state, owned by one generation.
#[derive(Debug, Clone)]
pub struct TokenSampler {
    mode: SamplingMode,
    rng: Option<SamplerRng>,
}

impl TokenSampler {
    pub fn new(mode: SamplingMode) -> Self {
        let rng = match mode {
            SamplingMode::Greedy => None,
            SamplingMode::Stochastic { seed, .. } => Some(rng_from_seed(seed)),
        };
        Self { mode, rng }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn sample(&mut self, logits: &LogitVector) -> TokenId {
        match (self.mode, self.rng.as_mut()) {
            (SamplingMode::Stochastic { temperature, .. }, Some(rng)) => {
                seeded_sample(logits, temperature, rng)
            }
            _ => argmax_sample(logits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn lv(v: &[f32]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_sample(&lv(&[-1.0, 3.0, 3.0, 0.5])), TokenId(1));
        assert_eq!(argmax_sample(&lv(&[0.0, 0.0, 0.0])), TokenId(0));
    }

    #[test]
    fn argmax_matches_linear_scan() {
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let v: Vec<f32> = (0..32).map(|_| rng.random_range(-5.0f32..5.0)).collect();
            // independent scan: first index whose value equals the maximum
            let max = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let expected = v.iter().position(|&x| x == max).unwrap();
            assert_eq!(argmax_sample(&lv(&v)).index(), expected);
        }
    }

    #[test]
    fn dominant_logit_always_sampled() {
        for seed in 0..50 {
            let mut rng = rng_from_seed(seed);
            assert_eq!(seeded_sample(&lv(&[1000.0, 0.0]), 1.0, &mut rng), TokenId(0));
        }
    }

    #[test]
    fn symmetric_logits_sample_evenly() {
        let mut rng = rng_from_seed(7);
        let logits = lv(&[0.0, 0.0]);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| seeded_sample(&logits, 1.0, &mut rng) == TokenId(0))
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((0.48..=0.52).contains(&freq), "freq {freq}");
    }

    #[test]
    fn tempered_frequencies_within_three_sigma() {
        // high-precision softmax of [1.0, 2.0, 0.5] / 0.7, evaluated with
        // mpmath at 50 digits and frozen here
        let expected = [0.176_607_442_074_921_5, 0.736_935_857_641_613, 0.086_456_700_283_465_54];
        let logits = lv(&[1.0, 2.0, 0.5]);
        let mut rng = rng_from_seed(2024);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[seeded_sample(&logits, 0.7, &mut rng).index()] += 1;
        }
        for (c, p) in counts.iter().zip(expected) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq} vs p {p}");
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let logits = lv(&[0.3, -0.2, 1.1, 0.0]);
        let mut a = rng_from_seed(99);
        let mut b = rng_from_seed(99);
        for _ in 0..100 {
            assert_eq!(
                seeded_sample(&logits, 0.9, &mut a),
                seeded_sample(&logits, 0.9, &mut b)
            );
        }
    }

    #[test]
    fn log_softmax_uniform_cases() {
        let out = log_softmax(&lv(&[0.0, 0.0]));
        for &x in out.scores() {
            assert!((x as f64 + std::f64::consts::LN_2).abs() < 1e-7);
        }
        for c in [-300.0f32, -1.5, 0.0, 7.25, 1.0e4] {
            let out = log_softmax(&lv(&[c; 4]));
            for &x in out.scores() {
                assert!((x as f64 + 4f64.ln()).abs() < 1e-6, "c={c} x={x}");
            }
        }
    }

    #[test]
    fn log_softmax_matches_binary64_recomputation() {
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let v: Vec<f32> = (0..32).map(|_| rng.random_range(-20.0f32..20.0)).collect();
            let out = log_softmax(&lv(&v));
            // naive binary64 evaluation without max-subtraction
            let z: f64 = v.iter().map(|&x| (x as f64).exp()).sum();
            for (o, &x) in out.scores().iter().zip(&v) {
                let expected = x as f64 - z.ln();
                assert!((*o as f64 - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn stochastic_config_rejects_bad_temperature() {
        assert!(GenerationConfig::stochastic(4, 0.0, 1).is_err());
        assert!(GenerationConfig::stochastic(4, f64::NAN, 1).is_err());
        assert!(GenerationConfig::stochastic(4, 0.5, 1).is_ok());
    }

    proptest! {
        #[test]
        fn argmax_is_shift_invariant(
            raw in proptest::collection::vec(-512i32..512, 1..40),
            shift in -64i32..64,
        ) {
            // multiples of 1/64 keep every shifted value exactly representable
            let base: Vec<f32> = raw.iter().map(|&r| r as f32 / 64.0).collect();
            let shifted: Vec<f32> = base.iter().map(|&x| x + shift as f32).collect();
            prop_assert_eq!(argmax_sample(&lv(&base)), argmax_sample(&lv(&shifted)));
        }

        #[test]
        fn log_softmax_normalizes(v in proptest::collection::vec(-50.0f32..50.0, 1..64)) {
            let out = log_softmax(&lv(&v));
            let total: f64 = out.scores().iter().map(|&x| (x as f64).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let total64: f64 = log_softmax_f64(&wide).iter().map(|x| x.exp()).sum();
            prop_assert!((total64 - 1.0).abs() < 1e-9);
        }
    }
}

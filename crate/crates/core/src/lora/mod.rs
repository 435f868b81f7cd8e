//! Low-rank adapters for [`TinyNeuralLM`].
//!
//! An adapter adds `scaling · B·A` to a frozen base matrix `W ∈ ℝ^{m×n}`,
//! with `B ∈ ℝ^{m×r}` and `A ∈ ℝ^{r×n}`. The product is never materialized:
//! the adapted layer computes `W·x + scaling · B·(A·x)`. Targets are the
//! hidden projection `W1` and the output projection `W2`.

mod grad;
mod io;
mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use grad::{loss_and_grads, AdapterGrads};
pub(crate) use grad::backprop;
pub use io::ADAPTER_MAGIC;
pub use train::{train_lora, TrainConfig, TrainReport};

use crate::codec::fnv1a64;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{check_input, LogitModel, Model, TinyNeuralLM};
use crate::vocab::{LogitVector, TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoraTarget {
    W1,
    W2,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 2] = [LoraTarget::W1, LoraTarget::W2];

    pub fn tag(self) -> u8 {
        match self {
            LoraTarget::W1 => 1,
            LoraTarget::W2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(LoraTarget::W1),
            2 => Some(LoraTarget::W2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactor {
    pub target: LoraTarget,
    /// m × r
    pub b: Matrix,
    /// r × n
    pub a: Matrix,
    pub scaling: f64,
}

impl LoraFactor {
    /// Dense `scaling · B·A`; only used for inspection and tests.
    pub fn delta(&self) -> Matrix {
        let mut d = self.b.matmul(&self.a);
        d.scale(self.scaling);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub factors: Vec<LoraFactor>,
}

impl LoraAdapter {
    pub fn factor(&self, target: LoraTarget) -> Option<&LoraFactor> {
        self.factors.iter().find(|f| f.target == target)
    }

    pub fn factor_mut(&mut self, target: LoraTarget) -> Option<&mut LoraFactor> {
        self.factors.iter_mut().find(|f| f.target == target)
    }

    /// All trainable values, per factor `B` then `A`, row-major.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.factors
            .iter_mut()
            .flat_map(|f| f.b.data_mut().iter_mut().chain(f.a.data_mut().iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.b.data().len() + f.a.data().len())
            .sum()
    }

    pub fn round_to_f32(&mut self) {
        for f in &mut self.factors {
            f.b.round_to_f32();
            f.a.round_to_f32();
            f.scaling = f.scaling as f32 as f64;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.factors
            .iter()
            .all(|f| f.b.data().iter().all(|&x| x == 0.0) || f.a.data().iter().all(|&x| x == 0.0))
    }

    pub fn check_against(&self, base: &TinyNeuralLM) -> Result<()> {
        let mut seen = Vec::new();
        for f in &self.factors {
            if seen.contains(&f.target) {
                return Err(Error::ShapeMismatch(format!("duplicate target {:?}", f.target)));
            }
            seen.push(f.target);
            let (m, n) = base.target_shape(f.target);
            if f.b.shape() != (m, self.rank) || f.a.shape() != (self.rank, n) {
                return Err(Error::ShapeMismatch(format!(
                    "{:?}: base is {m}x{n}, adapter B is {:?}, A is {:?} at rank {}",
                    f.target,
                    f.b.shape(),
                    f.a.shape(),
                    self.rank
                )));
            }
        }
        Ok(())
    }
}

/// Standard initialization: `A` uniform in (-1/√n, 1/√n), `B = 0`, scaling 1,
/// on both targets. The adapted model therefore equals the base exactly.
pub fn init_adapter(base: &TinyNeuralLM, rank: usize, seed: u64) -> Result<LoraAdapter> {
    if rank == 0 {
        return Err(Error::InvalidConfig("adapter rank must be positive".into()));
    }
    let limit = LoraTarget::ALL
        .iter()
        .map(|&t| {
            let (m, n) = base.target_shape(t);
            m.min(n)
        })
        .min()
        .expect("two targets");
    if rank > limit {
        return Err(Error::RankTooLarge { rank, limit });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = LoraTarget::ALL
        .iter()
        .map(|&target| {
            let (m, n) = base.target_shape(target);
            let bound = 1.0 / (n as f64).sqrt();
            let a = Matrix::from_fn(rank, n, |_, _| rng.random_range(-bound..bound) as f32 as f64);
            LoraFactor {
                target,
                b: Matrix::zeros(m, rank),
                a,
                scaling: 1.0,
            }
        })
        .collect();
    Ok(LoraAdapter { rank, factors })
}

/// Base proxy plus adapter, evaluated as one model. The base is shared,
/// never copied or modified, so the same value keeps serving the unadapted
/// role.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    base: Arc<TinyNeuralLM>,
    adapter: LoraAdapter,
}

impl AdaptedModel {
    pub fn base(&self) -> &Arc<TinyNeuralLM> {
        &self.base
    }

    pub fn adapter(&self) -> &LoraAdapter {
        &self.adapter
    }

    pub(crate) fn forward_logits(&self, seq: &[TokenId]) -> Vec<f64> {
        self.base.forward(seq, Some(&self.adapter)).logits
    }
}

pub fn apply_adapter(base: Arc<TinyNeuralLM>, adapter: LoraAdapter) -> Result<AdaptedModel> {
    adapter.check_against(&base)?;
    Ok(AdaptedModel { base, adapter })
}

impl LogitModel for AdaptedModel {
    fn vocab(&self) -> Vocab {
        self.base.vocab()
    }

    fn fingerprint(&self) -> u64 {
        let mut bytes = Model::Tiny((*self.base).clone()).to_bytes();
        bytes.extend(self.adapter.to_bytes());
        fnv1a64(&bytes)
    }

    fn next_logits(&self, seq: &[TokenId]) -> Result<LogitVector> {
        check_input(&self.vocab(), seq)?;
        LogitVector::from_f64(&self.forward_logits(seq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TinyDims;

    fn base() -> Arc<TinyNeuralLM> {
        Arc::new(TinyNeuralLM::random(
            Vocab::new(10, 1, 0).unwrap(),
            TinyDims {
                context: 3,
                embed: 4,
                hidden: 6,
            },
            21,
        ))
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn zero_b_is_identity() {
        let b = base();
        let adapter = init_adapter(&b, 2, 5).unwrap();
        assert!(adapter.is_zero());
        let adapted = apply_adapter(b.clone(), adapter).unwrap();
        for s in [ids(&[3]), ids(&[2, 9, 4, 5]), ids(&[7, 7])] {
            assert!(adapted.next_logits(&s).unwrap().bit_eq(&b.next_logits(&s).unwrap()));
        }
    }

    #[test]
    fn init_is_deterministic_and_rank_checked() {
        let b = base();
        assert_eq!(init_adapter(&b, 3, 8).unwrap(), init_adapter(&b, 3, 8).unwrap());
        assert_ne!(init_adapter(&b, 3, 8).unwrap(), init_adapter(&b, 3, 9).unwrap());
        // W1 is 6x12, W2 is 10x6
        assert!(init_adapter(&b, 6, 1).is_ok());
        assert!(matches!(
            init_adapter(&b, 7, 1),
            Err(Error::RankTooLarge { rank: 7, limit: 6 })
        ));
        assert!(init_adapter(&b, 0, 1).is_err());
    }

    #[test]
    fn identity_plus_rank_one_delta() {
        let w = Matrix::identity(2);
        let f = LoraFactor {
            target: LoraTarget::W1,
            b: Matrix::from_vec(2, 1, vec![1.0, 0.0]),
            a: Matrix::from_vec(1, 2, vec![0.0, 2.0]),
            scaling: 1.0,
        };
        let mut eff = w.clone();
        eff.add_scaled(&f.delta(), 1.0);
        assert_eq!(eff.data(), &[1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn factored_forward_matches_dense_materialization() {
        let b = base();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let mut adapter = init_adapter(&b, 2, trial).unwrap();
            for p in adapter.params_mut() {
                *p = rng.random_range(-0.5..0.5);
            }
            adapter.factors[0].scaling = 0.75;
            // dense oracle: fold scaling·B·A into a copy of the base weights
            let mut dense = (*b).clone();
            for f in &adapter.factors {
                let target = match f.target {
                    LoraTarget::W1 => dense.w1_mut(),
                    LoraTarget::W2 => dense.w2_mut(),
                };
                target.add_scaled(&f.delta(), 1.0);
            }
            let adapted = apply_adapter(b.clone(), adapter).unwrap();
            for s in [ids(&[4]), ids(&[2, 3, 8, 9, 5])] {
                let got = adapted.forward_logits(&s);
                let want = dense.forward(&s, None).logits;
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let b = base();
        let mut adapter = init_adapter(&b, 2, 1).unwrap();
        adapter.factors[1].a = Matrix::zeros(2, 5);
        assert!(matches!(
            apply_adapter(b.clone(), adapter),
            Err(Error::ShapeMismatch(_))
        ));
        let mut dup = init_adapter(&b, 2, 1).unwrap();
        dup.factors[1] = dup.factors[0].clone();
        assert!(apply_adapter(b, dup).is_err());
    }

    #[test]
    fn base_role_unaffected_by_adapter() {
        let b = base();
        let s = ids(&[2, 5, 6]);
        let before = b.next_logits(&s).unwrap();
        let mut adapter = init_adapter(&b, 2, 3).unwrap();
        adapter.params_mut().for_each(|p| *p += 0.3);
        let adapted = apply_adapter(b.clone(), adapter).unwrap();
        let shifted = adapted.next_logits(&s).unwrap();
        assert!(!shifted.bit_eq(&before));
        assert!(b.next_logits(&s).unwrap().bit_eq(&before));
        assert!(Arc::ptr_eq(adapted.base(), &b));
    }
}

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lora::{AdaptedModel, LoraAdapter, LoraTarget};
use crate::models::TinyNeuralLM;
use crate::models::TinyGrads;
use crate::sampling::log_softmax_f64;
use crate::vocab::TokenSequence;

/// Gradients shaped like the adapter: per factor `(dB, dA)`.
#[derive(Debug, Clone)]
pub struct AdapterGrads {
    pub factors: Vec<(Matrix, Matrix)>,
}

impl AdapterGrads {
    fn zeros_like(adapter: &LoraAdapter) -> Self {
        Self {
            factors: adapter
                .factors
                .iter()
                .map(|f| {
                    (
                        Matrix::zeros(f.b.rows(), f.b.cols()),
                        Matrix::zeros(f.a.rows(), f.a.cols()),
                    )
                })
                .collect(),
        }
    }

    /// Same order as [`LoraAdapter::params_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.factors
            .iter()
            .flat_map(|(b, a)| b.data().iter().chain(a.data()).copied())
            .collect()
    }
}

/// Mean next-token cross-entropy over every position of every sequence,
/// and its gradient with respect to the adapter factors only.
pub fn loss_and_grads(adapted: &AdaptedModel, batch: &[TokenSequence]) -> Result<(f64, AdapterGrads)> {
    let refs: Vec<&TokenSequence> = batch.iter().collect();
    let (loss, _, grads) = backprop(adapted.base(), Some(adapted.adapter()), &refs, false)?;
    Ok((loss, grads.expect("adapter present")))
}

/// Forward and backward pass over a batch. Adapter gradients are returned
/// whenever an adapter is given; base gradients only on request.
pub(crate) fn backprop(
    model: &TinyNeuralLM,
    adapter: Option<&LoraAdapter>,
    batch: &[&TokenSequence],
    want_base: bool,
) -> Result<(f64, Option<TinyGrads>, Option<AdapterGrads>)> {
    if batch.is_empty() {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    let vocab = crate::models::LogitModel::vocab(model);
    for s in batch {
        if s.len() < 2 {
            return Err(Error::DegenerateBatch(format!(
                "sequence of length {} has no prediction target",
                s.len()
            )));
        }
        vocab.check_tokens(s.as_slice())?;
    }
    if let Some(a) = adapter {
        a.check_against(model)?;
    }
    let positions: usize = batch.iter().map(|s| s.len() - 1).sum();
    let inv_n = 1.0 / positions as f64;
    let embed_width = model.dims().embed;

    let mut base_grads = want_base.then(|| model.zero_grads());
    let mut ad_grads = adapter.map(AdapterGrads::zeros_like);
    let f1 = adapter.and_then(|a| a.factor(LoraTarget::W1));
    let f2 = adapter.and_then(|a| a.factor(LoraTarget::W2));
    let idx = |t: LoraTarget| {
        adapter
            .and_then(|a| a.factors.iter().position(|f| f.target == t))
    };
    let (i1, i2) = (idx(LoraTarget::W1), idx(LoraTarget::W2));

    let mut loss = 0.0;
    for seq in batch {
        let tokens = seq.as_slice();
        for j in 1..tokens.len() {
            let act = model.forward(&tokens[..j], adapter);
            let target = tokens[j].index();
            let logp = log_softmax_f64(&act.logits);
            loss -= logp[target];

            let mut dz: Vec<f64> = logp.iter().map(|l| l.exp() * inv_n).collect();
            dz[target] -= inv_n;

            // output layer
            let mut dh = model.w2().matvec_t(&dz);
            if let (Some(f), Some(ah), Some(g)) = (f2, act.ah.as_ref(), ad_grads.as_mut()) {
                let (db, da) = &mut g.factors[i2.expect("factor index")];
                db.add_outer(&dz, ah, f.scaling);
                let bt_dz = f.b.matvec_t(&dz);
                da.add_outer(&bt_dz, &act.h, f.scaling);
                for (d, v) in dh.iter_mut().zip(f.a.matvec_t(&bt_dz)) {
                    *d += f.scaling * v;
                }
            }
            if let Some(g) = base_grads.as_mut() {
                g.w2.add_outer(&dz, &act.h, 1.0);
                g.b2.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            }

            // hidden layer
            let dpre: Vec<f64> = dh
                .iter()
                .zip(&act.h)
                .map(|(d, h)| d * (1.0 - h * h))
                .collect();
            let mut bt_dpre = None;
            if let (Some(f), Some(ax), Some(g)) = (f1, act.ax.as_ref(), ad_grads.as_mut()) {
                let (db, da) = &mut g.factors[i1.expect("factor index")];
                db.add_outer(&dpre, ax, f.scaling);
                let v = f.b.matvec_t(&dpre);
                da.add_outer(&v, &act.x, f.scaling);
                bt_dpre = Some(v);
            }
            if let Some(g) = base_grads.as_mut() {
                g.w1.add_outer(&dpre, &act.x, 1.0);
                g.b1.iter_mut().zip(&dpre).for_each(|(b, d)| *b += d);
                let mut dx = model.w1().matvec_t(&dpre);
                if let (Some(f), Some(v)) = (f1, bt_dpre.as_ref()) {
                    for (d, a) in dx.iter_mut().zip(f.a.matvec_t(v)) {
                        *d += f.scaling * a;
                    }
                }
                for (k, &tok) in act.ctx.iter().enumerate() {
                    let row = &dx[k * embed_width..(k + 1) * embed_width];
                    for (c, &d) in row.iter().enumerate() {
                        let cur = g.embed.get(tok, c);
                        g.embed.set(tok, c, cur + d);
                    }
                }
            }
        }
    }
    Ok((loss * inv_n, base_grads, ad_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{apply_adapter, init_adapter};
    use crate::models::TinyDims;
    use crate::vocab::Vocab;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn vocab() -> Vocab {
        Vocab::new(32, 1, 0).unwrap()
    }

    fn batch(v: &Vocab) -> Vec<TokenSequence> {
        vec![
            TokenSequence::from_ids(&[4, 9, 12, 4, 30], v).unwrap(),
            TokenSequence::from_ids(&[2, 2, 1], v).unwrap(),
        ]
    }

    #[test]
    fn uniform_logits_give_ln_vocab_loss() {
        let v = vocab();
        let mut m = TinyNeuralLM::random(v, TinyDims::default(), 1);
        m.w2_mut().data_mut().iter_mut().for_each(|x| *x = 0.0);
        m.b2_mut().iter_mut().for_each(|x| *x = 0.0);
        let m = Arc::new(m);
        let adapted = apply_adapter(m.clone(), init_adapter(&m, 4, 1).unwrap()).unwrap();
        let (loss, _) = loss_and_grads(&adapted, &batch(&v)).unwrap();
        assert!((loss - 32f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicating_batch_keeps_mean_loss() {
        let v = vocab();
        let m = Arc::new(TinyNeuralLM::random(v, TinyDims::default(), 2));
        let mut adapter = init_adapter(&m, 2, 2).unwrap();
        adapter.params_mut().for_each(|p| *p += 0.05);
        let adapted = apply_adapter(m, adapter).unwrap();
        let b = batch(&v);
        let doubled: Vec<TokenSequence> = b.iter().chain(b.iter()).cloned().collect();
        let (l1, _) = loss_and_grads(&adapted, &b).unwrap();
        let (l2, _) = loss_and_grads(&adapted, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(l1 >= 0.0);
    }

    #[test]
    fn degenerate_batches_rejected() {
        let v = vocab();
        let m = Arc::new(TinyNeuralLM::random(v, TinyDims::default(), 3));
        let adapted = apply_adapter(m.clone(), init_adapter(&m, 2, 2).unwrap()).unwrap();
        let short = vec![TokenSequence::from_ids(&[4], &v).unwrap()];
        assert!(matches!(
            loss_and_grads(&adapted, &short),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(matches!(
            loss_and_grads(&adapted, &[]),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn base_grads_match_central_differences() {
        let v = Vocab::new(7, 1, 0).unwrap();
        let dims = TinyDims {
            context: 2,
            embed: 3,
            hidden: 4,
        };
        let m = TinyNeuralLM::random(v, dims, 12);
        let mut adapter = init_adapter(&m, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        adapter.params_mut().for_each(|p| *p = rng.random_range(-0.4..0.4));
        let b = [TokenSequence::from_ids(&[2, 3, 4, 5, 6], &v).unwrap(),
            TokenSequence::from_ids(&[6, 0, 2], &v).unwrap()];
        let refs: Vec<&TokenSequence> = b.iter().collect();
        let (_, g, _) = backprop(&m, Some(&adapter), &refs, true).unwrap();
        let analytic = g.unwrap().flatten();
        let eps = 1e-5;
        for (i, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut p = m.clone();
                *p.params_mut().nth(i).unwrap() += delta;
                backprop(&p, Some(&adapter), &refs, false).unwrap().0
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!((a - fd).abs() / denom < 1e-4, "param {i}: {a} vs {fd}");
        }
    }
}

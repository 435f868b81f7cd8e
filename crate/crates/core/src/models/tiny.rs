use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{fnv1a64, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lora::{backprop, LoraAdapter, LoraTarget};
use crate::models::{check_input, LogitModel, Model};
use crate::vocab::{LogitVector, TokenId, TokenSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyDims {
    /// Number of trailing tokens the model sees.
    pub context: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for TinyDims {
    fn default() -> Self {
        Self {
            context: 4,
            embed: 16,
            hidden: 32,
        }
    }
}

impl TinyDims {
    fn validate(&self) -> Result<()> {
        if self.context == 0 || self.embed == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(format!(
                "tiny model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fixed-window MLP language model:
/// `logits = W2 · tanh(W1 · [E[t₋C]; …; E[t₋₁]] + b1) + b2`.
///
/// Positions before the start of the input are filled with the BOS id.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNeuralLM {
    vocab: Vocab,
    dims: TinyDims,
    embed: Matrix,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub ctx: Vec<usize>,
    pub x: Vec<f64>,
    /// `A1 · x` when W1 carries an adapter.
    pub ax: Option<Vec<f64>>,
    pub h: Vec<f64>,
    /// `A2 · h` when W2 carries an adapter.
    pub ah: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Gradients for every base parameter, laid out like the model.
#[derive(Debug, Clone)]
pub struct TinyGrads {
    pub embed: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl TinyNeuralLM {
    pub fn zeros(vocab: Vocab, dims: TinyDims) -> Self {
        let v = vocab.len();
        Self {
            vocab,
            dims,
            embed: Matrix::zeros(v, dims.embed),
            w1: Matrix::zeros(dims.hidden, dims.context * dims.embed),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::zeros(v, dims.hidden),
            b2: vec![0.0; v],
        }
    }

    /// Seeded initialization: embeddings uniform in (-1, 1), weight matrices
    /// uniform in (-1/√n, 1/√n) for fan-in `n`, zero biases. Values are
    /// rounded to binary32 so the result is already a valid snapshot.
    pub fn random(vocab: Vocab, dims: TinyDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(vocab, dims);
        let mut fill = |mat: &mut Matrix, bound: f64| {
            for x in mat.data_mut() {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill(&mut m.embed, 1.0);
        fill(&mut m.w1, 1.0 / ((dims.context * dims.embed) as f64).sqrt());
        fill(&mut m.w2, 1.0 / (dims.hidden as f64).sqrt());
        m.round_to_f32();
        m
    }

    pub fn dims(&self) -> TinyDims {
        self.dims
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn w1_mut(&mut self) -> &mut Matrix {
        &mut self.w1
    }

    pub fn w2_mut(&mut self) -> &mut Matrix {
        &mut self.w2
    }

    pub fn b2_mut(&mut self) -> &mut Vec<f64> {
        &mut self.b2
    }

    pub fn target_shape(&self, target: LoraTarget) -> (usize, usize) {
        match target {
            LoraTarget::W1 => self.w1.shape(),
            LoraTarget::W2 => self.w2.shape(),
        }
    }

    pub fn target(&self, target: LoraTarget) -> &Matrix {
        match target {
            LoraTarget::W1 => &self.w1,
            LoraTarget::W2 => &self.w2,
        }
    }

    /// Copy with every parameter rounded to binary32, as used for inference
    /// and stored in snapshots.
    pub fn snapshot(&self) -> Self {
        let mut s = self.clone();
        s.round_to_f32();
        s
    }

    pub fn round_to_f32(&mut self) {
        self.embed.round_to_f32();
        self.w1.round_to_f32();
        self.w2.round_to_f32();
        for b in self.b1.iter_mut().chain(self.b2.iter_mut()) {
            *b = *b as f32 as f64;
        }
    }

    /// Visits every parameter in snapshot order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embed
            .data_mut()
            .iter_mut()
            .chain(self.w1.data_mut().iter_mut())
            .chain(self.b1.iter_mut())
            .chain(self.w2.data_mut().iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.embed.data().len()
            + self.w1.data().len()
            + self.b1.len()
            + self.w2.data().len()
            + self.b2.len()
    }

    fn context_ids(&self, seq: &[TokenId]) -> Vec<usize> {
        let c = self.dims.context;
        let bos = self.vocab.bos().index();
        let mut ctx = vec![bos; c.saturating_sub(seq.len())];
        ctx.extend(seq[seq.len().saturating_sub(c)..].iter().map(|t| t.index()));
        ctx
    }

    pub(crate) fn forward(&self, seq: &[TokenId], adapter: Option<&LoraAdapter>) -> Activations {
        let ctx = self.context_ids(seq);
        let mut x = Vec::with_capacity(self.dims.context * self.dims.embed);
        for &t in &ctx {
            x.extend_from_slice(self.embed.row(t));
        }

        let mut pre = self.w1.matvec(&x);
        let mut ax = None;
        if let Some(f) = adapter.and_then(|a| a.factor(LoraTarget::W1)) {
            let low = f.a.matvec(&x);
            for (p, d) in pre.iter_mut().zip(f.b.matvec(&low)) {
                *p += f.scaling * d;
            }
            ax = Some(low);
        }
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let h: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();

        let mut logits = self.w2.matvec(&h);
        let mut ah = None;
        if let Some(f) = adapter.and_then(|a| a.factor(LoraTarget::W2)) {
            let low = f.a.matvec(&h);
            for (z, d) in logits.iter_mut().zip(f.b.matvec(&low)) {
                *z += f.scaling * d;
            }
            ah = Some(low);
        }
        for (z, b) in logits.iter_mut().zip(&self.b2) {
            *z += b;
        }
        Activations {
            ctx,
            x,
            ax,
            h,
            ah,
            logits,
        }
    }

    pub(crate) fn zero_grads(&self) -> TinyGrads {
        TinyGrads {
            embed: Matrix::zeros(self.embed.rows(), self.embed.cols()),
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn apply_grads(&mut self, g: &TinyGrads, lr: f64) {
        self.embed.add_scaled(&g.embed, -lr);
        self.w1.add_scaled(&g.w1, -lr);
        self.w2.add_scaled(&g.w2, -lr);
        for (p, d) in self.b1.iter_mut().zip(&g.b1) {
            *p -= lr * d;
        }
        for (p, d) in self.b2.iter_mut().zip(&g.b2) {
            *p -= lr * d;
        }
    }

    pub(crate) fn write_params(&self, w: &mut ByteWriter) {
        w.u32(self.dims.context as u32);
        w.u32(self.dims.embed as u32);
        w.u32(self.dims.hidden as u32);
        w.f64_as_f32(self.embed.data());
        w.f64_as_f32(self.w1.data());
        w.f64_as_f32(&self.b1);
        w.f64_as_f32(self.w2.data());
        w.f64_as_f32(&self.b2);
    }

    pub(crate) fn read_params(vocab: Vocab, r: &mut ByteReader<'_>) -> Result<Self> {
        let at = r.offset();
        let dims = TinyDims {
            context: r.u32("context window")? as usize,
            embed: r.u32("embedding width")? as usize,
            hidden: r.u32("hidden width")? as usize,
        };
        dims.validate().map_err(|e| Error::malformed(at, e.to_string()))?;
        let v = vocab.len();
        let total = (v * dims.embed)
            .checked_add(dims.hidden.saturating_mul(dims.context * dims.embed))
            .and_then(|n| n.checked_add(dims.hidden + v * dims.hidden + v))
            .ok_or_else(|| r.malformed("parameter count overflow"))?;
        if total.saturating_mul(4) > r.remaining() {
            return Err(r.malformed("truncated tiny-neural parameters"));
        }
        let embed = Matrix::from_vec(v, dims.embed, r.f32_vec_as_f64(v * dims.embed, "E")?);
        let n1 = dims.context * dims.embed;
        let w1 = Matrix::from_vec(dims.hidden, n1, r.f32_vec_as_f64(dims.hidden * n1, "W1")?);
        let b1 = r.f32_vec_as_f64(dims.hidden, "b1")?;
        let w2 = Matrix::from_vec(v, dims.hidden, r.f32_vec_as_f64(v * dims.hidden, "W2")?);
        let b2 = r.f32_vec_as_f64(v, "b2")?;
        Ok(Self {
            vocab,
            dims,
            embed,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

impl TinyGrads {
    pub fn flatten(&self) -> Vec<f64> {
        self.embed
            .data()
            .iter()
            .chain(self.w1.data())
            .chain(&self.b1)
            .chain(self.w2.data())
            .chain(&self.b2)
            .copied()
            .collect()
    }
}

impl LogitModel for TinyNeuralLM {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn fingerprint(&self) -> u64 {
        fnv1a64(&Model::Tiny(self.clone()).to_bytes())
    }

    fn next_logits(&self, seq: &[TokenId]) -> Result<LogitVector> {
        check_input(&self.vocab, seq)?;
        LogitVector::from_f64(&self.forward(seq, None).logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 8,
            epochs: 3,
            seed: 0,
        }
    }
}

/// Full-parameter mini-batch SGD on mean next-token cross-entropy. Produces
/// the frozen base that proxies start from; the result is snapshot-rounded.
pub fn pretrain(
    model: &TinyNeuralLM,
    corpus: &[TokenSequence],
    config: &PretrainConfig,
) -> Result<TinyNeuralLM> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("bad pretrain config {config:?}")));
    }
    let docs: Vec<&TokenSequence> = corpus.iter().filter(|d| d.len() >= 2).collect();
    if docs.is_empty() {
        return Err(Error::DegenerateBatch("no sequence has two tokens".into()));
    }
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| docs[i]).collect();
            let (_, grads, _) = backprop(&m, None, &batch, true)?;
            m.apply_grads(&grads.expect("base grads requested"), config.learning_rate);
        }
    }
    m.round_to_f32();
    Ok(m)
}

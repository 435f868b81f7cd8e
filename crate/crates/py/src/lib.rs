//! Python module `prada`: models, adapters, the offset rule and in-process
//! generation in all four modes.
//!
//! ```python
//! import prada
//! v = prada.Vocab(12, eos_id=1, bos_id=0)
//! bb = prada.Model.fit_bigram(corpus, v, alpha=0.5)
//! base = prada.Model.tiny(v, seed=3).pretrain(corpus, epochs=2)
//! adapter, report = prada.train_lora(base, local_corpus, rank=4)
//! out = prada.generate(bb, [5, 2], base, adapter, mode="prada-sd", draft_len=4)
//! ```

use std::sync::Arc;

use prada_core::lora::{init_adapter, train_lora as core_train_lora, LoraAdapter, TrainConfig};
use prada_core::models::{fit_bigram, pretrain, LogitModel, Model, PretrainConfig, TinyDims, TinyNeuralLM};
use prada_core::offset::{adaptation_offset, adjust};
use prada_core::protocol::{Client, Generation, ProxyPair, Server};
use prada_core::sampling::GenerationConfig;
use prada_core::transport::LedgerReport;
use prada_core::{Error, LogitVector, TokenId, TokenSequence};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(prada, PradaError, PyException, "Raised for every library error; `kind` is the first argument.");

fn py_err(e: Error) -> PyErr {
    PradaError::new_err((e.kind(), e.to_string()))
}

fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().map(|&i| TokenId(i)).collect()
}

fn ids(tokens: &[TokenId]) -> Vec<u32> {
    tokens.iter().map(|t| t.0).collect()
}

#[pyclass(name = "Vocab", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
pub struct PyVocab(prada_core::Vocab);

#[pymethods]
impl PyVocab {
    #[new]
    #[pyo3(signature = (size, eos_id = 1, bos_id = 0))]
    fn new(size: u32, eos_id: u32, bos_id: u32) -> PyResult<Self> {
        prada_core::Vocab::new(size, eos_id, bos_id).map(Self).map_err(py_err)
    }

    #[getter]
    fn size(&self) -> u32 {
        self.0.size()
    }

    #[getter]
    fn eos_id(&self) -> u32 {
        self.0.eos().0
    }

    #[getter]
    fn bos_id(&self) -> u32 {
        self.0.bos().0
    }

    fn __repr__(&self) -> String {
        format!("Vocab(size={}, eos_id={}, bos_id={})", self.size(), self.eos_id(), self.bos_id())
    }
}

fn corpus(docs: Vec<Vec<u32>>, vocab: &prada_core::Vocab) -> PyResult<Vec<TokenSequence>> {
    docs.iter()
        .map(|d| TokenSequence::from_ids(d, vocab))
        .collect::<prada_core::Result<_>>()
        .map_err(py_err)
}

/// A bigram table or tiny neural model.
#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel(Model);

impl PyModel {
    fn tiny_ref(&self) -> PyResult<&TinyNeuralLM> {
        match &self.0 {
            Model::Tiny(m) => Ok(m),
            Model::Bigram(_) => Err(py_err(Error::InvalidConfig(
                "proxies must be tiny-neural models".into(),
            ))),
        }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (corpus, vocab, alpha = 1.0))]
    fn fit_bigram(corpus: Vec<Vec<u32>>, vocab: PyVocab, alpha: f32) -> PyResult<Self> {
        let docs = self::corpus(corpus, &vocab.0)?;
        fit_bigram(&docs, vocab.0, alpha).map(|m| Self(Model::Bigram(m))).map_err(py_err)
    }

    /// Randomly initialised tiny model.
    #[staticmethod]
    #[pyo3(signature = (vocab, context = 4, embed = 16, hidden = 32, seed = 0))]
    fn tiny(vocab: PyVocab, context: usize, embed: usize, hidden: usize, seed: u64) -> Self {
        let dims = TinyDims { context, embed, hidden };
        Self(Model::Tiny(TinyNeuralLM::random(vocab.0, dims, seed)))
    }

    /// Full-parameter training of a tiny model; returns a new model.
    #[pyo3(signature = (corpus, epochs = 3, learning_rate = 0.1, batch_size = 8, seed = 0))]
    fn pretrain(&self, corpus: Vec<Vec<u32>>, epochs: usize, learning_rate: f64, batch_size: usize, seed: u64) -> PyResult<Self> {
        let base = self.tiny_ref()?;
        let docs = self::corpus(corpus, &base.vocab())?;
        let cfg = PretrainConfig {
            learning_rate,
            batch_size,
            epochs,
            seed,
        };
        pretrain(base, &docs, &cfg).map(|m| Self(Model::Tiny(m))).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Model::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn arch(&self) -> &'static str {
        self.0.arch_name()
    }

    #[getter]
    fn vocab(&self) -> PyVocab {
        PyVocab(self.0.vocab())
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.0.fingerprint()
    }

    fn next_logits(&self, context: Vec<u32>) -> PyResult<Vec<f32>> {
        self.0
            .next_logits(&tokens(&context))
            .map(LogitVector::into_inner)
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(arch={:?}, vocab_size={})", self.arch(), self.0.vocab().size())
    }
}

/// Low-rank adapter for a tiny base model.
#[pyclass(name = "Adapter", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyAdapter(LoraAdapter);

#[pymethods]
impl PyAdapter {
    /// The untrained adapter: random A, zero B, so the offset is zero.
    #[staticmethod]
    #[pyo3(signature = (base, rank = 4, seed = 0))]
    fn init(base: &PyModel, rank: usize, seed: u64) -> PyResult<Self> {
        init_adapter(base.tiny_ref()?, rank, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        LoraAdapter::load(path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        LoraAdapter::from_bytes(data).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

/// Trains an adapter on `corpus`; returns `(adapter, report)`.
#[pyfunction]
#[pyo3(signature = (base, corpus, rank = 4, epochs = 3, learning_rate = 0.05, batch_size = 4, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_lora<'py>(
    py: Python<'py>,
    base: &PyModel,
    corpus: Vec<Vec<u32>>,
    rank: usize,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<(PyAdapter, Bound<'py, PyDict>)> {
    let base = base.tiny_ref()?;
    let docs = self::corpus(corpus, &base.vocab())?;
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        rank,
        seed,
    };
    let (adapter, report) = core_train_lora(base, &docs, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("initial_loss", report.initial_loss)?;
    d.set_item("final_loss", report.final_loss)?;
    d.set_item("epoch_losses", report.epoch_losses)?;
    d.set_item("steps", report.steps)?;
    Ok((PyAdapter(adapter), d))
}

/// `black_box + (adapted - base)`, in single precision.
#[pyfunction]
fn offset_logits(black_box: Vec<f32>, base: Vec<f32>, adapted: Vec<f32>) -> PyResult<Vec<f32>> {
    let v = |s: Vec<f32>| LogitVector::new(s).map_err(py_err);
    let off = adaptation_offset(&v(adapted)?, &v(base)?).map_err(py_err)?;
    adjust(&v(black_box)?, &off).map(LogitVector::into_inner).map_err(py_err)
}

/// Tokens, rounds and byte accounting of one generation.
#[pyclass(name = "GenerationResult", frozen, get_all)]
pub struct PyGeneration {
    tokens: Vec<u32>,
    rounds: usize,
    drafted: usize,
    accepted: usize,
    ledger: Vec<(String, u64)>,
}

#[pymethods]
impl PyGeneration {
    fn __repr__(&self) -> String {
        format!("GenerationResult(tokens={:?}, rounds={})", self.tokens, self.rounds)
    }
}

fn ledger_pairs(r: &LedgerReport) -> Vec<(String, u64)> {
    let mut out = Vec::new();
    for (name, c) in [("data", r.data), ("model", r.model), ("inference", r.inference), ("control", r.control)] {
        out.push((format!("{name}_up"), c.up));
        out.push((format!("{name}_down"), c.down));
    }
    out.push(("rounds".into(), r.rounds));
    out
}

fn check_mode(mode: &str) -> PyResult<()> {
    match mode {
        "api" | "prada" | "prada-sd" | "prada-transfer" => Ok(()),
        other => Err(py_err(Error::InvalidConfig(format!("unknown mode {other:?}")))),
    }
}

/// Runs one generation against an in-process server hosting `black_box`.
#[pyfunction]
#[pyo3(signature = (black_box, prompt, base = None, adapter = None, mode = "prada", draft_len = 4, max_new_tokens = 32, temperature = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    black_box: &PyModel,
    prompt: Vec<u32>,
    base: Option<&PyModel>,
    adapter: Option<&PyAdapter>,
    mode: &str,
    draft_len: usize,
    max_new_tokens: u32,
    temperature: Option<f64>,
    seed: u64,
) -> PyResult<PyGeneration> {
    check_mode(mode)?;
    let proxies = match (mode, base, adapter) {
        ("api", _, _) => None,
        (_, Some(b), Some(a)) => {
            Some(ProxyPair::new(Arc::new(b.tiny_ref()?.clone()), a.0.clone()).map_err(py_err)?)
        }
        _ => return Err(py_err(Error::InvalidConfig(format!("mode {mode} needs base and adapter")))),
    };
    let mut server = Server::new(Arc::new(black_box.0.clone()));
    if let Some(p) = proxies.as_ref().filter(|_| mode == "prada-transfer") {
        server = server.with_base_proxy(p.base().clone());
    }
    let vocab = black_box.0.vocab();
    let base_fp = proxies.as_ref().map(|p| p.base().fingerprint());
    let (conn, _handle) = server.spawn_in_process();
    let mut client = Client::connect(conn, vocab, proxies).map_err(py_err)?;
    let prompt = tokens(&prompt);
    let cfg = match temperature {
        Some(t) => GenerationConfig::stochastic(max_new_tokens, t, seed).map_err(py_err)?,
        None => GenerationConfig::greedy(max_new_tokens),
    };
    let g: Generation = match mode {
        "api" => client.run_api(&prompt, max_new_tokens),
        "prada" => client.run_per_token(&prompt, &cfg),
        "prada-sd" => client.run_speculative(&prompt, draft_len, &cfg),
        _ => client.run_transfer(&prompt, &adapter.expect("checked").0.to_bytes(), base_fp.expect("checked"), max_new_tokens),
    }
    .map_err(py_err)?;
    Ok(PyGeneration {
        tokens: ids(&g.tokens),
        rounds: g.rounds,
        drafted: g.drafted,
        accepted: g.accepted,
        ledger: ledger_pairs(&client.ledger().report()),
    })
}

#[pymodule]
fn prada(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PradaError", m.py().get_type::<PradaError>())?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyAdapter>()?;
    m.add_class::<PyGeneration>()?;
    m.add_function(wrap_pyfunction!(train_lora, m)?)?;
    m.add_function(wrap_pyfunction!(offset_logits, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_pairs_cover_every_category() {
        let keys: Vec<String> = ledger_pairs(&prada_core::transport::CostLedger::new().report()).into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys.len(), 9);
        assert!(keys.contains(&"inference_down".to_string()));
    }

    #[test]
    fn token_conversion_round_trips() {
        assert_eq!(ids(&tokens(&[4, 0, 9])), [4, 0, 9]);
    }
}

use std::net::ToSocketAddrs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use prada_core::lora::{train_lora, LoraAdapter, TrainConfig, TrainReport};
use prada_core::models::{fit_bigram, pretrain, LogitModel, Model, PretrainConfig, TinyDims, TinyNeuralLM};
use prada_core::protocol::{Client, CommitMode, ProxyPair, Server, SocketServer};
use prada_core::sampling::GenerationConfig;
use prada_core::transport::{Connection, LatencyReport, LedgerReport, Record};
use prada_core::{format_tokens, parse_corpus, Error, Result, TokenId, Vocab};

use crate::config::{Mode, RunConfig};

static PROXY_LOADS: AtomicUsize = AtomicUsize::new(0);

/// How many times this process has read a proxy snapshot or adapter file.
/// API-mode generation must leave it unchanged.
pub fn proxy_loads() -> usize {
    PROXY_LOADS.load(Ordering::SeqCst)
}

fn load_base_proxy(path: &Path) -> Result<TinyNeuralLM> {
    PROXY_LOADS.fetch_add(1, Ordering::SeqCst);
    match Model::load(path)? {
        Model::Tiny(m) => Ok(m),
        other => Err(Error::InvalidConfig(format!(
            "{}: proxies must be tiny-neural models, found {}",
            path.display(),
            other.arch_name()
        ))),
    }
}

fn load_adapter_bytes(path: &Path) -> Result<Vec<u8>> {
    PROXY_LOADS.fetch_add(1, Ordering::SeqCst);
    Ok(std::fs::read(path)?)
}

fn load_black_box(path: &Path) -> Result<Arc<dyn LogitModel>> {
    Ok(Arc::new(Model::load(path)?))
}

/// Architecture and hyperparameters for `fit-blackbox`.
#[derive(Debug, Clone, PartialEq)]
pub enum FitArch {
    Bigram { alpha: f32 },
    Tiny { dims: TinyDims, pretrain: PretrainConfig },
}

/// Fits a black-box stand-in (or a tiny model to serve as a proxy base) and
/// writes its snapshot.
pub fn cmd_fit_blackbox(corpus: &Path, vocab: Vocab, arch: &FitArch, out: &Path) -> Result<Record> {
    let docs = parse_corpus(&std::fs::read_to_string(corpus)?, &vocab)?;
    let model = match arch {
        FitArch::Bigram { alpha } => Model::Bigram(fit_bigram(&docs, vocab, *alpha)?),
        FitArch::Tiny { dims, pretrain: cfg } => {
            let init = TinyNeuralLM::random(vocab, *dims, cfg.seed);
            Model::Tiny(pretrain(&init, &docs, cfg)?)
        }
    };
    model.save(out)?;
    Ok(Record::new("fit")
        .field("arch", model.arch_name())
        .field("vocab_size", vocab.size())
        .field("documents", docs.len())
        .field("fingerprint", format!("{:016x}", model.fingerprint()))
        .field("bytes", model.to_bytes().len())
        .field("out", out.display()))
}

/// Trains an adapter for the base proxy at `base` and writes it to `out`.
pub fn cmd_train_proxy(base: &Path, corpus: &Path, cfg: &TrainConfig, out: &Path) -> Result<(TrainReport, Record)> {
    let base_model = load_base_proxy(base)?;
    let docs = parse_corpus(&std::fs::read_to_string(corpus)?, &base_model.vocab())?;
    let (adapter, report) = train_lora(&base_model, &docs, cfg)?;
    adapter.save(out)?;
    let record = Record::new("train")
        .field("rank", cfg.rank)
        .field("epochs", cfg.epochs)
        .field("steps", report.steps)
        .field("initial_loss", format!("{:.6}", report.initial_loss))
        .field("final_loss", format!("{:.6}", report.final_loss))
        .field("base_fingerprint", format!("{:016x}", base_model.fingerprint()))
        .field("bytes", adapter.to_bytes().len())
        .field("out", out.display());
    Ok((report, record))
}

/// Builds the server for `serve`; the base proxy enables adapter uploads.
pub fn build_server(blackbox: &Path, base_proxy: Option<&Path>) -> Result<Server> {
    let mut server = Server::new(load_black_box(blackbox)?);
    if let Some(p) = base_proxy {
        server = server.with_base_proxy(Arc::new(load_base_proxy(p)?));
    }
    Ok(server)
}

pub fn bind_server(blackbox: &Path, base_proxy: Option<&Path>, endpoint: impl ToSocketAddrs) -> Result<SocketServer> {
    build_server(blackbox, base_proxy)?.bind(endpoint)
}

/// Serves until the process is killed.
pub fn cmd_serve(blackbox: &Path, base_proxy: Option<&Path>, endpoint: &str) -> Result<()> {
    let server = bind_server(blackbox, base_proxy, endpoint)?;
    eprintln!(
        "{}",
        Record::new("serve").field("endpoint", server.local_addr()?)
    );
    server.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutcome {
    pub mode: Mode,
    pub draft_len: Option<usize>,
    pub tokens: Vec<TokenId>,
    pub rounds: usize,
    pub ledger: LedgerReport,
    /// Absent when the response is empty.
    pub latency: Option<LatencyReport>,
}

impl GenerateOutcome {
    pub fn records(&self) -> Vec<Record> {
        let mut gen = Record::new("generation")
            .field("mode", self.mode)
            .field("response_tokens", self.tokens.len());
        if let Some(s) = self.draft_len {
            gen = gen.field("draft_len", s);
        }
        let gen = gen.field(
            "tokens",
            if self.tokens.is_empty() {
                "-".to_string()
            } else {
                format_tokens(&self.tokens)
            },
        );
        let mut out = vec![gen, self.ledger.to_record().field("mode", self.mode)];
        if let Some(l) = &self.latency {
            out.push(l.to_record().field("mode", self.mode));
        }
        out
    }
}

fn resolve_vocab(cfg: &RunConfig, proxies: Option<&ProxyPair>, black_box: Option<&Arc<dyn LogitModel>>) -> Result<Vocab> {
    if let Some(p) = proxies {
        return Ok(p.vocab());
    }
    if let Some(b) = black_box {
        return Ok(b.vocab());
    }
    match (cfg.vocab_size, cfg.eos_id, cfg.bos_id) {
        (Some(s), Some(e), Some(b)) => Vocab::new(s, e, b),
        _ => Err(Error::InvalidConfig(
            "remote api runs need vocab_size, eos_id and bos_id".into(),
        )),
    }
}

/// Runs one generation in the configured mode and returns the tokens with
/// their cost and latency accounting.
pub fn cmd_generate(cfg: &RunConfig, prompt: &[TokenId]) -> Result<GenerateOutcome> {
    cfg.validate()?;
    let mut adapter_bytes = None;
    let proxies = if cfg.mode.needs_proxies() {
        let base = Arc::new(load_base_proxy(cfg.base_proxy.as_deref().expect("validated"))?);
        let bytes = load_adapter_bytes(cfg.adapter.as_deref().expect("validated"))?;
        let adapter = LoraAdapter::from_bytes(&bytes)?;
        adapter_bytes = Some(bytes);
        Some(ProxyPair::new(base, adapter)?)
    } else {
        None
    };

    let (conn, black_box) = match &cfg.endpoint {
        Some(addr) => (Connection::connect(addr)?, None),
        None => {
            let bb = load_black_box(cfg.blackbox.as_deref().expect("validated"))?;
            let mut server = Server::new(bb.clone());
            if let Some(p) = &proxies {
                if cfg.mode == Mode::PradaTransfer {
                    server = server.with_base_proxy(p.base().clone());
                }
            }
            (server.spawn_in_process().0, Some(bb))
        }
    };
    let vocab = resolve_vocab(cfg, proxies.as_ref(), black_box.as_ref())?;
    let base_fingerprint = proxies.as_ref().map(|p| p.base().fingerprint());
    let mut client = Client::connect(conn, vocab, proxies)?.with_commit_mode(if cfg.full_resend {
        CommitMode::FullSequence
    } else {
        CommitMode::Delta
    });

    let gen_cfg = match cfg.temperature {
        Some(t) => GenerationConfig::stochastic(cfg.max_new_tokens, t, cfg.seed)?,
        None => GenerationConfig::greedy(cfg.max_new_tokens),
    };
    let start = Instant::now();
    let generation = match cfg.mode {
        Mode::Api => client.run_api(prompt, cfg.max_new_tokens)?,
        Mode::Prada => client.run_per_token(prompt, &gen_cfg)?,
        Mode::PradaSd => client.run_speculative(prompt, cfg.effective_draft_len(), &gen_cfg)?,
        Mode::PradaTransfer => client.run_transfer(
            prompt,
            adapter_bytes.as_deref().expect("loaded"),
            base_fingerprint.expect("loaded"),
            cfg.max_new_tokens,
        )?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    Ok(GenerateOutcome {
        mode: cfg.mode,
        draft_len: matches!(cfg.mode, Mode::Prada | Mode::PradaSd).then(|| cfg.effective_draft_len()),
        latency: LatencyReport::new(elapsed, generation.tokens.len()).ok(),
        tokens: generation.tokens,
        rounds: generation.rounds,
        ledger: client.ledger().report(),
    })
}

/// Runs `prompt` through every requested mode; `prada-sd` once per draft
/// length.
pub fn cmd_bench(base: &RunConfig, prompt: &[TokenId], modes: &[Mode], draft_lens: &[usize]) -> Result<Vec<GenerateOutcome>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let lens: Vec<Option<usize>> = if mode == Mode::PradaSd {
            draft_lens.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for s in lens {
            let cfg = RunConfig {
                mode,
                draft_len: s.or(base.draft_len),
                temperature: if matches!(mode, Mode::Api | Mode::PradaTransfer) {
                    None
                } else {
                    base.temperature
                },
                ..base.clone()
            };
            rows.push(cmd_generate(&cfg, prompt)?);
        }
    }
    Ok(rows)
}

pub const BENCH_CSV_HEADER: &str = "mode,draft_len,response_tokens,data_up,data_down,model_up,model_down,inference_up,inference_down,control_up,control_down,rounds,acceptance_rate,ms_per_token";

pub fn bench_csv_row(o: &GenerateOutcome) -> String {
    let l = &o.ledger;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        o.mode,
        o.draft_len.map_or(String::new(), |s| s.to_string()),
        o.tokens.len(),
        l.data.up,
        l.data.down,
        l.model.up,
        l.model.down,
        l.inference.up,
        l.inference.down,
        l.control.up,
        l.control.down,
        l.rounds,
        l.acceptance_rate().map_or(String::new(), |r| format!("{r:.6}")),
        o.latency.as_ref().map_or(String::new(), |t| format!("{:.6}", t.ms_per_token)),
    )
}

/// Writes records, one per line, to `path` or standard output.
pub fn emit(records: &[Record], path: Option<&Path>) -> Result<()> {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// The one-line form every failing command prints.
pub fn error_line(e: &Error) -> String {
    format!("error kind={} message={:?}", e.kind(), e.to_string())
}

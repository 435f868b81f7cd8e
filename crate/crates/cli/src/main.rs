use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prada_cli::{
    bench_csv_row, cmd_bench, cmd_fit_blackbox, cmd_generate, cmd_serve, cmd_train_proxy, emit,
    error_line, FitArch, Mode, RunConfig, BENCH_CSV_HEADER,
};
use prada_core::lora::TrainConfig;
use prada_core::models::{PretrainConfig, TinyDims};
use prada_core::{parse_token_ids, Error, Result, TokenId, Vocab};

#[derive(Parser)]
#[command(name = "prada", version, about = "Offset-adapted generation against a logits-only model server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a bigram or tiny-neural model on a corpus and write its snapshot.
    FitBlackbox(FitArgs),
    /// Train a low-rank adapter for a base proxy.
    TrainProxy(TrainArgs),
    /// Serve a black-box model over TCP until interrupted.
    Serve(ServeArgs),
    /// Generate from a prompt in one of the four modes.
    Generate(GenerateArgs),
    /// Run a prompt through several modes and tabulate bytes, rounds and latency.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// One document per line, whitespace-separated token ids.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab_size: u32,
    #[arg(long, default_value_t = 1)]
    eos_id: u32,
    #[arg(long, default_value_t = 0)]
    bos_id: u32,
    /// `bigram` or `tiny`.
    #[arg(long, default_value = "bigram")]
    arch: String,
    /// Additive smoothing for bigram counts.
    #[arg(long, default_value_t = 1.0)]
    alpha: f32,
    #[arg(long, default_value_t = 4)]
    context: usize,
    #[arg(long, default_value_t = 16)]
    embed: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Base proxy snapshot (tiny-neural).
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    blackbox: PathBuf,
    /// Enables the adapter-upload mode.
    #[arg(long)]
    base_proxy: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    endpoint: String,
}

/// Flags shared by `generate` and `bench`; each overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value file; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    blackbox: Option<String>,
    #[arg(long)]
    base_proxy: Option<String>,
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long)]
    draft_len: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// `host:port`, or `in-process`.
    #[arg(long)]
    endpoint: Option<String>,
    /// `delta` or `full`.
    #[arg(long)]
    commit: Option<String>,
    #[arg(long)]
    vocab_size: Option<String>,
    #[arg(long)]
    eos_id: Option<String>,
    #[arg(long)]
    bos_id: Option<String>,
    /// Write records here instead of standard output.
    #[arg(long)]
    report: Option<String>,
    /// Prompt token ids, comma or space separated.
    #[arg(long, conflicts_with = "prompt_file")]
    prompt: Option<String>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Modes to run, comma separated.
    #[arg(long, default_value = "api,prada,prada-sd,prada-transfer")]
    modes: String,
    /// Draft lengths swept for prada-sd, comma separated.
    #[arg(long, default_value = "1,2,4,8")]
    draft_lens: String,
    /// Also write a CSV table here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, Vec<TokenId>)> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let flags = [
            ("mode", &self.mode),
            ("blackbox", &self.blackbox),
            ("base_proxy", &self.base_proxy),
            ("adapter", &self.adapter),
            ("draft_len", &self.draft_len),
            ("max_new_tokens", &self.max_new_tokens),
            ("temperature", &self.temperature),
            ("seed", &self.seed),
            ("endpoint", &self.endpoint),
            ("commit", &self.commit),
            ("vocab_size", &self.vocab_size),
            ("eos_id", &self.eos_id),
            ("bos_id", &self.bos_id),
            ("report", &self.report),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        let text = match (&self.prompt, &self.prompt_file) {
            (Some(p), _) => p.clone(),
            (None, Some(f)) => std::fs::read_to_string(f)?,
            (None, None) => return Err(Error::InvalidConfig("a prompt is required (--prompt or --prompt-file)".into())),
        };
        let prompt = parse_token_ids(&text)?.into_iter().map(TokenId).collect();
        Ok((cfg, prompt))
    }
}

fn split_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::InvalidConfig(format!("{what}: bad entry {t:?}"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitBlackbox(a) => {
            let vocab = Vocab::new(a.vocab_size, a.eos_id, a.bos_id)?;
            let arch = match a.arch.as_str() {
                "bigram" => FitArch::Bigram { alpha: a.alpha },
                "tiny" => FitArch::Tiny {
                    dims: TinyDims {
                        context: a.context,
                        embed: a.embed,
                        hidden: a.hidden,
                    },
                    pretrain: PretrainConfig {
                        learning_rate: a.lr,
                        batch_size: a.batch_size,
                        epochs: a.epochs,
                        seed: a.seed,
                    },
                },
                other => return Err(Error::InvalidConfig(format!("unknown arch {other:?}"))),
            };
            let rec = cmd_fit_blackbox(&a.corpus, vocab, &arch, &a.out)?;
            emit(&[rec], None)
        }
        Command::TrainProxy(a) => {
            let cfg = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                rank: a.rank,
                seed: a.seed,
            };
            let (_, rec) = cmd_train_proxy(&a.base, &a.corpus, &cfg, &a.out)?;
            emit(&[rec], None)
        }
        Command::Serve(a) => cmd_serve(&a.blackbox, a.base_proxy.as_deref(), &a.endpoint),
        Command::Generate(a) => {
            let (cfg, prompt) = a.run.resolve()?;
            let outcome = cmd_generate(&cfg, &prompt)?;
            emit(&outcome.records(), cfg.report.as_deref())
        }
        Command::Bench(a) => {
            let (cfg, prompt) = a.run.resolve()?;
            let modes: Vec<Mode> = split_list(&a.modes, "modes")?;
            let lens: Vec<usize> = split_list(&a.draft_lens, "draft_lens")?;
            let rows = cmd_bench(&cfg, &prompt, &modes, &lens)?;
            let records: Vec<_> = rows.iter().flat_map(|r| r.records()).collect();
            emit(&records, cfg.report.as_deref())?;
            if let Some(p) = &a.csv {
                write_csv(p, &rows)?;
            }
            Ok(())
        }
    }
}

fn write_csv(path: &Path, rows: &[prada_cli::GenerateOutcome]) -> Result<()> {
    let mut text = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        text.push_str(&bench_csv_row(r));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(2)
        }
    }
}

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use prada_cli::{
    bench_csv_row, bind_server, cmd_bench, cmd_fit_blackbox, cmd_generate, cmd_train_proxy, error_line, FitArch,
    Mode, RunConfig, BENCH_CSV_HEADER,
};
use prada_core::lora::{init_adapter, LoraAdapter, TrainConfig};
use prada_core::models::{fit_bigram, LogitModel, Model, PretrainConfig, TinyDims, TinyNeuralLM};
use prada_core::transport::Record;
use prada_core::{parse_corpus, Error, TokenId};

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("prada-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_corpus(dir: &Path, seed: u64) -> PathBuf {
    let v = vocab(12);
    let docs = Chain::random(12, seed, 2.0).sample_corpus(&v, 50, 12, seed);
    let text: String = docs
        .iter()
        .map(|d| d.ids().iter().map(u32::to_string).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    let path = dir.join("corpus.txt");
    std::fs::write(&path, text).unwrap();
    path
}

fn tiny_arch(epochs: usize) -> FitArch {
    FitArch::Tiny {
        dims: small_dims(),
        pretrain: PretrainConfig {
            epochs,
            ..PretrainConfig::default()
        },
    }
}

/// Black-box, base proxy and adapter files for a cycle world.
fn cycle_files(tag: &str, trained: bool) -> RunConfig {
    let dir = scratch(tag);
    let w = cycle_world(12, trained);
    let bb = dir.join("bb.prdm");
    let base = dir.join("base.prdm");
    let adapter = dir.join("adapter.prdl");
    Model::Bigram(cycle_black_box(w.vocab, 2)).save(&bb).unwrap();
    Model::Tiny((*w.base).clone()).save(&base).unwrap();
    w.adapter.save(&adapter).unwrap();
    RunConfig {
        blackbox: Some(bb),
        base_proxy: Some(base),
        adapter: Some(adapter),
        max_new_tokens: 16,
        ..RunConfig::default()
    }
}

#[test]
fn fit_bigram_matches_library_fit() {
    let dir = scratch("fit-bigram");
    let corpus = write_corpus(&dir, 1);
    let out = dir.join("bb.prdm");
    let rec = cmd_fit_blackbox(&corpus, vocab(12), &FitArch::Bigram { alpha: 0.5 }, &out).unwrap();
    assert_eq!(rec.get("arch"), Some("bigram"));
    assert_eq!(rec.get("documents"), Some("50"));

    let docs = parse_corpus(&std::fs::read_to_string(&corpus).unwrap(), &vocab(12)).unwrap();
    let direct = Model::Bigram(fit_bigram(&docs, vocab(12), 0.5).unwrap());
    assert_eq!(Model::load(&out).unwrap(), direct);
}

#[test]
fn fit_tiny_is_deterministic() {
    let dir = scratch("fit-tiny");
    let corpus = write_corpus(&dir, 2);
    let (a, b) = (dir.join("a.prdm"), dir.join("b.prdm"));
    cmd_fit_blackbox(&corpus, vocab(12), &tiny_arch(2), &a).unwrap();
    cmd_fit_blackbox(&corpus, vocab(12), &tiny_arch(2), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = Model::load(&a).unwrap();
    assert_eq!(m.arch_name(), "tiny-neural");
    assert!(m.next_logits(&[TokenId(3)]).is_ok());
}

#[test]
fn train_proxy_outputs() {
    let dir = scratch("train");
    let corpus = write_corpus(&dir, 3);
    let base_path = dir.join("base.prdm");
    cmd_fit_blackbox(&corpus, vocab(12), &tiny_arch(1), &base_path).unwrap();
    let base = match Model::load(&base_path).unwrap() {
        Model::Tiny(m) => m,
        _ => unreachable!(),
    };

    let zero_epochs = TrainConfig {
        epochs: 0,
        rank: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = dir.join("init.prdl");
    let (report, rec) = cmd_train_proxy(&base_path, &corpus, &zero_epochs, &out).unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(rec.get("steps"), Some("0"));
    let saved = LoraAdapter::load(&out).unwrap();
    assert_eq!(saved, init_adapter(&base, 3, 9).unwrap());
    assert!(saved.is_zero());

    let cfg = TrainConfig {
        epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let (a, b) = (dir.join("a.prdl"), dir.join("b.prdl"));
    let (report, _) = cmd_train_proxy(&base_path, &corpus, &cfg, &a).unwrap();
    cmd_train_proxy(&base_path, &corpus, &cfg, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(report.final_loss < report.initial_loss);
}

#[test]
fn train_proxy_rejects_bigram_base() {
    let dir = scratch("train-bigram");
    let corpus = write_corpus(&dir, 4);
    let bb = dir.join("bb.prdm");
    cmd_fit_blackbox(&corpus, vocab(12), &FitArch::Bigram { alpha: 1.0 }, &bb).unwrap();
    let err = cmd_train_proxy(&bb, &corpus, &TrainConfig::default(), &dir.join("x.prdl")).unwrap_err();
    assert_eq!(err.kind(), "invalid-config");
}

#[test]
fn generation_records_and_modes() {
    let cfg = cycle_files("records", true);
    for mode in Mode::ALL {
        let out = cmd_generate(
            &RunConfig {
                mode,
                draft_len: Some(4),
                ..cfg.clone()
            },
            &[TokenId(2)],
        )
        .unwrap();
        let recs = out.records();
        assert_eq!(recs[0].get("record"), Some("generation"));
        assert_eq!(recs[0].get("mode"), Some(mode.name()));
        assert_eq!(recs[1].get("record"), Some("ledger"));
        assert_eq!(recs[2].get("record"), Some("latency"));
        for r in &recs {
            assert_eq!(Record::parse(&r.to_string()).as_ref(), Some(r));
        }
        match mode {
            Mode::Api | Mode::PradaTransfer => assert_eq!(out.ledger.inference.up, 0),
            _ => assert!(out.ledger.inference.up > 0),
        }
    }
}

#[test]
fn full_resend_gives_same_tokens_more_bytes() {
    let cfg = RunConfig {
        mode: Mode::PradaSd,
        draft_len: Some(4),
        ..cycle_files("resend", true)
    };
    let delta = cmd_generate(&cfg, &[TokenId(2)]).unwrap();
    let full = cmd_generate(
        &RunConfig {
            full_resend: true,
            ..cfg
        },
        &[TokenId(2)],
    )
    .unwrap();
    assert_eq!(delta.tokens, full.tokens);
    assert!(full.ledger.inference.up > delta.ledger.inference.up);
}

#[test]
fn bench_rounds_halve_with_draft_length() {
    let cfg = cycle_files("bench", false);
    let rows = cmd_bench(&cfg, &[TokenId(2)], &[Mode::Api, Mode::PradaSd], &[1, 2, 4, 8]).unwrap();
    assert_eq!(rows.len(), 5);
    let rounds: Vec<usize> = rows[1..].iter().map(|r| r.rounds).collect();
    assert_eq!(rounds, [16, 8, 4, 2]);
    for r in &rows[1..] {
        assert_eq!(r.tokens, rows[0].tokens);
        assert_eq!(r.ledger.acceptance_rate(), Some(1.0));
    }
    let header_cols = BENCH_CSV_HEADER.split(',').count();
    for r in &rows {
        assert_eq!(bench_csv_row(r).split(',').count(), header_cols);
    }
    assert!(bench_csv_row(&rows[2]).starts_with("prada-sd,2,16,"));
}

#[test]
fn socket_server_handles_concurrent_clients() {
    let cfg = cycle_files("serve", true);
    let server = bind_server(
        cfg.blackbox.as_deref().unwrap(),
        cfg.base_proxy.as_deref(),
        "127.0.0.1:0",
    )
    .unwrap();
    let (addr, _h) = server.spawn().unwrap();
    let expected: Vec<_> = Mode::ALL
        .iter()
        .map(|&mode| {
            cmd_generate(
                &RunConfig {
                    mode,
                    draft_len: Some(3),
                    ..cfg.clone()
                },
                &[TokenId(4)],
            )
            .unwrap()
        })
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..2)
            .map(|_| {
                s.spawn(|| {
                    Mode::ALL
                        .iter()
                        .map(|&mode| {
                            cmd_generate(
                                &RunConfig {
                                    mode,
                                    draft_len: Some(3),
                                    endpoint: Some(addr.to_string()),
                                    blackbox: None,
                                    vocab_size: Some(12),
                                    eos_id: Some(EOS),
                                    bos_id: Some(BOS),
                                    ..cfg.clone()
                                },
                                &[TokenId(4)],
                            )
                            .unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            let got = h.join().unwrap();
            for (g, e) in got.iter().zip(&expected) {
                assert_eq!(g.tokens, e.tokens, "mode {}", e.mode);
                assert_eq!(g.ledger, e.ledger, "mode {}", e.mode);
            }
        }
    });
}

#[test]
fn remote_api_needs_vocab_fields() {
    let cfg = cycle_files("remote-api", false);
    let server = bind_server(cfg.blackbox.as_deref().unwrap(), None, "127.0.0.1:0").unwrap();
    let (addr, _h) = server.spawn().unwrap();
    let mut remote = RunConfig {
        mode: Mode::Api,
        endpoint: Some(addr.to_string()),
        blackbox: None,
        ..cfg
    };
    assert_eq!(cmd_generate(&remote, &[TokenId(2)]).unwrap_err().kind(), "invalid-config");
    remote.vocab_size = Some(12);
    remote.eos_id = Some(EOS);
    remote.bos_id = Some(BOS);
    assert_eq!(cmd_generate(&remote, &[TokenId(2)]).unwrap().tokens.len(), 16);
    remote.vocab_size = Some(13);
    assert_eq!(cmd_generate(&remote, &[TokenId(2)]).unwrap_err().kind(), "handshake-rejected");
}

#[test]
fn transfer_to_server_without_base_fails() {
    let cfg = cycle_files("no-base", true);
    let server = bind_server(cfg.blackbox.as_deref().unwrap(), None, "127.0.0.1:0").unwrap();
    let (addr, _h) = server.spawn().unwrap();
    let err = cmd_generate(
        &RunConfig {
            mode: Mode::PradaTransfer,
            endpoint: Some(addr.to_string()),
            ..cfg
        },
        &[TokenId(2)],
    )
    .unwrap_err();
    assert!(error_line(&err).starts_with("error kind=remote"), "{}", error_line(&err));
}

#[test]
fn mismatched_proxy_vocab_is_refused() {
    let dir = scratch("vocab-mismatch");
    let mut cfg = cycle_files("vocab-mismatch-src", false);
    let other = TinyNeuralLM::random(vocab(10), TinyDims::default(), 1);
    let base = dir.join("base10.prdm");
    let adapter = dir.join("a10.prdl");
    Model::Tiny(other.clone()).save(&base).unwrap();
    init_adapter(&other, 2, 0).unwrap().save(&adapter).unwrap();
    cfg.base_proxy = Some(base);
    cfg.adapter = Some(adapter);
    let err = cmd_generate(&cfg, &[TokenId(2)]).unwrap_err();
    assert!(matches!(err, Error::HandshakeRejected(_) | Error::VocabMismatch(_)), "{err:?}");
}

fn prada() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prada"))
}

#[test]
fn binary_flags_override_config_file() {
    let cfg = cycle_files("binary", false);
    let dir = scratch("binary-run");
    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "# generated\nmode=prada-sd\ndraft_len=2\nmax_new_tokens=10\nblackbox={}\nbase_proxy={}\nadapter={}\n",
            cfg.blackbox.unwrap().display(),
            cfg.base_proxy.unwrap().display(),
            cfg.adapter.unwrap().display()
        ),
    )
    .unwrap();
    let out = prada()
        .args(["generate", "--config"])
        .arg(&conf)
        .args(["--draft-len", "4", "--prompt", "2,3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let recs: Vec<Record> = stdout.lines().map(|l| Record::parse(l).unwrap()).collect();
    assert_eq!(recs[0].get("mode"), Some("prada-sd"));
    assert_eq!(recs[0].get("draft_len"), Some("4"));
    assert_eq!(recs[0].get("response_tokens"), Some("10"));
    assert_eq!(recs[1].get("rounds"), Some("3"));
}

#[test]
fn binary_reports_errors_on_one_line() {
    let out = prada()
        .args(["generate", "--mode", "api", "--prompt", "1", "--blackbox", "/nonexistent/bb.prdm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error kind=io message=\""), "{stderr}");

    let out = prada().args(["generate", "--mode", "chat", "--prompt", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=invalid-config"));
}

#[test]
fn binary_bench_writes_csv() {
    let cfg = cycle_files("binary-bench", false);
    let dir = scratch("binary-bench-out");
    let csv = dir.join("bench.csv");
    let out = prada()
        .args(["bench", "--prompt", "2", "--max-new-tokens", "8", "--modes", "api,prada-sd", "--draft-lens", "2,4"])
        .arg("--blackbox")
        .arg(cfg.blackbox.unwrap())
        .arg("--base-proxy")
        .arg(cfg.base_proxy.unwrap())
        .arg("--adapter")
        .arg(cfg.adapter.unwrap())
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], BENCH_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("prada-sd,2,8,"));
}

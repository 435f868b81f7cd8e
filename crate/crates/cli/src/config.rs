//! Run configuration for `generate` and `bench`.
//!
//! Values come from three layers, later layers winning: built-in defaults,
//! a flat `key=value` file, then command-line flags. Both the file and the
//! flags go through [`RunConfig::set`], so the keys are the same:
//!
//! | key              | value                                             | default      |
//! |------------------|---------------------------------------------------|--------------|
//! | `mode`           | `api`, `prada`, `prada-sd`, `prada-transfer`      | `prada`      |
//! | `blackbox`       | black-box snapshot (in-process runs)              |              |
//! | `base_proxy`     | base proxy snapshot                               |              |
//! | `adapter`        | adapter file                                      |              |
//! | `draft_len`      | draft length S, required for `prada-sd`           |              |
//! | `max_new_tokens` | generation budget                                 | `32`         |
//! | `temperature`    | enables stochastic sampling                       | greedy       |
//! | `seed`           | sampling seed                                     | `0`          |
//! | `endpoint`       | `host:port`, or `in-process`                      | `in-process` |
//! | `commit`         | `delta` or `full` (resend the whole sequence)     | `delta`      |
//! | `vocab_size`, `eos_id`, `bos_id` | vocabulary when no snapshot gives it |          |
//! | `report`         | file for the records instead of standard output  |              |
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use prada_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain black-box generation on the server.
    Api,
    /// One token per round.
    Prada,
    /// Draft-then-verify with drafts of `draft_len`.
    PradaSd,
    /// Adapter uploaded once, generation entirely on the server.
    PradaTransfer,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Api, Mode::Prada, Mode::PradaSd, Mode::PradaTransfer];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Api => "api",
            Mode::Prada => "prada",
            Mode::PradaSd => "prada-sd",
            Mode::PradaTransfer => "prada-transfer",
        }
    }

    pub fn needs_proxies(self) -> bool {
        self != Mode::Api
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub blackbox: Option<PathBuf>,
    pub base_proxy: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub draft_len: Option<usize>,
    pub max_new_tokens: u32,
    pub temperature: Option<f64>,
    pub seed: u64,
    /// `None` runs the server on a thread of this process.
    pub endpoint: Option<String>,
    pub full_resend: bool,
    pub vocab_size: Option<u32>,
    pub eos_id: Option<u32>,
    pub bos_id: Option<u32>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Prada,
            blackbox: None,
            base_proxy: None,
            adapter: None,
            draft_len: None,
            max_new_tokens: 32,
            temperature: None,
            seed: 0,
            endpoint: None,
            full_resend: false,
            vocab_size: None,
            eos_id: None,
            bos_id: None,
            report: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Sets one documented key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "blackbox" => self.blackbox = Some(value.into()),
            "base_proxy" => self.base_proxy = Some(value.into()),
            "adapter" => self.adapter = Some(value.into()),
            "draft_len" => self.draft_len = Some(parse(key, value)?),
            "max_new_tokens" => self.max_new_tokens = parse(key, value)?,
            "temperature" => self.temperature = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "endpoint" => {
                self.endpoint = (value != "in-process").then(|| value.to_string());
            }
            "commit" => {
                self.full_resend = match value {
                    "delta" => false,
                    "full" => true,
                    _ => return Err(Error::InvalidConfig(format!("commit: expected delta or full, got {value:?}"))),
                }
            }
            "vocab_size" => self.vocab_size = Some(parse(key, value)?),
            "eos_id" => self.eos_id = Some(parse(key, value)?),
            "bos_id" => self.bos_id = Some(parse(key, value)?),
            "report" => self.report = Some(value.into()),
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// Checks that the fields the mode needs are present.
    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str| Err(Error::InvalidConfig(format!("mode {} needs {what}", self.mode)));
        if self.endpoint.is_none() && self.blackbox.is_none() {
            return Err(Error::InvalidConfig(
                "in-process runs need a black-box snapshot (blackbox=...)".into(),
            ));
        }
        if self.mode.needs_proxies() {
            if self.base_proxy.is_none() {
                return missing("base_proxy");
            }
            if self.adapter.is_none() {
                return missing("adapter");
            }
        }
        match self.mode {
            Mode::PradaSd if self.draft_len.is_none() => return missing("draft_len"),
            Mode::Api | Mode::PradaTransfer if self.temperature.is_some() => {
                return Err(Error::InvalidConfig(format!(
                    "mode {} runs on the server and is greedy only",
                    self.mode
                )))
            }
            _ => {}
        }
        if let Some(s) = self.draft_len {
            if s == 0 {
                return Err(Error::InvalidConfig("draft_len must be at least 1".into()));
            }
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("temperature must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Effective draft length for the client-driven modes.
    pub fn effective_draft_len(&self) -> usize {
        match self.mode {
            Mode::PradaSd => self.draft_len.unwrap_or(8),
            _ => 1,
        }
    }
}

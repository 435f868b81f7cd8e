//! Line-delimited `key=value` records.
//!
//! One record per line. The first pair is always `record=<kind>`. Keys are
//! `[a-z0-9_]+`; values never contain whitespace or `=` (token lists are
//! comma-joined). Example:
//!
//! ```text
//! record=latency mode=prada-sd total_wall_time_s=0.012000 response_tokens=24 ms_per_token=0.500000
//! ```

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self {
            fields: vec![("record".into(), kind.into())],
        }
    }

    pub fn field(mut self, key: &str, value: impl fmt::Display) -> Self {
        let v = value.to_string().replace(char::is_whitespace, "_").replace('=', ":");
        self.fields.push((key.into(), v));
        self
    }

    /// Moves `kind` to the front and appends the pairs of `other`.
    pub fn merge(mut self, other: Record) -> Self {
        self.fields.extend(other.fields.into_iter().skip(1));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse(line: &str) -> Option<Self> {
        let fields: Vec<(String, String)> = line
            .split_whitespace()
            .map(|pair| {
                pair.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
            })
            .collect::<Option<_>>()?;
        (fields.first().map(|(k, _)| k.as_str()) == Some("record")).then_some(Self { fields })
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

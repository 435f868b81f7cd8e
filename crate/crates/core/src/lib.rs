//! Black-box language-model adaptation through proxy logit offsets.
//!
//! A server hosts a model that only exposes next-token logits. A client
//! owns a small proxy model that shares its vocabulary and a low-rank
//! adapter fine-tuned on local data. At generation time the client adds the
//! difference between the adapted and the base proxy logits to the server's
//! logits before picking each token; a draft-then-verify loop lets the
//! server propose several tokens per round.
//!
//! Modules, bottom-up: [`vocab`] and [`sampling`] (shared primitives),
//! [`models`] (bigram and tiny-MLP backends), [`lora`] (adapters and their
//! training), [`offset`] (the logit arithmetic), [`transport`] (wire format,
//! channels, cost ledger) and [`protocol`] (client and server).

mod codec;
pub mod error;
pub mod linalg;
pub mod lora;
pub mod models;
pub mod offset;
pub mod protocol;
pub mod sampling;
pub mod transport;
pub mod vocab;

pub use codec::fnv1a64;
pub use error::{Error, Result};
pub use vocab::{LogitVector, TokenId, TokenSequence, Vocab};

/// Parses a corpus: one document per line, whitespace-separated decimal
/// token ids. Blank lines are skipped.
pub fn parse_corpus(text: &str, vocab: &Vocab) -> Result<Vec<TokenSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let ids = parse_token_ids(line)
                .map_err(|e| Error::InvalidSequence(format!("line {}: {e}", n + 1)))?;
            TokenSequence::from_ids(&ids, vocab)
                .map_err(|e| Error::InvalidSequence(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Parses token ids separated by whitespace and/or commas.
pub fn parse_token_ids(text: &str) -> Result<Vec<u32>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::InvalidSequence(format!("bad token id {t:?}")))
        })
        .collect()
}

pub fn format_tokens(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|t| t.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_lines() {
        let v = Vocab::new(8, 1, 0).unwrap();
        let docs = parse_corpus("2 3 4\n\n  5 6 1 \n", &v).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].ids(), vec![5, 6, 1]);
        assert!(parse_corpus("2 x", &v).is_err());
        assert!(parse_corpus("2 9", &v).is_err());
        assert_eq!(parse_token_ids("1, 2,3").unwrap(), vec![1, 2, 3]);
    }
}

//! Message payload encoding.
//!
//! A payload is one tag byte followed by the fields in declaration order.
//! Integers are little-endian: token ids and counts 32-bit, session ids and
//! fingerprints 64-bit. Flags are one byte (0/1), optional fields carry a
//! presence byte, and text is a 16-bit length followed by UTF-8.
//!
//! | tag | message          | fields                                                             |
//! |-----|------------------|--------------------------------------------------------------------|
//! | 1   | Hello            | version u8, vocab size u32, eos u32, bos u32, fingerprint u64      |
//! | 2   | HelloAck         | accept flag, reason text                                           |
//! | 3   | StartSession     | session u64, prompt (u32 count + ids), draft len u32, budget u32   |
//! | 4   | DraftBatch       | session u64, count u16, ids u32[n], logits f32[n × V]              |
//! | 5   | Commit           | session u64, accept count u32, replacement (presence + id), done   |
//! | 6   | UploadAdapter    | adapter (u32 length + bytes), base proxy fingerprint u64           |
//! | 7   | ServerGenerate   | session u64, prompt, mode u8 (0 api, 1 transfer), budget u32       |
//! | 8   | GenerationResult | session u64, tokens (u32 count + ids)                              |
//! | 9   | ProtocolError    | code u16, text                                                     |
//! | 10  | CommitSequence   | session u64, tokens (u32 count + ids), done flag                   |
//!
//! `DraftBatch` does not carry the vocabulary size: it is implied by the
//! payload length, `V = (len − 11 − 4n) / 4n`. That makes a batch truncated
//! by a multiple of `4n` bytes look like a valid batch over a smaller
//! vocabulary, so peers that know the vocabulary (everyone past the
//! handshake) decode with [`decode_with_vocab`], which pins `V`.

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::protocol::{GenerateMode, Message};
use crate::vocab::{LogitVector, TokenId, Vocab};

const TAG_HELLO: u8 = 1;
const TAG_HELLO_ACK: u8 = 2;
const TAG_START: u8 = 3;
const TAG_DRAFT: u8 = 4;
const TAG_COMMIT: u8 = 5;
const TAG_UPLOAD: u8 = 6;
const TAG_GENERATE: u8 = 7;
const TAG_RESULT: u8 = 8;
const TAG_ERROR: u8 = 9;
const TAG_COMMIT_SEQ: u8 = 10;

/// Closed-form `DraftBatch` payload size for `n` tokens over vocabulary `v`.
pub fn draft_batch_payload_len(n: usize, v: usize) -> usize {
    1 + 8 + 2 + 4 * n + 4 * n * v
}

fn put_text(w: &mut ByteWriter, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Range(format!("text of {} bytes exceeds 65535", s.len())))?;
    w.u16(len);
    w.bytes(s.as_bytes());
    Ok(())
}

fn put_tokens(w: &mut ByteWriter, tokens: &[TokenId]) -> Result<()> {
    let n = u32::try_from(tokens.len()).map_err(|_| Error::Range("too many tokens".into()))?;
    w.u32(n);
    for t in tokens {
        w.u32(t.0);
    }
    Ok(())
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut w = match msg {
        Message::DraftBatch { tokens, logits, .. } => ByteWriter::with_capacity(
            draft_batch_payload_len(tokens.len(), logits.first().map_or(0, |l| l.len())),
        ),
        _ => ByteWriter::new(),
    };
    match msg {
        Message::Hello {
            protocol_version,
            vocab,
            model_fingerprint,
        } => {
            w.u8(TAG_HELLO);
            w.u8(*protocol_version);
            w.u32(vocab.size());
            w.u32(vocab.eos().0);
            w.u32(vocab.bos().0);
            w.u64(*model_fingerprint);
        }
        Message::HelloAck { accept, reason } => {
            w.u8(TAG_HELLO_ACK);
            w.flag(*accept);
            put_text(&mut w, reason)?;
        }
        Message::StartSession {
            session_id,
            prompt,
            draft_len,
            max_new_tokens,
        } => {
            if *draft_len == 0 {
                return Err(Error::Range("draft length must be at least 1".into()));
            }
            w.u8(TAG_START);
            w.u64(*session_id);
            put_tokens(&mut w, prompt)?;
            w.u32(*draft_len);
            w.u32(*max_new_tokens);
        }
        Message::DraftBatch {
            session_id,
            tokens,
            logits,
        } => {
            if tokens.is_empty() || tokens.len() != logits.len() {
                return Err(Error::Range(format!(
                    "draft batch needs matching non-empty lists, got {} tokens and {} logit vectors",
                    tokens.len(),
                    logits.len()
                )));
            }
            let count = u16::try_from(tokens.len())
                .map_err(|_| Error::Range("draft batch longer than 65535".into()))?;
            let v = logits[0].len();
            if logits.iter().any(|l| l.len() != v) {
                return Err(Error::Range("draft logit vectors differ in length".into()));
            }
            w.u8(TAG_DRAFT);
            w.u64(*session_id);
            w.u16(count);
            for t in tokens {
                w.u32(t.0);
            }
            for l in logits {
                for &s in l.scores() {
                    w.f32(s);
                }
            }
        }
        Message::Commit {
            session_id,
            accept_count,
            replacement,
            done,
        } => {
            w.u8(TAG_COMMIT);
            w.u64(*session_id);
            w.u32(*accept_count);
            w.flag(replacement.is_some());
            if let Some(t) = replacement {
                w.u32(t.0);
            }
            w.flag(*done);
        }
        Message::CommitSequence {
            session_id,
            tokens,
            done,
        } => {
            w.u8(TAG_COMMIT_SEQ);
            w.u64(*session_id);
            put_tokens(&mut w, tokens)?;
            w.flag(*done);
        }
        Message::UploadAdapter {
            adapter,
            base_proxy_fingerprint,
        } => {
            let n = u32::try_from(adapter.len())
                .map_err(|_| Error::Range("adapter larger than 4 GiB".into()))?;
            w.u8(TAG_UPLOAD);
            w.u32(n);
            w.bytes(adapter);
            w.u64(*base_proxy_fingerprint);
        }
        Message::ServerGenerate {
            session_id,
            prompt,
            mode,
            max_new_tokens,
        } => {
            w.u8(TAG_GENERATE);
            w.u64(*session_id);
            put_tokens(&mut w, prompt)?;
            w.u8(mode.tag());
            w.u32(*max_new_tokens);
        }
        Message::GenerationResult { session_id, tokens } => {
            w.u8(TAG_RESULT);
            w.u64(*session_id);
            put_tokens(&mut w, tokens)?;
        }
        Message::ProtocolError { code, text } => {
            w.u8(TAG_ERROR);
            w.u16(*code);
            put_text(&mut w, text)?;
        }
    }
    Ok(w.finish())
}

fn get_text(r: &mut ByteReader<'_>, what: &str) -> Result<String> {
    let len = r.u16(what)? as usize;
    let at = r.offset();
    let raw = r.take(len, what)?;
    String::from_utf8(raw.to_vec()).map_err(|_| Error::malformed(at, format!("{what}: invalid UTF-8")))
}

fn get_tokens(r: &mut ByteReader<'_>, what: &str) -> Result<Vec<TokenId>> {
    let n = r.u32(what)? as usize;
    if n.saturating_mul(4) > r.remaining() {
        return Err(r.malformed(format!("{what}: {n} tokens do not fit in payload")));
    }
    (0..n).map(|_| r.u32(what).map(TokenId)).collect()
}

/// Decodes without knowing the vocabulary; `DraftBatch` width is inferred.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    decode_with_vocab(bytes, None)
}

/// Decodes a payload; when `vocab_size` is given, a `DraftBatch` must carry
/// exactly that many logits per token.
pub fn decode_with_vocab(bytes: &[u8], vocab_size: Option<usize>) -> Result<Message> {
    let mut r = ByteReader::new(bytes);
    let tag = r.u8("tag")?;
    let msg = match tag {
        TAG_HELLO => {
            let protocol_version = r.u8("protocol version")?;
            let at = r.offset();
            let vocab = Vocab::new(r.u32("vocab size")?, r.u32("eos id")?, r.u32("bos id")?)
                .map_err(|e| Error::malformed(at, e.to_string()))?;
            Message::Hello {
                protocol_version,
                vocab,
                model_fingerprint: r.u64("fingerprint")?,
            }
        }
        TAG_HELLO_ACK => Message::HelloAck {
            accept: r.flag("accept")?,
            reason: get_text(&mut r, "reason")?,
        },
        TAG_START => {
            let session_id = r.u64("session id")?;
            let prompt = get_tokens(&mut r, "prompt")?;
            let at = r.offset();
            let draft_len = r.u32("draft length")?;
            if draft_len == 0 {
                return Err(Error::malformed(at, "draft length 0"));
            }
            Message::StartSession {
                session_id,
                prompt,
                draft_len,
                max_new_tokens: r.u32("max new tokens")?,
            }
        }
        TAG_DRAFT => {
            let session_id = r.u64("session id")?;
            let at = r.offset();
            let n = r.u16("draft count")? as usize;
            if n == 0 {
                return Err(Error::malformed(at, "empty draft batch"));
            }
            let tokens = (0..n)
                .map(|_| r.u32("draft token").map(TokenId))
                .collect::<Result<Vec<_>>>()?;
            let rest = r.remaining();
            if rest == 0 || !rest.is_multiple_of(4 * n) {
                return Err(r.malformed(format!(
                    "{rest} logit bytes do not split into {n} vectors"
                )));
            }
            let v = rest / (4 * n);
            if let Some(expected) = vocab_size {
                if v != expected {
                    return Err(r.malformed(format!(
                        "{rest} logit bytes for {n} tokens imply vocabulary {v}, expected {expected}"
                    )));
                }
            }
            let mut logits = Vec::with_capacity(n);
            for _ in 0..n {
                let at = r.offset();
                let raw = r.take(4 * v, "logits")?;
                let scores: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                logits.push(
                    LogitVector::new(scores).map_err(|e| Error::malformed(at, e.to_string()))?,
                );
            }
            Message::DraftBatch {
                session_id,
                tokens,
                logits,
            }
        }
        TAG_COMMIT => {
            let session_id = r.u64("session id")?;
            let accept_count = r.u32("accept count")?;
            let replacement = if r.flag("replacement presence")? {
                Some(TokenId(r.u32("replacement")?))
            } else {
                None
            };
            Message::Commit {
                session_id,
                accept_count,
                replacement,
                done: r.flag("done")?,
            }
        }
        TAG_COMMIT_SEQ => Message::CommitSequence {
            session_id: r.u64("session id")?,
            tokens: get_tokens(&mut r, "sequence")?,
            done: r.flag("done")?,
        },
        TAG_UPLOAD => {
            let n = r.u32("adapter length")? as usize;
            let adapter = r.take(n, "adapter bytes")?.to_vec();
            Message::UploadAdapter {
                adapter,
                base_proxy_fingerprint: r.u64("base fingerprint")?,
            }
        }
        TAG_GENERATE => {
            let session_id = r.u64("session id")?;
            let prompt = get_tokens(&mut r, "prompt")?;
            let at = r.offset();
            let mode_tag = r.u8("mode")?;
            let mode = GenerateMode::from_tag(mode_tag)
                .ok_or_else(|| Error::malformed(at, format!("unknown mode tag {mode_tag}")))?;
            Message::ServerGenerate {
                session_id,
                prompt,
                mode,
                max_new_tokens: r.u32("max new tokens")?,
            }
        }
        TAG_RESULT => Message::GenerationResult {
            session_id: r.u64("session id")?,
            tokens: get_tokens(&mut r, "result")?,
        },
        TAG_ERROR => Message::ProtocolError {
            code: r.u16("error code")?,
            text: get_text(&mut r, "error text")?,
        },
        other => return Err(Error::malformed(0, format!("unknown message tag {other}"))),
    };
    r.expect_end()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn commit_round_trips_bit_exactly() {
        let m = Message::Commit {
            session_id: 42,
            accept_count: 3,
            replacement: Some(TokenId(7)),
            done: false,
        };
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), 1 + 8 + 4 + 1 + 4 + 1);
        assert_eq!(decode(&bytes).unwrap(), m);
        assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn draft_batch_size_is_closed_form() {
        for (s, v) in [(1usize, 3usize), (8, 32), (3, 17)] {
            let m = Message::DraftBatch {
                session_id: 9,
                tokens: (0..s as u32).map(TokenId).collect(),
                logits: (0..s)
                    .map(|i| LogitVector::new(vec![i as f32 * 0.5; v]).unwrap())
                    .collect(),
            };
            let bytes = encode(&m).unwrap();
            assert_eq!(bytes.len(), 1 + 8 + 2 + 4 * s + 4 * s * v);
            assert_eq!(bytes.len(), draft_batch_payload_len(s, v));
            assert_eq!(decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn invalid_messages_refused_on_encode() {
        let empty = Message::DraftBatch {
            session_id: 1,
            tokens: vec![],
            logits: vec![],
        };
        assert!(encode(&empty).is_err());
        let ragged = Message::DraftBatch {
            session_id: 1,
            tokens: ids(&[1, 2]),
            logits: vec![LogitVector::new(vec![0.0; 3]).unwrap()],
        };
        assert!(encode(&ragged).is_err());
        let long_text = Message::HelloAck {
            accept: false,
            reason: "x".repeat(70_000),
        };
        assert!(encode(&long_text).is_err());
    }

    #[test]
    fn structural_violations_are_malformed() {
        let bad_tag = [77u8, 0, 0];
        assert!(matches!(decode(&bad_tag), Err(Error::MalformedPayload { offset: 0, .. })));
        assert!(matches!(decode(&[]), Err(Error::MalformedPayload { .. })));

        let mut commit = encode(&Message::Commit {
            session_id: 1,
            accept_count: 0,
            replacement: None,
            done: true,
        })
        .unwrap();
        let last = commit.len() - 1;
        commit[last] = 2;
        assert!(matches!(decode(&commit), Err(Error::MalformedPayload { .. })));

        let mut draft = encode(&Message::DraftBatch {
            session_id: 1,
            tokens: ids(&[3]),
            logits: vec![LogitVector::new(vec![1.0; 4]).unwrap()],
        })
        .unwrap();
        assert!(decode_with_vocab(&draft, Some(4)).is_ok());
        assert!(matches!(
            decode_with_vocab(&draft, Some(5)),
            Err(Error::MalformedPayload { .. })
        ));
        let shorter = &draft[..draft.len() - 4];
        assert!(decode(shorter).is_ok());
        assert!(matches!(
            decode_with_vocab(shorter, Some(4)),
            Err(Error::MalformedPayload { .. })
        ));
        draft.extend_from_slice(&[0, 0]);
        assert!(decode(&draft).is_err());
        let n = draft.len();
        draft.truncate(n - 2);
        draft[n - 6..n - 2].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&draft), Err(Error::MalformedPayload { .. })));
    }
}

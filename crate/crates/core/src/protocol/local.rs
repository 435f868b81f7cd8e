//! Generation loops that run entirely on one machine: plain black-box
//! decoding for the API mode, and the whole offset-adapted loop for the
//! adapter-upload mode.

use crate::error::Result;
use crate::models::LogitModel;
use crate::offset::{adapted_next_token, OffsetTriple};
use crate::protocol::session::{validate_prompt, ProxyPair};
use crate::sampling::{argmax_sample, GenerationConfig};
use crate::vocab::TokenId;

pub fn black_box_greedy(
    model: &dyn LogitModel,
    prompt: &[TokenId],
    max_new_tokens: u32,
) -> Result<Vec<TokenId>> {
    let vocab = model.vocab();
    validate_prompt(prompt, &vocab)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    if prompt.last() == Some(&vocab.eos()) {
        return Ok(out);
    }
    while out.len() < max_new_tokens as usize {
        let t = argmax_sample(&model.next_logits(&seq)?);
        seq.push(t);
        out.push(t);
        if t == vocab.eos() {
            break;
        }
    }
    Ok(out)
}

/// Per-token offset adaptation: at every step the black-box, base-proxy and
/// adapted-proxy logits are evaluated on the same context and the next
/// token is sampled from the adjusted logits.
pub fn offset_generate(
    black_box: &dyn LogitModel,
    proxies: &ProxyPair,
    prompt: &[TokenId],
    config: &GenerationConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    let vocab = black_box.vocab();
    validate_prompt(prompt, &vocab)?;
    let mut sampler = config.sampler();
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    if prompt.last() == Some(&vocab.eos()) {
        return Ok(out);
    }
    while out.len() < config.max_new_tokens as usize {
        let zb = black_box.next_logits(&seq)?;
        let zp = proxies.base().next_logits(&seq)?;
        let zh = proxies.adapted().next_logits(&seq)?;
        let t = adapted_next_token(&OffsetTriple::new(&zb, &zp, &zh)?, &mut sampler)?;
        seq.push(t);
        out.push(t);
        if t == vocab.eos() {
            break;
        }
    }
    Ok(out)
}

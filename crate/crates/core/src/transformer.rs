//! Token/segment/position embedding sum followed by a stack of encoder
//! blocks. Shared by the question classifier and the span predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::layers::{self, BlockConfig};
use crate::neural::{Init, ParamSet, Tape, Tensor, Var};
use crate::text::PAD;

pub const TOKEN_EMB: &str = "emb.token";
pub const SEGMENT_EMB: &str = "emb.segment";
pub const POSITION_EMB: &str = "emb.position";
const FINAL_NORM: &str = "ln_final";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            depth: 2,
            heads: 4,
            ffn: 128,
        }
    }
}

impl EncoderConfig {
    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            width: self.width,
            heads: self.heads,
            ffn: self.ffn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        self.block().validate()
    }
}

fn block_prefix(i: usize) -> String {
    format!("block{i}")
}

/// Registers embedding tables (PAD row zeroed), blocks and the final norm.
pub fn init_encoder(
    params: &mut ParamSet,
    cfg: &EncoderConfig,
    vocab_size: usize,
    segments: usize,
    positions: usize,
) -> Result<()> {
    cfg.validate()?;
    params.init(TOKEN_EMB, &[vocab_size, cfg.width], Init::Xavier)?;
    let mut tok = params.get(TOKEN_EMB)?.clone();
    tok.row_mut(PAD).fill(0.0);
    params.update(TOKEN_EMB, tok)?;
    params.init(SEGMENT_EMB, &[segments, cfg.width], Init::Xavier)?;
    params.init(POSITION_EMB, &[positions, cfg.width], Init::Xavier)?;
    for i in 0..cfg.depth {
        layers::init_block(params, &block_prefix(i), &cfg.block())?;
    }
    layers::init_layer_norm(params, FINAL_NORM, cfg.width)
}

/// Row `i` = token_emb[ids[i]] + segment_emb[segments[i]] + position_emb[i].
pub fn embed<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    ids: &[usize],
    segments: &[usize],
) -> Result<Var> {
    if ids.len() != segments.len() {
        return Err(Error::dim("embed", &[ids.len()], &[segments.len()]));
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.param(params, TOKEN_EMB)?;
    let seg = tape.param(params, SEGMENT_EMB)?;
    let pos = tape.param(params, POSITION_EMB)?;
    let t = tape.gather(tok, ids)?;
    let s = tape.gather(seg, segments)?;
    let p = tape.gather(pos, &positions)?;
    let ts = tape.add(t, s)?;
    tape.add(ts, p)
}

pub struct EncoderOutput {
    /// `L×width` contextual representations after the final norm.
    pub hidden: Var,
    /// Per block, per head attention matrices.
    pub attention: Vec<Vec<Var>>,
}

pub fn encode<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    cfg: &EncoderConfig,
    ids: &[usize],
    segments: &[usize],
) -> Result<EncoderOutput> {
    let mut x = embed(tape, params, ids, segments)?;
    let mut attention = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let out = layers::self_attention_block(tape, params, &block_prefix(i), &cfg.block(), x)?;
        x = out.out;
        attention.push(out.attention);
    }
    let hidden = layers::layer_norm(tape, params, FINAL_NORM, x)?;
    Ok(EncoderOutput { hidden, attention })
}

/// Evaluates the embedding sum without recording gradients.
pub fn embed_values(params: &ParamSet, ids: &[usize], segments: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = embed(&mut tape, params, ids, segments)?;
    Ok(tape.value(v).clone())
}

//! Layer primitives recorded on a [`Tape`].
//!
//! Parameters are looked up by `prefix.name`; every layer has a matching
//! `init_*` function that registers its parameters in a [`ParamSet`].

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn key(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

pub fn init_linear(params: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize) -> Result<()> {
    params.init(&key(prefix, "w"), &[d_in, d_out], Init::Xavier)?;
    params.init(&key(prefix, "b"), &[d_out], Init::Zeros)
}

/// `x · W + b` on every row of `x`.
pub fn linear<'p>(tape: &mut Tape<'p>, params: &'p ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(params, &key(prefix, "w"))?;
    let b = tape.param(params, &key(prefix, "b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

pub fn init_gated_tanh(
    params: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    init_linear(params, &key(prefix, "value"), d_in, d_out)?;
    init_linear(params, &key(prefix, "gate"), d_in, d_out)
}

/// `tanh(x·W + b) ⊙ σ(x·W' + b')`.
pub fn gated_tanh<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let v = linear(tape, params, &key(prefix, "value"), x)?;
    let v = tape.tanh(v);
    let g = linear(tape, params, &key(prefix, "gate"), x)?;
    let g = tape.sigmoid(g);
    tape.mul(v, g)
}

pub fn init_layer_norm(params: &mut ParamSet, prefix: &str, width: usize) -> Result<()> {
    params.init(&key(prefix, "g"), &[width], Init::Ones)?;
    params.init(&key(prefix, "b"), &[width], Init::Zeros)
}

pub fn layer_norm<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let g = tape.param(params, &key(prefix, "g"))?;
    let b = tape.param(params, &key(prefix, "b"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

// ---------------------------------------------------------------------------
// GRU

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

pub fn init_gru(params: &mut ParamSet, prefix: &str, d_in: usize, hidden: usize) -> Result<()> {
    for gate in GRU_GATES {
        params.init(&key(prefix, &format!("w_{gate}")), &[d_in, hidden], Init::Xavier)?;
        params.init(&key(prefix, &format!("u_{gate}")), &[hidden, hidden], Init::Xavier)?;
        params.init(&key(prefix, &format!("b_{gate}")), &[hidden], Init::Zeros)?;
    }
    Ok(())
}

/// Hidden width of the GRU registered under `prefix`.
pub fn gru_hidden(params: &ParamSet, prefix: &str) -> Result<usize> {
    Ok(params.get(&key(prefix, "u_z"))?.cols())
}

/// Input projections `x·W + b` for the three gates.
struct GateInputs {
    z: Var,
    r: Var,
    h: Var,
}

fn gate_inputs<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    x: Var,
) -> Result<GateInputs> {
    let mut proj = |gate: &str| -> Result<Var> {
        let w = tape.param(params, &key(prefix, &format!("w_{gate}")))?;
        let b = tape.param(params, &key(prefix, &format!("b_{gate}")))?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    };
    Ok(GateInputs {
        z: proj("z")?,
        r: proj("r")?,
        h: proj("h")?,
    })
}

fn gru_recur<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    h_prev: Var,
    inputs: &GateInputs,
) -> Result<Var> {
    let u_z = tape.param(params, &key(prefix, "u_z"))?;
    let u_r = tape.param(params, &key(prefix, "u_r"))?;
    let u_h = tape.param(params, &key(prefix, "u_h"))?;

    let hz = tape.matmul(h_prev, u_z)?;
    let z = tape.add(inputs.z, hz)?;
    let z = tape.sigmoid(z);

    let hr = tape.matmul(h_prev, u_r)?;
    let r = tape.add(inputs.r, hr)?;
    let r = tape.sigmoid(r);

    let rh = tape.mul(r, h_prev)?;
    let hh = tape.matmul(rh, u_h)?;
    let cand = tape.add(inputs.h, hh)?;
    let cand = tape.tanh(cand);

    // h' = (1 - z) ⊙ h + z ⊙ h̃
    let keep = tape.affine_scalar(z, -1.0, 1.0);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

/// One GRU step for a single `1×d` input row and `1×h` state.
pub fn gru_step<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    h_prev: Var,
    x: Var,
) -> Result<Var> {
    let h = gru_hidden(params, prefix)?;
    let hs = tape.value(h_prev).shape().to_vec();
    if tape.value(h_prev).len() != h {
        return Err(Error::dim("gru_step", &hs, &[h]));
    }
    let inputs = gate_inputs(tape, params, prefix, x)?;
    gru_recur(tape, params, prefix, h_prev, &inputs)
}

/// Runs the GRU over the rows of `xs` (`L×d`) from a zero state and returns
/// the final `1×h` hidden state.
pub fn gru_sequence<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    xs: Var,
) -> Result<Var> {
    let hidden = gru_hidden(params, prefix)?;
    let steps = tape.value(xs).rows();
    let all = gate_inputs(tape, params, prefix, xs)?;
    let mut h = tape.constant(super::tensor::Tensor::zeros(&[1, hidden]));
    for t in 0..steps {
        let inputs = GateInputs {
            z: tape.slice_rows(all.z, t, 1)?,
            r: tape.slice_rows(all.r, t, 1)?,
            h: tape.slice_rows(all.h, t, 1)?,
        };
        h = gru_recur(tape, params, prefix, h, &inputs)?;
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Encoder block

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config("block extents must be positive".into()));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

pub fn init_block(params: &mut ParamSet, prefix: &str, cfg: &BlockConfig) -> Result<()> {
    cfg.validate()?;
    let d = cfg.width;
    init_layer_norm(params, &key(prefix, "ln1"), d)?;
    for proj in ["q", "k", "v", "o"] {
        init_linear(params, &key(prefix, &format!("attn.{proj}")), d, d)?;
    }
    init_layer_norm(params, &key(prefix, "ln2"), d)?;
    init_linear(params, &key(prefix, "ffn.in"), d, cfg.ffn)?;
    init_linear(params, &key(prefix, "ffn.out"), cfg.ffn, d)
}

pub struct BlockOutput {
    pub out: Var,
    /// One `L×L` row-stochastic matrix per head.
    pub attention: Vec<Var>,
}

/// Pre-normalised encoder block:
/// `x + MHA(LN(x))`, then `· + FFN(LN(·))` with a GELU feed-forward.
pub fn self_attention_block<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    prefix: &str,
    cfg: &BlockConfig,
    seq: Var,
) -> Result<BlockOutput> {
    cfg.validate()?;
    let (len, width) = (tape.value(seq).rows(), tape.value(seq).cols());
    if width != cfg.width {
        return Err(Error::dim("self_attention_block", &[len, width], &[cfg.width]));
    }
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let normed = layer_norm(tape, params, &key(prefix, "ln1"), seq)?;
    let q = linear(tape, params, &key(prefix, "attn.q"), normed)?;
    let k = linear(tape, params, &key(prefix, "attn.k"), normed)?;
    let v = linear(tape, params, &key(prefix, "attn.v"), normed)?;

    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.affine_scalar(scores, scale, 0.0);
        let weights = tape.softmax_rows(scores);
        attention.push(weights);
        heads.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let attended = linear(tape, params, &key(prefix, "attn.o"), merged)?;
    let mid = tape.add(seq, attended)?;

    let normed = layer_norm(tape, params, &key(prefix, "ln2"), mid)?;
    let hidden = linear(tape, params, &key(prefix, "ffn.in"), normed)?;
    let hidden = tape.gelu(hidden);
    let ff = linear(tape, params, &key(prefix, "ffn.out"), hidden)?;
    let out = tape.add(mid, ff)?;
    Ok(BlockOutput { out, attention })
}

//! Layers shared by the pretraining and verification models.
//!
//! All layers operate on time-major `[rows × channels]` matrices holding one
//! or more sequences back to back; `offsets` (length `n + 1`) delimits them.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const LN_EPS: f32 = 1e-5;

/// Where a forward pass reads its parameters from.
#[derive(Clone, Copy)]
pub struct Binding<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Binding<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, trainable: false }
    }

    pub fn get(&self, g: &mut Graph, name: &str) -> Result<Var> {
        if self.trainable {
            g.param(self.store, name)
        } else {
            g.frozen(self.store, name)
        }
    }
}

/// Offsets for back-to-back sequences of the given lengths.
pub fn offsets_from_lengths(lengths: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(lengths.len() + 1);
    out.push(0);
    for &l in lengths {
        out.push(out.last().unwrap() + l);
    }
    out
}

/// `x · W (+ b)` with `W` stored as `{prefix}.weight` `[in × out]`.
pub fn linear(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(g, &format!("{prefix}.weight"))?;
    let y = g.matmul(x, w)?;
    let bias = format!("{prefix}.bias");
    if p.store.contains(&bias) {
        let b = p.get(g, &bias)?;
        g.add_row(y, b)
    } else {
        Ok(y)
    }
}

pub fn layer_norm(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = p.get(g, &format!("{prefix}.gamma"))?;
    let beta = p.get(g, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

pub fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) {
    for name in ["wq", "wk", "wv", "wo"] {
        store.init_linear(&format!("{prefix}.{name}"), dim, dim, false, rng);
    }
}

/// Multi-head attention with bias-free projections.
///
/// Returns the output and the raw attention node (for weight inspection).
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    p: Binding<'_>,
    prefix: &str,
    query: Var,
    context: Var,
    heads: usize,
    q_offsets: &[usize],
    kv_offsets: &[usize],
) -> Result<(Var, Var)> {
    let dim = g.shape(query).last().copied().unwrap_or(0);
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Config {
            field: "heads".into(),
            msg: format!("{dim} channels not divisible by {heads} heads"),
        });
    }
    let q = linear(g, p, &format!("{prefix}.wq"), query)?;
    let k = linear(g, p, &format!("{prefix}.wk"), context)?;
    let v = linear(g, p, &format!("{prefix}.wv"), context)?;
    let att = g.attention(q, k, v, heads, q_offsets, kv_offsets)?;
    let out = linear(g, p, &format!("{prefix}.wo"), att)?;
    Ok((out, att))
}

pub fn init_feed_forward<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize, rng: &mut R) {
    store.init_linear(&format!("{prefix}.fc1"), dim, hidden, true, rng);
    store.init_linear(&format!("{prefix}.fc2"), hidden, dim, true, rng);
}

pub fn feed_forward(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, dropout: f32) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.relu(h);
    let h = g.dropout(h, dropout)?;
    linear(g, p, &format!("{prefix}.fc2"), h)
}

/// Shape of a pre-norm Transformer stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_hidden: usize,
    pub dropout: f32,
}

pub fn init_encoder<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &TransformerConfig, rng: &mut R) {
    for l in 0..cfg.layers {
        let lp = format!("{prefix}.layers.{l}");
        store.init_layer_norm(&format!("{lp}.ln1"), cfg.dim);
        init_attention(store, &format!("{lp}.attn"), cfg.dim, rng);
        store.init_layer_norm(&format!("{lp}.ln2"), cfg.dim);
        init_feed_forward(store, &format!("{lp}.ff"), cfg.dim, cfg.ff_hidden, rng);
    }
    store.init_layer_norm(&format!("{prefix}.ln_f"), cfg.dim);
}

/// Pre-norm self-attention encoder:
/// `h = x + MHA(LN(x))`, `h = h + FF(LN(h))`, final `LN`.
pub fn encoder_forward(
    g: &mut Graph,
    p: Binding<'_>,
    prefix: &str,
    x: Var,
    offsets: &[usize],
    cfg: &TransformerConfig,
) -> Result<Var> {
    let mut h = x;
    for l in 0..cfg.layers {
        let lp = format!("{prefix}.layers.{l}");
        let n = layer_norm(g, p, &format!("{lp}.ln1"), h)?;
        let (a, _) = multi_head_attention(g, p, &format!("{lp}.attn"), n, n, cfg.heads, offsets, offsets)?;
        let a = g.dropout(a, cfg.dropout)?;
        h = g.add(h, a)?;
        let n = layer_norm(g, p, &format!("{lp}.ln2"), h)?;
        let f = feed_forward(g, p, &format!("{lp}.ff"), n, cfg.dropout)?;
        let f = g.dropout(f, cfg.dropout)?;
        h = g.add(h, f)?;
    }
    layer_norm(g, p, &format!("{prefix}.ln_f"), h)
}

pub fn init_cross_decoder<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &TransformerConfig, rng: &mut R) {
    for l in 0..cfg.layers {
        let lp = format!("{prefix}.layers.{l}");
        store.init_layer_norm(&format!("{lp}.ln_q"), cfg.dim);
        store.init_layer_norm(&format!("{lp}.ln_kv"), cfg.dim);
        init_attention(store, &format!("{lp}.attn"), cfg.dim, rng);
        store.init_layer_norm(&format!("{lp}.ln2"), cfg.dim);
        init_feed_forward(store, &format!("{lp}.ff"), cfg.dim, cfg.ff_hidden, rng);
    }
    store.init_layer_norm(&format!("{prefix}.ln_f"), cfg.dim);
}

/// Cross-attention stack: queries never attend to each other, only to `context`.
///
/// Returns the output and the attention node of every layer.
#[allow(clippy::too_many_arguments)]
pub fn cross_decoder_forward(
    g: &mut Graph,
    p: Binding<'_>,
    prefix: &str,
    queries: Var,
    context: Var,
    q_offsets: &[usize],
    kv_offsets: &[usize],
    cfg: &TransformerConfig,
) -> Result<(Var, Vec<Var>)> {
    let mut h = queries;
    let mut attn = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let lp = format!("{prefix}.layers.{l}");
        let nq = layer_norm(g, p, &format!("{lp}.ln_q"), h)?;
        let nkv = layer_norm(g, p, &format!("{lp}.ln_kv"), context)?;
        let (a, w) = multi_head_attention(g, p, &format!("{lp}.attn"), nq, nkv, cfg.heads, q_offsets, kv_offsets)?;
        attn.push(w);
        let a = g.dropout(a, cfg.dropout)?;
        h = g.add(h, a)?;
        let n = layer_norm(g, p, &format!("{lp}.ln2"), h)?;
        let f = feed_forward(g, p, &format!("{lp}.ff"), n, cfg.dropout)?;
        let f = g.dropout(f, cfg.dropout)?;
        h = g.add(h, f)?;
    }
    let out = layer_norm(g, p, &format!("{prefix}.ln_f"), h)?;
    Ok((out, attn))
}

/// Causal convolution of time-major `x` `[L × C_in]` with `kernel`
/// `[C_out × C_in × k]`: `out[s] = sum_i kernel[.., .., i] · x[s - dilation * i]`.
pub fn causal_conv_time_major(g: &mut Graph, x: Var, kernel: Var, dilation: usize, offsets: &[usize]) -> Result<Var> {
    let ks = g.shape(kernel).to_vec();
    let c_in = g.shape(x).last().copied().unwrap_or(0);
    if ks.len() != 3 || ks[1] != c_in {
        return Err(Error::shape("dilated_causal_conv1d", g.shape(x), &ks));
    }
    let cols = g.causal_im2col(x, ks[2], dilation, offsets)?;
    let w = g.reshape(kernel, &[ks[0], ks[1] * ks[2]])?;
    let wt = g.transpose(w)?;
    g.matmul(cols, wt)
}

/// Dilated causal convolution of a single channel-first sequence
/// `x` `[C_in × L]`, producing `[C_out × L]`; the input is left-padded with
/// `(k - 1) * dilation` zeros so the length is preserved.
pub fn dilated_causal_conv1d(g: &mut Graph, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
    if g.value(x).rank() != 2 {
        return Err(Error::shape("dilated_causal_conv1d", g.shape(x), &[2]));
    }
    let len = g.shape(x)[1];
    let xt = g.transpose(x)?;
    let y = causal_conv_time_major(g, xt, kernel, dilation, &[0, len])?;
    g.transpose(y)
}

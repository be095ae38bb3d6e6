//! Temporal-attentive convolutional network.
//!
//! Stacked residual blocks of two weight-normalized dilated causal
//! convolutions (dilation `2^l` in block `l`), then multi-head self-attention
//! over the whole sequence, residual-added.
//!
//! Sequences are time-major `[L × C]` and may be stacked back to back,
//! delimited by `offsets`. Kernel tap `i` reads lag `i · dilation`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, causal_conv_time_major, Binding};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const TACN: &str = "tacn";

#[derive(Clone, Debug, PartialEq)]
pub struct TacnConfig {
    pub num_inputs: usize,
    pub num_channels: Vec<usize>,
    pub kernel: usize,
    pub dropout: f32,
    pub heads: usize,
}

impl Default for TacnConfig {
    fn default() -> Self {
        Self {
            num_inputs: 64,
            num_channels: vec![64, 128],
            kernel: 5,
            dropout: 0.2,
            heads: 4,
        }
    }
}

impl TacnConfig {
    pub fn out_channels(&self) -> usize {
        self.num_channels.last().copied().unwrap_or(self.num_inputs)
    }

    pub fn dilation(level: usize) -> usize {
        1 << level
    }

    /// Timesteps seen by the last output: `1 + sum_l 2 (k - 1) 2^l`.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.num_channels.len())
            .map(|l| 2 * (self.kernel - 1) * Self::dilation(l))
            .sum::<usize>()
    }
}

fn init_conv<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, k: usize, rng: &mut R) {
    let normal = Normal::new(0.0f32, 0.01).expect("finite std");
    let v: Vec<f32> = (0..c_out * c_in * k).map(|_| normal.sample(rng)).collect();
    let per = c_in * k;
    let g: Vec<f32> = v
        .chunks(per)
        .map(|row| row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt() as f32)
        .collect();
    store.insert(format!("{prefix}.v"), Tensor::from_parts(vec![c_out, c_in, k], v));
    store.insert(format!("{prefix}.g"), Tensor::from_parts(vec![c_out], g));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}

pub fn init_residual_block<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: &mut R,
) {
    init_conv(store, &format!("{prefix}.conv1"), c_in, c_out, k, rng);
    init_conv(store, &format!("{prefix}.conv2"), c_out, c_out, k, rng);
    if c_in != c_out {
        store.init_linear(&format!("{prefix}.skip"), c_in, c_out, true, rng);
    }
}

pub fn init_tacn<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &TacnConfig, rng: &mut R) {
    let mut c_in = cfg.num_inputs;
    for (l, &c_out) in cfg.num_channels.iter().enumerate() {
        init_residual_block(store, &format!("{prefix}.blocks.{l}"), c_in, c_out, cfg.kernel, rng);
        c_in = c_out;
    }
    nn::init_attention(store, &format!("{prefix}.fusion"), cfg.out_channels(), rng);
}

fn conv(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, dilation: usize, offsets: &[usize]) -> Result<Var> {
    let v = p.get(g, &format!("{prefix}.v"))?;
    let gain = p.get(g, &format!("{prefix}.g"))?;
    let w = g.weight_norm(v, gain)?;
    let y = causal_conv_time_major(g, x, w, dilation, offsets)?;
    let b = p.get(g, &format!("{prefix}.bias"))?;
    g.add_row(y, b)
}

/// `ReLU(conv2(ReLU(conv1(x))))` with dropout after each ReLU, plus the
/// (projected when channel counts differ) input.
pub fn residual_block(
    g: &mut Graph,
    p: Binding<'_>,
    prefix: &str,
    x: Var,
    dilation: usize,
    dropout: f32,
    offsets: &[usize],
) -> Result<Var> {
    let h = conv(g, p, &format!("{prefix}.conv1"), x, dilation, offsets)?;
    let h = g.relu(h);
    let h = g.dropout(h, dropout)?;
    let h = conv(g, p, &format!("{prefix}.conv2"), h, dilation, offsets)?;
    let h = g.relu(h);
    let h = g.dropout(h, dropout)?;
    let skip = format!("{prefix}.skip");
    let res = if p.store.contains(&format!("{skip}.weight")) {
        nn::linear(g, p, &skip, x)?
    } else {
        x
    };
    g.add(h, res)
}

/// Convolutional stage only: `[L × num_inputs]` to `[L × out_channels]`.
pub fn tcn_forward(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, cfg: &TacnConfig, offsets: &[usize]) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 2 || shape[1] != cfg.num_inputs {
        return Err(Error::shape("tacn_forward", shape, &[cfg.num_inputs]));
    }
    let mut h = x;
    for l in 0..cfg.num_channels.len() {
        h = residual_block(g, p, &format!("{prefix}.blocks.{l}"), h, TacnConfig::dilation(l), cfg.dropout, offsets)?;
    }
    Ok(h)
}

/// Bidirectional self-attention over each sequence, residual-added.
///
/// Returns the output and the attention node.
pub fn mha_fusion(g: &mut Graph, p: Binding<'_>, prefix: &str, h: Var, heads: usize, offsets: &[usize]) -> Result<(Var, Var)> {
    let (a, w) = nn::multi_head_attention(g, p, prefix, h, h, heads, offsets, offsets)?;
    Ok((g.add(h, a)?, w))
}

/// Convolutional stage followed by attention fusion.
pub fn tacn_forward(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, cfg: &TacnConfig, offsets: &[usize]) -> Result<Var> {
    let h = tcn_forward(g, p, prefix, x, cfg, offsets)?;
    let (out, _) = mha_fusion(g, p, &format!("{prefix}.fusion"), h, cfg.heads, offsets)?;
    Ok(out)
}

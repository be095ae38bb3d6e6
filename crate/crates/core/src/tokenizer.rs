//! Window projection and codebook discretization.
//!
//! A padded sequence `[T_pad × C]` is cut into non-overlapping windows of
//! `window` rows. A convolution with kernel length and stride equal to the
//! window maps each window to one `embed_dim` vector; since windows are
//! contiguous in row-major storage this is a reshape to
//! `[d × window·C]` followed by a linear map. The codebook `[embed_dim × vocab]`
//! scores each embedding against `vocab` codewords; the same head scores
//! reconstructed embeddings during pretraining.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{linear, Binding};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const PROJ: &str = "proj";
pub const CODEBOOK: &str = "codebook";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub vocab: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 8,
            embed_dim: 64,
            channels: crate::dataio::CHANNELS,
            vocab: 192,
        }
    }
}

/// Windowed embeddings of one or more back-to-back sequences.
#[derive(Clone, Debug)]
pub struct EmbeddedSequence {
    /// `[d × embed_dim]`.
    pub z: Var,
    pub window_valid: Vec<bool>,
}

pub fn init_projection<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &WindowConfig, rng: &mut R) {
    store.init_linear(PROJ, cfg.window * cfg.channels, cfg.embed_dim, true, rng);
}

pub fn init_codebook<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &WindowConfig, rng: &mut R) {
    store.init_linear(CODEBOOK, cfg.embed_dim, cfg.vocab, true, rng);
}

/// `[T_pad × C]` to `[T_pad / window × embed_dim]`.
pub fn window_project(g: &mut Graph, p: Binding<'_>, x: Var, cfg: &WindowConfig) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != cfg.channels {
        return Err(Error::shape("window_project", &shape, &[cfg.channels]));
    }
    if cfg.window == 0 || !shape[0].is_multiple_of(cfg.window) {
        return Err(Error::Contract(format!(
            "sequence length {} is not a multiple of window {}",
            shape[0], cfg.window
        )));
    }
    let windows = g.reshape(x, &[shape[0] / cfg.window, cfg.window * cfg.channels])?;
    linear(g, p, PROJ, windows)
}

/// Pre-softmax codeword scores `z · W + b`.
pub fn codebook_logits(g: &mut Graph, p: Binding<'_>, z: Var) -> Result<Var> {
    linear(g, p, CODEBOOK, z)
}

/// Codeword distributions `softmax(z · W + b)`, one row per window.
pub fn token_logits(g: &mut Graph, p: Binding<'_>, z: Var) -> Result<Var> {
    let logits = codebook_logits(g, p, z)?;
    g.softmax(logits, 1)
}

/// Per-row argmax; ties go to the lowest index.
pub fn hard_tokens(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Source of Gumbel perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GumbelNoise {
    /// Draw from the graph's random stream.
    Sample,
    /// No perturbation (deterministic relaxation).
    Off,
}

/// Gumbel-softmax relaxation of categorical sampling over `logits` rows.
///
/// Returns the sample and the chosen token per row. With `hard`, the forward
/// value is one-hot at the perturbed argmax and gradients flow through the
/// soft sample (straight-through).
pub fn gumbel_softmax_sample(
    g: &mut Graph,
    logits: Var,
    tau: f32,
    hard: bool,
    noise: GumbelNoise,
) -> Result<(Var, Vec<usize>)> {
    if !(tau > 0.0) {
        return Err(Error::Param(format!("Gumbel temperature must be > 0, got {tau}")));
    }
    let shape = g.shape(logits).to_vec();
    let perturbed = match noise {
        GumbelNoise::Off => logits,
        GumbelNoise::Sample => {
            let n: usize = shape.iter().product();
            let rng = g.rng();
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    (-(-u.ln()).ln()) as f32
                })
                .collect();
            let noise = g.constant(Tensor::new(&shape, data)?);
            g.add(logits, noise)?
        }
    };
    let scaled = g.scale(perturbed, 1.0 / tau);
    let soft = g.softmax(scaled, shape.len().max(1) - 1)?;
    let tokens = hard_tokens(g.value(soft));
    if !hard {
        return Ok((soft, tokens));
    }
    let k = shape.last().copied().unwrap_or(1);
    let mut onehot = Tensor::zeros(&shape);
    for (r, &t) in tokens.iter().enumerate() {
        onehot.data_mut()[r * k + t] = 1.0;
    }
    let st = g.straight_through(soft, onehot)?;
    Ok((st, tokens))
}

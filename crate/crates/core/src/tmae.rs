//! Temporal masked autoencoder pretraining.
//!
//! Per sample: windows are projected to `Z`, tokenized against the codebook
//! and given sinusoidal positions. A random subset of valid windows is
//! masked. The primary encoder sees the visible windows; the momentum
//! encoder (an EMA copy, never trained) sees the masked ones and provides
//! regression targets. A cross-attention regressor reconstructs the masked
//! representations from mask-token queries, and the tied codebook head
//! predicts their codewords.
//!
//! Batches hold many samples back to back, delimited by offsets.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::dataio::ProcessedSample;
use crate::error::{Error, Result};
use crate::metrics::{hits_at_k, ndcg_at_10, rank_of};
use crate::nn::{self, offsets_from_lengths, Binding, TransformerConfig};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::tokenizer::{self, GumbelNoise, WindowConfig};

pub const ENCODER: &str = "encoder";
pub const MOMENTUM: &str = "momentum";
pub const REGRESSOR: &str = "regressor";
pub const MASK_TOKEN: &str = "mask_token";

#[derive(Clone, Debug, PartialEq)]
pub struct TmaeConfig {
    pub window: WindowConfig,
    pub encoder: TransformerConfig,
    pub regressor: TransformerConfig,
    pub mask_ratio: f64,
    pub alpha: f32,
    pub beta: f32,
    pub tau: f32,
    pub momentum: f64,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TmaeConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            encoder: TransformerConfig {
                dim: 64,
                heads: 4,
                layers: 8,
                ff_hidden: 128,
                dropout: 0.2,
            },
            regressor: TransformerConfig {
                dim: 64,
                heads: 4,
                layers: 4,
                ff_hidden: 128,
                dropout: 0.2,
            },
            mask_ratio: 0.4,
            alpha: 1.0,
            beta: 1.0,
            tau: 1.0,
            momentum: 0.99,
            lr: 0.01,
            batch_size: 128,
            epochs: 20,
        }
    }
}

impl TmaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| {
            Err(Error::Config {
                field: field.into(),
                msg,
            })
        };
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio", format!("{} outside (0, 1)", self.mask_ratio));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum", format!("{} outside [0, 1]", self.momentum));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha", "loss weights must be >= 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        for (field, t) in [("enc_layers", &self.encoder), ("regressor_layers", &self.regressor)] {
            if t.dim != self.window.embed_dim {
                return bad(field, format!("width {} != embed_dim {}", t.dim, self.window.embed_dim));
            }
            if t.heads == 0 || t.dim % t.heads != 0 {
                return bad("heads", format!("{} not divisible by {} heads", t.dim, t.heads));
            }
        }
        Ok(())
    }
}

/// Fresh parameters for every pretraining component; the momentum encoder
/// starts as a copy of the primary one.
pub fn init_params(cfg: &TmaeConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    tokenizer::init_projection(&mut store, &cfg.window, &mut rng);
    tokenizer::init_codebook(&mut store, &cfg.window, &mut rng);
    nn::init_encoder(&mut store, ENCODER, &cfg.encoder, &mut rng);
    store.copy_prefix(&format!("{ENCODER}."), &format!("{MOMENTUM}."));
    nn::init_cross_decoder(&mut store, REGRESSOR, &cfg.regressor, &mut rng);
    store.insert(MASK_TOKEN, Tensor::randn(&[cfg.window.embed_dim], 0.02, &mut rng));
    store
}

/// Sinusoidal encoding: `PE(pos, 2i) = sin(pos / 10000^(2i/m))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/m))`.
pub fn positional_encoding(d: usize, m: usize) -> Tensor {
    let mut data = vec![0.0f32; d * m];
    for pos in 0..d {
        for j in 0..m {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / m as f64);
            data[pos * m + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    Tensor::from_parts(vec![d, m], data)
}

/// Visible and masked window indices of one sequence, each sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSplit {
    pub v_index: Vec<usize>,
    pub m_index: Vec<usize>,
}

impl MaskSplit {
    pub fn d(&self) -> usize {
        self.v_index.len() + self.m_index.len()
    }
}

/// Number of windows masked out of `n_valid` valid windows in a sequence of `d`.
pub fn masked_count(d: usize, n_valid: usize, ratio: f64) -> usize {
    ((ratio * n_valid as f64).round() as usize).max(1).min(d.saturating_sub(1))
}

/// Masks `max(1, round(ratio · n_valid))` valid windows, uniformly at random;
/// everything else (including padding windows) stays visible.
pub fn split_visible_masked<R: Rng + ?Sized>(window_valid: &[bool], ratio: f64, rng: &mut R) -> Result<MaskSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Param(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let valid: Vec<usize> = (0..window_valid.len()).filter(|&i| window_valid[i]).collect();
    if valid.len() < 2 {
        return Err(Error::Data(format!("{} valid windows, need at least 2", valid.len())));
    }
    let d = window_valid.len();
    let d_m = masked_count(d, valid.len(), ratio);
    let mut masked = vec![false; d];
    for k in index::sample(rng, valid.len(), d_m) {
        masked[valid[k]] = true;
    }
    Ok(MaskSplit {
        v_index: (0..d).filter(|&i| !masked[i]).collect(),
        m_index: (0..d).filter(|&i| masked[i]).collect(),
    })
}

/// Primary encoder over visible windows (positions already added).
pub fn encode_visible(g: &mut Graph, p: &ParamStore, z_v: Var, offsets: &[usize], cfg: &TransformerConfig) -> Result<Var> {
    nn::encoder_forward(g, Binding::trainable(p), ENCODER, z_v, offsets, cfg)
}

/// Momentum encoder over masked windows: input detached, parameters frozen,
/// no dropout.
pub fn momentum_encode(g: &mut Graph, p: &ParamStore, z_m: &Tensor, offsets: &[usize], cfg: &TransformerConfig) -> Result<Var> {
    let x = g.constant(z_m.clone());
    let cfg = TransformerConfig { dropout: 0.0, ..*cfg };
    nn::encoder_forward(g, Binding::frozen(p), MOMENTUM, x, offsets, &cfg)
}

/// Mask-token queries `m_vec + PE(pos)` for each masked position.
pub fn mask_queries(g: &mut Graph, p: &ParamStore, pe_masked: &Tensor) -> Result<Var> {
    let pe = g.constant(pe_masked.clone());
    let tok = g.param(p, MASK_TOKEN)?;
    g.add_row(pe, tok)
}

/// Cross-attention regressor; returns reconstructions and per-layer attention nodes.
#[allow(clippy::too_many_arguments)]
pub fn regress_masked(
    g: &mut Graph,
    p: &ParamStore,
    r_v: Var,
    e_mask: Var,
    v_offsets: &[usize],
    m_offsets: &[usize],
    cfg: &TransformerConfig,
) -> Result<(Var, Vec<Var>)> {
    if g.shape(r_v).first() == Some(&0) {
        return Err(Error::Contract("regressor needs at least one visible window".into()));
    }
    nn::cross_decoder_forward(g, Binding::trainable(p), REGRESSOR, e_mask, r_v, m_offsets, v_offsets, cfg)
}

/// Codeword logits through the tied codebook head.
pub fn predict_codewords(g: &mut Graph, p: &ParamStore, r_hat: Var) -> Result<Var> {
    tokenizer::codebook_logits(g, Binding::trainable(p), r_hat)
}

/// `target ← μ · target + (1 − μ) · source`, elementwise in f64.
pub fn ema_update(target: &mut Tensor, source: &Tensor, mu: f64) -> Result<()> {
    if target.shape() != source.shape() {
        return Err(Error::shape("momentum_update", target.shape(), source.shape()));
    }
    for (t, &s) in target.data_mut().iter_mut().zip(source.data()) {
        *t = (mu * f64::from(*t) + (1.0 - mu) * f64::from(s)) as f32;
    }
    Ok(())
}

/// EMA of every `encoder.*` tensor into its `momentum.*` twin.
pub fn momentum_update(store: &mut ParamStore, mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Param(format!("momentum {mu} outside [0, 1]")));
    }
    let enc = format!("{ENCODER}.");
    let pairs: Vec<(String, Tensor)> = store
        .with_prefix(&enc)
        .map(|(k, v)| (format!("{MOMENTUM}.{}", &k[enc.len()..]), v.clone()))
        .collect();
    for (name, src) in pairs {
        let dst = store
            .get_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        ema_update(dst, &src, mu)?;
    }
    Ok(())
}

/// Mean squared error between targets and reconstructions.
pub fn alignment_loss(g: &mut Graph, r_m: Var, r_hat: Var) -> Result<Var> {
    let diff = g.sub(r_m, r_hat)?;
    let sq = g.square(diff);
    Ok(g.mean_all(sq))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLoss {
    pub l_align: f64,
    pub l_pred: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
    pub hits1: f64,
    pub ndcg10: f64,
}

/// `α · L_align + β · L_pred` plus ranking diagnostics of `pred_logits`
/// against `tokens`.
pub fn pretrain_loss(
    g: &mut Graph,
    l_align: Var,
    l_pred: Var,
    alpha: f32,
    beta: f32,
    pred_logits: Var,
    tokens: &[usize],
) -> Result<(Var, PretrainLoss)> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Param("loss weights must be >= 0".into()));
    }
    let a = g.scale(l_align, alpha);
    let b = g.scale(l_pred, beta);
    let total = g.add(a, b)?;
    let logits = g.value(pred_logits);
    let ranks: Vec<usize> = tokens.iter().enumerate().map(|(r, &t)| rank_of(logits.row(r), t)).collect();
    let rec = PretrainLoss {
        l_align: f64::from(g.value(l_align).item()),
        l_pred: f64::from(g.value(l_pred).item()),
        alpha: f64::from(alpha),
        beta: f64::from(beta),
        total: f64::from(g.value(total).item()),
        hits1: hits_at_k(&ranks, 1)?,
        ndcg10: ndcg_at_10(&ranks),
    };
    Ok((total, rec))
}

/// One forward pass over a batch of samples.
pub struct BatchForward {
    pub loss: Var,
    pub record: PretrainLoss,
    pub splits: Vec<MaskSplit>,
    pub r_v: Var,
    pub r_m: Var,
    pub r_hat: Var,
    pub regressor_attention: Vec<Var>,
}

/// Builds the full pretraining graph for `batch`. Masks are drawn from
/// `rng`; Gumbel noise comes from the graph's own stream in training mode.
pub fn forward_batch<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &ParamStore,
    batch: &[&ProcessedSample],
    cfg: &TmaeConfig,
    rng: &mut R,
) -> Result<BatchForward> {
    let m = cfg.window.embed_dim;
    let sigma = cfg.window.window;
    let mut data = Vec::new();
    let mut starts = Vec::with_capacity(batch.len());
    let mut total_windows = 0;
    for s in batch {
        if s.window != sigma {
            return Err(Error::Contract(format!("sample {} windowed at {}, model expects {sigma}", s.key(), s.window)));
        }
        data.extend_from_slice(s.features.data());
        starts.push(total_windows);
        total_windows += s.num_windows();
    }
    let rows = data.len() / cfg.window.channels;
    let x = g.constant(Tensor::new(&[rows, cfg.window.channels], data)?);
    let z = tokenizer::window_project(g, Binding::trainable(p), x, &cfg.window)?;

    let logits = tokenizer::codebook_logits(g, Binding::trainable(p), z)?;
    let noise = if g.is_train() { GumbelNoise::Sample } else { GumbelNoise::Off };
    let (onehot, tokens) = tokenizer::gumbel_softmax_sample(g, logits, cfg.tau, true, noise)?;

    let mut pe_data = Vec::with_capacity(total_windows * m);
    let mut splits = Vec::with_capacity(batch.len());
    let (mut v_rows, mut m_rows) = (Vec::new(), Vec::new());
    let (mut v_lens, mut m_lens) = (Vec::new(), Vec::new());
    let mut pe_masked = Vec::new();
    for (s, &start) in batch.iter().zip(&starts) {
        let d = s.num_windows();
        let pe = positional_encoding(d, m);
        pe_data.extend_from_slice(pe.data());
        let split = split_visible_masked(&s.window_valid, cfg.mask_ratio, rng)
            .map_err(|e| Error::Data(format!("sample {}: {e}", s.key())))?;
        v_rows.extend(split.v_index.iter().map(|&i| start + i));
        m_rows.extend(split.m_index.iter().map(|&i| start + i));
        for &i in &split.m_index {
            pe_masked.extend_from_slice(pe.row(i));
        }
        v_lens.push(split.v_index.len());
        m_lens.push(split.m_index.len());
        splits.push(split);
    }
    let pe = g.constant(Tensor::new(&[total_windows, m], pe_data)?);
    let z_p = g.add(z, pe)?;
    let v_off = offsets_from_lengths(&v_lens);
    let m_off = offsets_from_lengths(&m_lens);

    let z_v = g.gather_rows(z_p, &v_rows)?;
    let r_v = encode_visible(g, p, z_v, &v_off, &cfg.encoder)?;
    let z_m = g.value(z_p).select_rows(&m_rows);
    let r_m = momentum_encode(g, p, &z_m, &m_off, &cfg.encoder)?;

    let e_mask = mask_queries(g, p, &Tensor::new(&[m_rows.len(), m], pe_masked)?)?;
    let (r_hat, regressor_attention) = regress_masked(g, p, r_v, e_mask, &v_off, &m_off, &cfg.regressor)?;
    let pred = predict_codewords(g, p, r_hat)?;

    let l_align = alignment_loss(g, r_m, r_hat)?;
    let target = g.gather_rows(onehot, &m_rows)?;
    let l_pred = g.soft_cross_entropy(pred, target)?;
    let masked_tokens: Vec<usize> = m_rows.iter().map(|&r| tokens[r]).collect();
    let (loss, record) = pretrain_loss(g, l_align, l_pred, cfg.alpha, cfg.beta, pred, &masked_tokens)?;
    Ok(BatchForward {
        loss,
        record,
        splits,
        r_v,
        r_m,
        r_hat,
        regressor_attention,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: PretrainLoss,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParamStore,
    pub log: Vec<LossRecord>,
}

impl PretrainOutcome {
    /// Step-weighted mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_mean(&self.log, |r| r.loss.total)
    }
}

pub fn epoch_mean(log: &[LossRecord], f: impl Fn(&LossRecord) -> f64) -> Vec<f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in log {
        let e = sums.entry(r.epoch).or_default();
        e.0 += f(r);
        e.1 += 1;
    }
    sums.values().map(|(s, n)| s / *n as f64).collect()
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_add(0x5851_F42D_4C95_7F2D)
}

/// Full pretraining loop: Adam on everything except the momentum encoder,
/// then an EMA step, once per batch.
pub fn run_pretraining(dataset: &[ProcessedSample], cfg: &TmaeConfig, seed: u64) -> Result<PretrainOutcome> {
    run_pretraining_from(init_params(cfg, seed), dataset, cfg, seed)
}

pub fn run_pretraining_from(
    mut params: ParamStore,
    dataset: &[ProcessedSample],
    cfg: &TmaeConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("empty pretraining dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ProcessedSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let mut g = Graph::train(step_seed(seed, step));
            let fwd = forward_batch(&mut g, &params, &batch, cfg, &mut rng)?;
            if !fwd.record.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch} step {step}: loss {}",
                    fwd.record.total
                )));
            }
            let grads = g.backward(fwd.loss)?.params(&g);
            if grads.values().any(|t| !t.all_finite()) {
                return Err(Error::Divergence(format!("epoch {epoch} step {step}: non-finite gradient")));
            }
            adam.step(&mut params, &grads)?;
            momentum_update(&mut params, cfg.momentum)?;
            log.push(LossRecord {
                epoch,
                step,
                loss: fwd.record,
            });
            step += 1;
        }
    }
    Ok(PretrainOutcome { params, log })
}

pub const LOSS_LOG_HEADER: &str = "epoch,step,L_align,L_pred,total,hits1,ndcg10";

/// Writes `# key = value` config lines, then the CSV loss log.
pub fn write_loss_log<W: Write>(mut w: W, header: &[(String, String)], log: &[LossRecord]) -> std::io::Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{LOSS_LOG_HEADER}")?;
    for r in log {
        let l = &r.loss;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.step, l.l_align, l.l_pred, l.total, l.hits1, l.ndcg10
        )?;
    }
    Ok(())
}

//! Siamese pair verifier built on the pretrained projection and encoder.
//!
//! Branch: window projection, positional encoding, Transformer encoder,
//! TACN, FingerCA, then a mean over the valid windows of each sample. Both
//! branches read the same parameters. The head scores `[z_a ‖ z_b]` with a
//! two-layer MLP; training minimizes `λ1 · contrastive + λ2 · BCE`.
//!
//! A batch of pairs embeds each distinct sample once.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::dataio::{PairBatch, ProcessedSample, SamplePair};
use crate::error::{Error, Result};
use crate::fingerca::{self, FINGERCA};
use crate::metrics::{evaluate_scores, EvalRecord};
use crate::nn::{self, offsets_from_lengths, Binding, TransformerConfig};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tacn::{self, TacnConfig, TACN};
use crate::tensor::Tensor;
use crate::tmae::{positional_encoding, ENCODER};
use crate::tokenizer::{self, WindowConfig, PROJ};

pub const HEAD: &str = "head";

/// Model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    /// TACN without the attention fusion stage.
    NoAttention,
    /// Pretrained projection and encoder only, pooled straight into the head.
    PretrainedOnly,
    /// Full architecture, projection and encoder randomly initialized.
    NoPretrain,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoAttention, Ablation::PretrainedOnly, Ablation::NoPretrain];

    pub fn uses_tacn(self) -> bool {
        self != Ablation::PretrainedOnly
    }

    pub fn uses_fusion(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoPretrain)
    }

    pub fn uses_pretrained(self) -> bool {
        self != Ablation::NoPretrain
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoAttention => "no-attention",
            Ablation::PretrainedOnly => "pretrained-only",
            Ablation::NoPretrain => "no-pretrain",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config {
                field: "ablation".into(),
                msg: format!("unknown variant `{s}`"),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub window: WindowConfig,
    pub encoder: TransformerConfig,
    pub tacn: TacnConfig,
    pub reduction: usize,
    pub head_hidden: usize,
    pub ablation: Ablation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            encoder: crate::tmae::TmaeConfig::default().encoder,
            tacn: TacnConfig::default(),
            reduction: fingerca::REDUCTION,
            head_hidden: 64,
            ablation: Ablation::Full,
        }
    }
}

impl NetConfig {
    /// Width of the pooled branch embedding.
    pub fn embedding_dim(&self) -> usize {
        if self.ablation.uses_tacn() {
            self.tacn.out_channels()
        } else {
            self.encoder.dim
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f32,
    pub lambda2: f32,
    pub margin: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub swap_prob: f64,
    /// Epochs of linear learning-rate warmup; cosine decay follows.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 1.0,
            margin: 1.0,
            lr: 0.01,
            batch_size: 128,
            epochs: 30,
            swap_prob: 0.5,
            warmup_epochs: 3,
        }
    }
}

impl TrainConfig {
    /// Learning rate at optimizer step `step` of `total`: linear warmup over
    /// `warmup` steps, then cosine decay towards zero.
    pub fn lr_at(&self, step: usize, warmup: usize, total: usize) -> f32 {
        if step < warmup {
            return self.lr * (step + 1) as f32 / warmup as f32;
        }
        let span = total.saturating_sub(warmup).max(1);
        let frac = (step - warmup) as f64 / span as f64;
        (f64::from(self.lr) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: field.into(),
                msg: msg.into(),
            })
        };
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return bad("lambda1", "loss weights must be >= 0");
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return bad("lambda2", "loss weights cannot both be zero");
        }
        if !(self.margin > 0.0) {
            return bad("margin", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        Ok(())
    }
}

fn init_components<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) {
    if cfg.ablation.uses_tacn() {
        let mut t = ParamStore::new();
        tacn::init_tacn(&mut t, TACN, &cfg.tacn, rng);
        for (k, v) in t.iter() {
            if cfg.ablation.uses_fusion() || !k.starts_with("tacn.fusion.") {
                store.insert(k.clone(), v.clone());
            }
        }
        fingerca::init_fingerca(store, FINGERCA, cfg.tacn.out_channels(), cfg.reduction, rng);
    }
    let c = cfg.embedding_dim();
    store.init_linear(&format!("{HEAD}.fc1"), 2 * c, cfg.head_hidden, true, rng);
    store.init_linear(&format!("{HEAD}.fc2"), cfg.head_hidden, 1, true, rng);
}

/// Every tensor a model with this configuration reads, randomly initialized.
pub fn build_random(cfg: &NetConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    tokenizer::init_projection(&mut store, &cfg.window, &mut rng);
    nn::init_encoder(&mut store, ENCODER, &cfg.encoder, &mut rng);
    init_components(&mut store, cfg, &mut rng);
    store
}

/// Copies the projection and encoder out of `pretrained`; everything else is
/// fresh. Missing or mis-shaped tensors are reported by name.
pub fn build_from_pretrained(pretrained: &ParamStore, cfg: &NetConfig, seed: u64) -> Result<ParamStore> {
    let mut store = build_random(cfg, seed);
    if !cfg.ablation.uses_pretrained() {
        return Ok(store);
    }
    let wanted: Vec<String> = store
        .names()
        .filter(|k| k.starts_with(&format!("{PROJ}.")) || k.starts_with(&format!("{ENCODER}.")))
        .cloned()
        .collect();
    for name in wanted {
        let src = pretrained
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("pretrained checkpoint lacks tensor `{name}`")))?;
        let dst = store.get_mut(&name).expect("listed above");
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.clone();
    }
    Ok(store)
}

/// Reads the model variant off the tensors present in a checkpoint.
pub fn infer_ablation(store: &ParamStore) -> Ablation {
    if !store.contains("tacn.blocks.0.conv1.v") {
        Ablation::PretrainedOnly
    } else if !store.contains("tacn.fusion.wq.weight") {
        Ablation::NoAttention
    } else {
        Ablation::Full
    }
}

/// Branch embeddings of `samples`, one row each, `[n × embedding_dim]`.
pub fn embed(g: &mut Graph, p: &ParamStore, cfg: &NetConfig, samples: &[&ProcessedSample]) -> Result<Var> {
    let b = Binding::trainable(p);
    let m = cfg.window.embed_dim;
    let mut data = Vec::new();
    let mut pe = Vec::new();
    let mut lens = Vec::with_capacity(samples.len());
    let mut pools = Vec::with_capacity(samples.len());
    let mut start = 0;
    for s in samples {
        if s.window != cfg.window.window {
            return Err(Error::Contract(format!(
                "sample {} windowed at {}, model expects {}",
                s.key(),
                s.window,
                cfg.window.window
            )));
        }
        let d = s.num_windows();
        data.extend_from_slice(s.features.data());
        pe.extend_from_slice(positional_encoding(d, m).data());
        let mut valid: Vec<usize> = s.valid_windows().into_iter().map(|i| start + i).collect();
        if valid.is_empty() {
            valid = (start..start + d).collect();
        }
        pools.push(valid);
        lens.push(d);
        start += d;
    }
    let offsets = offsets_from_lengths(&lens);
    let x = g.constant(Tensor::new(&[data.len() / cfg.window.channels, cfg.window.channels], data)?);
    let z = tokenizer::window_project(g, b, x, &cfg.window)?;
    let pe = g.constant(Tensor::new(&[start, m], pe)?);
    let z = g.add(z, pe)?;
    let mut h = nn::encoder_forward(g, b, ENCODER, z, &offsets, &cfg.encoder)?;
    if cfg.ablation.uses_tacn() {
        h = tacn::tcn_forward(g, b, TACN, h, &cfg.tacn, &offsets)?;
        if cfg.ablation.uses_fusion() {
            h = tacn::mha_fusion(g, b, "tacn.fusion", h, cfg.tacn.heads, &offsets)?.0;
        }
        h = fingerca::recalibrate(g, b, FINGERCA, h, &offsets)?;
    }
    g.group_mean(h, &pools)
}

/// Head logit for each row pair of `z_a`, `z_b`; the probability is its sigmoid.
pub fn pair_logit(g: &mut Graph, p: &ParamStore, z_a: Var, z_b: Var) -> Result<Var> {
    let b = Binding::trainable(p);
    let z = g.concat(&[z_a, z_b], 1)?;
    let h = nn::linear(g, b, &format!("{HEAD}.fc1"), z)?;
    let h = g.relu(h);
    nn::linear(g, b, &format!("{HEAD}.fc2"), h)
}

/// Mean over rows of `y · ‖z1 − z2‖² + (1 − y) · max(0, margin − ‖z1 − z2‖)²`.
pub fn contrastive_loss(g: &mut Graph, z1: Var, z2: Var, labels: &[f32], margin: f32) -> Result<Var> {
    if !(margin > 0.0) {
        return Err(Error::Param(format!("margin must be > 0, got {margin}")));
    }
    let diff = g.sub(z1, z2)?;
    let sq = g.square(diff);
    let d2 = g.sum_axis(sq, 1)?;
    if g.shape(d2) != [labels.len()] {
        return Err(Error::shape("contrastive_loss", g.shape(d2), &[labels.len()]));
    }
    let d = g.sqrt(d2);
    let neg_d = g.scale(d, -1.0);
    let gap = g.add_scalar(neg_d, margin);
    let hinge = g.relu(gap);
    let hinge2 = g.square(hinge);
    let y = g.constant(Tensor::vector(labels));
    let not_y = g.constant(Tensor::vector(&labels.iter().map(|&v| 1.0 - v).collect::<Vec<_>>()));
    let pos = g.mul(y, d2)?;
    let neg = g.mul(not_y, hinge2)?;
    let per = g.add(pos, neg)?;
    Ok(g.mean_all(per))
}

/// Contrastive loss of a single pair, evaluated directly in f64.
pub fn contrastive_value(z1: &[f32], z2: &[f32], y: f32, margin: f32) -> f64 {
    let d2: f64 = z1.iter().zip(z2).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
    let hinge = (f64::from(margin) - d2.sqrt()).max(0.0);
    f64::from(y) * d2 + (1.0 - f64::from(y)) * hinge * hinge
}

/// Binary cross-entropy of `sigmoid(logits)` against `labels`.
pub fn ce_loss(g: &mut Graph, logits: Var, labels: &[f32]) -> Result<Var> {
    g.bce_with_logits(logits, labels)
}

pub fn total_loss(g: &mut Graph, l_con: Var, l_ce: Var, lambda1: f32, lambda2: f32) -> Result<Var> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::Param("loss weights must be >= 0".into()));
    }
    let a = g.scale(l_con, lambda1);
    let b = g.scale(l_ce, lambda2);
    g.add(a, b)
}

/// Graph nodes for one batch of pairs.
pub struct PairForward {
    pub loss: Var,
    pub logits: Var,
    pub labels: Vec<f32>,
}

fn unique_samples(pairs: &[SamplePair]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut order = Vec::new();
    let mut idx = |s: usize| {
        *slot.entry(s).or_insert_with(|| {
            order.push(s);
            order.len() - 1
        })
    };
    let a: Vec<usize> = pairs.iter().map(|p| idx(p.a)).collect();
    let b: Vec<usize> = pairs.iter().map(|p| idx(p.b)).collect();
    (order, a, b)
}

/// Embeds every distinct sample in `pairs`, then scores and losses all pairs.
pub fn forward_pairs(
    g: &mut Graph,
    p: &ParamStore,
    net: &NetConfig,
    train: &TrainConfig,
    samples: &[ProcessedSample],
    pairs: &[SamplePair],
) -> Result<PairForward> {
    let (order, ia, ib) = unique_samples(pairs);
    let batch: Vec<&ProcessedSample> = order
        .iter()
        .map(|&i| samples.get(i).ok_or_else(|| Error::Data(format!("pair references sample {i} of {}", samples.len()))))
        .collect::<Result<_>>()?;
    let z = embed(g, p, net, &batch)?;
    let za = g.gather_rows(z, &ia)?;
    let zb = g.gather_rows(z, &ib)?;
    let labels: Vec<f32> = pairs.iter().map(|q| f32::from(q.y)).collect();
    let logits = pair_logit(g, p, za, zb)?;
    let l_con = contrastive_loss(g, za, zb, &labels, train.margin)?;
    let l_ce = ce_loss(g, logits, &labels)?;
    let loss = total_loss(g, l_con, l_ce, train.lambda1, train.lambda2)?;
    Ok(PairForward { loss, logits, labels })
}

fn sigmoid(z: f32) -> f64 {
    let z = f64::from(z);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probabilities and mean hybrid loss for `pairs`, in evaluation mode.
pub fn predict(
    p: &ParamStore,
    net: &NetConfig,
    train: &TrainConfig,
    samples: &[ProcessedSample],
    pairs: &[SamplePair],
) -> Result<(Vec<f64>, f64)> {
    let mut probs = Vec::with_capacity(pairs.len());
    let mut loss = 0.0;
    for chunk in pairs.chunks(train.batch_size.max(1)) {
        let mut g = Graph::eval();
        let fwd = forward_pairs(&mut g, p, net, train, samples, chunk)?;
        probs.extend(g.value(fwd.logits).data().iter().map(|&z| sigmoid(z)));
        loss += f64::from(g.value(fwd.loss).item()) * chunk.len() as f64;
    }
    Ok((probs, loss / pairs.len().max(1) as f64))
}

/// Accuracy, F1 (threshold 0.5) and AUC on `pairs`.
pub fn evaluate(
    p: &ParamStore,
    net: &NetConfig,
    train: &TrainConfig,
    samples: &[ProcessedSample],
    pairs: &PairBatch,
) -> Result<(EvalRecord, f64)> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to evaluate".into()));
    }
    let (probs, loss) = predict(p, net, train, samples, &pairs.pairs)?;
    Ok((evaluate_scores(&probs, &pairs.labels())?, loss))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best: EvalRecord,
    pub log: Vec<MetricRecord>,
}

fn record(epoch: usize, split: &str, r: &EvalRecord, loss: f64) -> MetricRecord {
    MetricRecord {
        epoch,
        split: split.into(),
        accuracy: r.accuracy,
        f1: r.f1,
        auc: r.auc,
        loss,
    }
}

/// Adam on the hybrid loss; validation after every epoch, keeping the
/// parameters with the best validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut params: ParamStore,
    net: &NetConfig,
    cfg: &TrainConfig,
    samples: &[ProcessedSample],
    train_pairs: &PairBatch,
    val_pairs: &PairBatch,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Data("training and validation pair sets must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1_7E);
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::new();
    let mut best: Option<(usize, EvalRecord, ParamStore)> = None;
    let mut order = train_pairs.pairs.clone();
    let mut step = 0u64;
    let per_epoch = order.len().div_ceil(cfg.batch_size);
    let (warmup, total) = (cfg.warmup_epochs * per_epoch, cfg.epochs * per_epoch);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut probs, mut labels, mut loss_sum) = (Vec::new(), Vec::new(), 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SamplePair> = chunk
                .iter()
                .map(|&q| if rng.random_bool(cfg.swap_prob) { SamplePair { a: q.b, b: q.a, y: q.y } } else { q })
                .collect();
            let mut g = Graph::train(seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(step));
            let fwd = forward_pairs(&mut g, &params, net, cfg, samples, &batch)?;
            let loss = g.value(fwd.loss).item();
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch} step {step}: loss {loss}")));
            }
            let grads = g.backward(fwd.loss)?.params(&g);
            if grads.values().any(|t| !t.all_finite()) {
                return Err(Error::Divergence(format!("epoch {epoch} step {step}: non-finite gradient")));
            }
            adam.lr = cfg.lr_at(step as usize, warmup, total);
            adam.step(&mut params, &grads)?;
            probs.extend(g.value(fwd.logits).data().iter().map(|&z| sigmoid(z)));
            labels.extend(batch.iter().map(|q| q.y));
            loss_sum += f64::from(loss) * batch.len() as f64;
            step += 1;
        }
        if labels.contains(&1) && labels.contains(&0) {
            let tr = evaluate_scores(&probs, &labels)?;
            log.push(record(epoch, "train", &tr, loss_sum / labels.len() as f64));
        }
        let (val, val_loss) = evaluate(&params, net, cfg, samples, val_pairs)?;
        log.push(record(epoch, "val", &val, val_loss));
        if best.as_ref().is_none_or(|(_, b, _)| val.accuracy > b.accuracy) {
            best = Some((epoch, val, params.clone()));
        }
    }
    let (best_epoch, best, params) = match best {
        Some(b) => b,
        None => {
            let (val, _) = evaluate(&params, net, cfg, samples, val_pairs)?;
            (0, val, params)
        }
    };
    Ok(FinetuneOutcome {
        params,
        best_epoch,
        best,
        log,
    })
}

pub const METRIC_LOG_HEADER: &str = "epoch,split,accuracy,f1,auc,loss";

pub fn write_metric_log<W: Write>(mut w: W, header: &[(String, String)], log: &[MetricRecord]) -> std::io::Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{METRIC_LOG_HEADER}")?;
    for r in log {
        writeln!(w, "{},{},{:.6},{:.6},{:.6},{:.6}", r.epoch, r.split, r.accuracy, r.f1, r.auc, r.loss)?;
    }
    Ok(())
}

//! Run configuration: defaults, `key = value` files, validation.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::TransformerConfig;
use crate::tacn::TacnConfig;
use crate::tmae::TmaeConfig;
use crate::tokenizer::WindowConfig;
use crate::touchseqnet::{Ablation, NetConfig, TrainConfig};

pub const WINDOW_CHOICES: [usize; 3] = [4, 8, 12];
pub const KERNEL_CHOICES: [usize; 3] = [4, 5, 7];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub lr: f32,
    pub batch: usize,
    pub enc_layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub dropout: f32,
    pub regressor_layers: usize,
    pub window: usize,
    pub mask_ratio: f64,
    pub vocab: usize,
    pub tau: f32,
    pub momentum: f64,
    pub tcn_inputs: usize,
    pub tcn_channels: Vec<usize>,
    pub kernel: usize,
    pub reduction: usize,
    pub head_hidden: usize,
    pub alpha: f32,
    pub beta: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    pub margin: f32,
    pub swap_prob: f64,
    pub warmup_epochs: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Lifts the candidate-set restriction on `window` and `kernel`.
    pub allow_override: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            lr: 0.01,
            batch: 128,
            enc_layers: 8,
            heads: 4,
            ff_hidden: 128,
            dropout: 0.2,
            regressor_layers: 4,
            window: 8,
            mask_ratio: 0.4,
            vocab: 192,
            tau: 1.0,
            momentum: 0.99,
            tcn_inputs: 64,
            tcn_channels: vec![64, 128],
            kernel: 5,
            reduction: 4,
            head_hidden: 64,
            alpha: 1.0,
            beta: 1.0,
            lambda1: 0.5,
            lambda2: 1.0,
            margin: 1.0,
            swap_prob: 0.5,
            warmup_epochs: 3,
            pretrain_epochs: 20,
            finetune_epochs: 30,
            seed: 0,
            allow_override: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| Error::Config {
        field: key.into(),
        msg: format!("cannot parse `{value}`: {e}"),
    })
}

fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    /// Sets one field from its textual value. Keys use underscores; dashes
    /// are accepted as well.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "embed_dim" => self.embed_dim = parse(k, value)?,
            "lr" => self.lr = parse(k, value)?,
            "batch" | "batch_size" => self.batch = parse(k, value)?,
            "enc_layers" => self.enc_layers = parse(k, value)?,
            "heads" => self.heads = parse(k, value)?,
            "ff_hidden" => self.ff_hidden = parse(k, value)?,
            "dropout" => self.dropout = parse(k, value)?,
            "regressor_layers" => self.regressor_layers = parse(k, value)?,
            "window" | "sigma" => self.window = parse(k, value)?,
            "mask_ratio" => self.mask_ratio = parse(k, value)?,
            "vocab" => self.vocab = parse(k, value)?,
            "tau" => self.tau = parse(k, value)?,
            "momentum" => self.momentum = parse(k, value)?,
            "tcn_inputs" => self.tcn_inputs = parse(k, value)?,
            "tcn_channels" => {
                let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
                self.tcn_channels = inner
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(k, s))
                    .collect::<Result<_>>()?;
            }
            "kernel" => self.kernel = parse(k, value)?,
            "reduction" => self.reduction = parse(k, value)?,
            "head_hidden" => self.head_hidden = parse(k, value)?,
            "alpha" => self.alpha = parse(k, value)?,
            "beta" => self.beta = parse(k, value)?,
            "lambda1" => self.lambda1 = parse(k, value)?,
            "lambda2" => self.lambda2 = parse(k, value)?,
            "margin" => self.margin = parse(k, value)?,
            "swap_prob" => self.swap_prob = parse(k, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(k, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(k, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "allow_override" => self.allow_override = parse(k, value)?,
            _ => return Err(config_err(k, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err("file", format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("batch", self.batch),
            ("enc_layers", self.enc_layers),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("regressor_layers", self.regressor_layers),
            ("window", self.window),
            ("vocab", self.vocab),
            ("tcn_inputs", self.tcn_inputs),
            ("kernel", self.kernel),
            ("reduction", self.reduction),
            ("head_hidden", self.head_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_err(field, "must be positive"));
            }
        }
        if !(self.lr > 0.0) {
            return Err(config_err("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(config_err("mask_ratio", format!("{} outside (0, 1)", self.mask_ratio)));
        }
        if !(self.tau > 0.0) {
            return Err(config_err("tau", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(config_err("momentum", format!("{} outside [0, 1]", self.momentum)));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(config_err("heads", format!("embed_dim {} not divisible by {}", self.embed_dim, self.heads)));
        }
        if self.tcn_inputs != self.embed_dim {
            return Err(config_err("tcn_inputs", format!("must equal embed_dim {}", self.embed_dim)));
        }
        match self.tcn_channels.last() {
            None => return Err(config_err("tcn_channels", "must list at least one block")),
            Some(&c) if c % self.heads != 0 => {
                return Err(config_err("tcn_channels", format!("{c} channels not divisible by {} heads", self.heads)));
            }
            _ => {}
        }
        if self.tcn_channels.contains(&0) {
            return Err(config_err("tcn_channels", "must be positive"));
        }
        if !self.allow_override {
            if !WINDOW_CHOICES.contains(&self.window) {
                return Err(config_err("window", format!("{} not in {WINDOW_CHOICES:?}", self.window)));
            }
            if !KERNEL_CHOICES.contains(&self.kernel) {
                return Err(config_err("kernel", format!("{} not in {KERNEL_CHOICES:?}", self.kernel)));
            }
        }
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if v < 0.0 {
                return Err(config_err(field, "must be >= 0"));
            }
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(config_err("lambda2", "lambda1 and lambda2 cannot both be zero"));
        }
        if !(self.margin > 0.0) {
            return Err(config_err("margin", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(config_err("swap_prob", "outside [0, 1]"));
        }
        Ok(())
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window: self.window,
            embed_dim: self.embed_dim,
            channels: crate::dataio::CHANNELS,
            vocab: self.vocab,
        }
    }

    fn transformer(&self, layers: usize) -> TransformerConfig {
        TransformerConfig {
            dim: self.embed_dim,
            heads: self.heads,
            layers,
            ff_hidden: self.ff_hidden,
            dropout: self.dropout,
        }
    }

    pub fn tmae(&self) -> TmaeConfig {
        TmaeConfig {
            window: self.window_config(),
            encoder: self.transformer(self.enc_layers),
            regressor: self.transformer(self.regressor_layers),
            mask_ratio: self.mask_ratio,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            momentum: self.momentum,
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.pretrain_epochs,
        }
    }

    pub fn net(&self, ablation: Ablation) -> NetConfig {
        NetConfig {
            window: self.window_config(),
            encoder: self.transformer(self.enc_layers),
            tacn: TacnConfig {
                num_inputs: self.tcn_inputs,
                num_channels: self.tcn_channels.clone(),
                kernel: self.kernel,
                dropout: self.dropout,
                heads: self.heads,
            },
            reduction: self.reduction,
            head_hidden: self.head_hidden,
            ablation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            margin: self.margin,
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.finetune_epochs,
            swap_prob: self.swap_prob,
            warmup_epochs: self.warmup_epochs,
        }
    }

    /// Every field as `(key, value)`, for log headers.
    pub fn entries(&self) -> Vec<(String, String)> {
        let channels = self.tcn_channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        [
            ("embed_dim", self.embed_dim.to_string()),
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_hidden", self.ff_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("regressor_layers", self.regressor_layers.to_string()),
            ("window", self.window.to_string()),
            ("mask_ratio", self.mask_ratio.to_string()),
            ("vocab", self.vocab.to_string()),
            ("tau", self.tau.to_string()),
            ("momentum", self.momentum.to_string()),
            ("tcn_inputs", self.tcn_inputs.to_string()),
            ("tcn_channels", format!("[{channels}]")),
            ("kernel", self.kernel.to_string()),
            ("reduction", self.reduction.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("margin", self.margin.to_string()),
            ("swap_prob", self.swap_prob.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("allow_override", self.allow_override.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

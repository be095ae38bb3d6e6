use std::fs::File;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use touchseq::checkpoint::{self, write_atomic};
use touchseq::config::RunConfig;
use touchseq::dataio::{self, GestureSample};
use touchseq::touchseqnet::{self, Ablation};
use touchseq::{synthgen, tmae, Error, ParamStore, Result};

use crate::ConfigArgs;

/// Fraction of each user's fine-tuning samples kept for training; the rest
/// is the validation set used for model selection.
const TRAIN_WITHIN_FIT: f64 = 0.875;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    fn pair_seed_offset(self) -> u64 {
        match self {
            Split::Train | Split::All => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("TSQN_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| config_err("TSQN_SEED", format!("`{v}` is not an integer"))),
        Err(_) => Ok(fallback),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config_err("set", format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    cfg.seed = resolve_seed(args.seed, cfg.seed)?;
    Ok(cfg)
}

fn load_samples(path: &Path) -> Result<Vec<GestureSample>> {
    let samples = dataio::load_gesture_csv(path)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("{} holds no samples", path.display())));
    }
    Ok(samples)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Train, validation and test sample indices: each user's samples split
/// `train_fraction` / rest, then the first part split again for validation.
fn split_sets(ids: &[&str], train_fraction: f64, seed: u64) -> Result<[Vec<usize>; 3]> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(config_err("train_fraction", format!("{train_fraction} outside (0, 1)")));
    }
    let (fit, test) = dataio::split_by_sample(ids, train_fraction, seed);
    let sub: Vec<&str> = fit.iter().map(|&i| ids[i]).collect();
    let (tr, va) = dataio::split_by_sample(&sub, TRAIN_WITHIN_FIT, seed + 100);
    Ok([tr.iter().map(|&i| fit[i]).collect(), va.iter().map(|&i| fit[i]).collect(), test])
}

pub fn synth(users: usize, samples: usize, len: (usize, usize), separation: f64, seed: Option<u64>, out: &Path) -> Result<()> {
    if users < 2 {
        return Err(config_err("users", format!("pairing needs at least 2 users, got {users}")));
    }
    let seed = resolve_seed(seed, 0)?;
    let data = synthgen::gen_dataset(users, samples, len, separation, seed)?;
    let mut buf = Vec::new();
    dataio::write_gesture_csv(&mut buf, &data)?;
    write_atomic(out, &buf)?;
    println!("wrote {} samples from {users} users to {}", data.len(), out.display());
    Ok(())
}

pub fn pairs(data: &Path, n: usize, split: Split, train_fraction: f64, seed: Option<u64>, out: &Path) -> Result<()> {
    let seed = resolve_seed(seed, 0)?;
    let samples = load_samples(data)?;
    let keys: Vec<String> = samples.iter().map(GestureSample::key).collect();
    let ids: Vec<&str> = samples.iter().map(|s| s.user_id.as_str()).collect();
    let subset: Vec<usize> = match split {
        Split::All => (0..ids.len()).collect(),
        s => {
            let [tr, va, te] = split_sets(&ids, train_fraction, seed)?;
            match s {
                Split::Train => tr,
                Split::Val => va,
                _ => te,
            }
        }
    };
    let batch = dataio::make_pairs_within(&ids, &subset, seed + split.pair_seed_offset(), n)?;
    let mut buf = Vec::new();
    dataio::write_pair_manifest(&mut buf, &keys, &batch)?;
    write_atomic(out, &buf)?;
    println!("wrote {} pairs over {} samples to {}", batch.len(), subset.len(), out.display());
    Ok(())
}

pub fn pretrain(
    data: &Path,
    args: &ConfigArgs,
    mask_ratio: Option<f64>,
    epochs: Option<usize>,
    out: &Path,
    log: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(r) = mask_ratio {
        cfg.mask_ratio = r;
    }
    if let Some(e) = epochs {
        cfg.pretrain_epochs = e;
    }
    cfg.validate()?;
    let samples = dataio::process_all(&load_samples(data)?, cfg.window)?;
    let outcome = tmae::run_pretraining(&samples, &cfg.tmae(), cfg.seed)?;

    let mut text = Vec::new();
    tmae::write_loss_log(&mut text, &cfg.entries(), &outcome.log).map_err(|e| Error::Format(e.to_string()))?;
    checkpoint::save(out, &outcome.params)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| sibling(out, ".loss.csv"));
    write_atomic(&log_path, &text)?;
    let means = outcome.epoch_means();
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        println!("pretrained {} epochs: loss {first:.4} -> {last:.4}", means.len());
    }
    println!("checkpoint {}, loss log {}", out.display(), log_path.display());
    Ok(())
}

pub struct FinetuneArgs<'a> {
    pub data: &'a Path,
    pub pretrained: Option<&'a Path>,
    pub ablation: Ablation,
    pub cfg: &'a ConfigArgs,
    pub epochs: Option<usize>,
    pub n_pairs: usize,
    pub n_val: usize,
    pub train_fraction: f64,
    pub out: &'a Path,
    pub log: Option<&'a Path>,
}

pub fn finetune(a: FinetuneArgs<'_>) -> Result<()> {
    let mut cfg = load_config(a.cfg)?;
    if let Some(e) = a.epochs {
        cfg.finetune_epochs = e;
    }
    cfg.validate()?;
    let net = cfg.net(a.ablation);
    let pretrained = if a.ablation.uses_pretrained() {
        let path = a
            .pretrained
            .ok_or_else(|| config_err("pretrained", format!("required for --ablation {}", a.ablation)))?;
        checkpoint::load(path)?
    } else {
        ParamStore::new()
    };
    let model = touchseqnet::build_from_pretrained(&pretrained, &net, cfg.seed)?;

    let samples = dataio::process_all(&load_samples(a.data)?, cfg.window)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.user_id.as_str()).collect();
    let [tr, va, _] = split_sets(&ids, a.train_fraction, cfg.seed)?;
    let train_pairs = dataio::make_pairs_within(&ids, &tr, cfg.seed, a.n_pairs)?;
    let val_pairs = dataio::make_pairs_within(&ids, &va, cfg.seed + 1, a.n_val)?;
    let outcome = touchseqnet::train(model, &net, &cfg.train(), &samples, &train_pairs, &val_pairs, cfg.seed)?;

    let mut header = cfg.entries();
    header.push(("ablation".into(), a.ablation.to_string()));
    header.push(("best_epoch".into(), outcome.best_epoch.to_string()));
    let mut text = Vec::new();
    touchseqnet::write_metric_log(&mut text, &header, &outcome.log).map_err(|e| Error::Format(e.to_string()))?;
    checkpoint::save(a.out, &outcome.params)?;
    let log_path = a.log.map(Path::to_path_buf).unwrap_or_else(|| sibling(a.out, ".metrics.csv"));
    write_atomic(&log_path, &text)?;
    let b = &outcome.best;
    println!(
        "{}: best validation epoch {} accuracy {:.4} f1 {:.4} auc {:.4}",
        a.ablation, outcome.best_epoch, b.accuracy, b.f1, b.auc
    );
    println!("checkpoint {}, metric log {}", a.out.display(), log_path.display());
    Ok(())
}

/// Every tensor the model for `ablation` reads must be present with the
/// right shape.
fn check_compatible(model: &ParamStore, cfg: &RunConfig, ablation: Ablation) -> Result<()> {
    let expected = touchseqnet::build_random(&cfg.net(ablation), 0);
    for (name, t) in expected.iter() {
        let got = model
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("model lacks tensor `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, configuration expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

pub fn evaluate(model_path: &Path, data: &Path, pairs: &Path, args: &ConfigArgs, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    let model = checkpoint::load(model_path)?;
    let ablation = touchseqnet::infer_ablation(&model);
    check_compatible(&model, &cfg, ablation)?;
    let samples = dataio::process_all(&load_samples(data)?, cfg.window)?;
    let keys: Vec<String> = samples.iter().map(|s| s.key()).collect();
    let file = File::open(pairs).map_err(|e| Error::Io {
        path: pairs.to_path_buf(),
        source: e,
    })?;
    let batch = dataio::read_pair_manifest(file, &keys)?;
    let (rec, _) = touchseqnet::evaluate(&model, &cfg.net(ablation), &cfg.train(), &samples, &batch)?;

    println!("{:<28}{:>10}{:>10}{:>10}", "Method", "Accuracy", "F1", "AUC");
    println!(
        "{:<28}{:>10.4}{:>10.4}{:>10.4}",
        format!("TouchSeqNet ({ablation})"),
        rec.accuracy,
        rec.f1,
        rec.auc
    );
    if let Some(path) = out {
        let text = format!("accuracy,f1,auc\n{:.6},{:.6},{:.6}\n", rec.accuracy, rec.f1, rec.auc);
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

//! Pair-classification and codeword-ranking metrics.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub counts: Confusion,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Metric("empty prediction set".into()));
    }
    Ok(())
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    check_lengths(preds.len(), labels.len())?;
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    let c = confusion(preds, labels)?;
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(f1_from(&confusion(preds, labels)?))
}

fn f1_from(c: &Confusion) -> f64 {
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sweep tie groups in ascending score order
    let mut correct = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k] != 0).count();
        let neg = group.len() - pos;
        correct += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Ok(correct / (n_pos as f64 * n_neg as f64))
}

/// Accuracy and F1 at threshold 0.5, and AUC, for predicted probabilities.
pub fn evaluate_scores(probs: &[f64], labels: &[u8]) -> Result<EvalRecord> {
    let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let counts = confusion(&preds, labels)?;
    Ok(EvalRecord {
        accuracy: (counts.tp + counts.tn) as f64 / counts.total() as f64,
        f1: f1_from(&counts),
        auc: auc(probs, labels)?,
        counts,
    })
}

/// 1-based rank of `target` in `scores` (descending); ties rank the lower
/// index first, matching argmax tie-breaking.
pub fn rank_of(scores: &[f32], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

/// Fraction of ranks `<= k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    if ranks.is_empty() {
        return Ok(0.0);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Gain of a single relevant item at 1-based `rank` with cutoff 10.
pub fn ndcg_gain(rank: usize) -> f64 {
    if rank == 0 || rank > 10 {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

/// Mean NDCG@10 with one relevant item per position.
pub fn ndcg_at_10(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| ndcg_gain(r)).sum::<f64>() / ranks.len() as f64
}

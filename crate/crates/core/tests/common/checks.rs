//! Property checks shared by the invariant tests and the acceptance run.
//! Each returns a short summary on success and the first violation otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use touchseq::metrics;
use touchseq::nn::Binding;
use touchseq::tacn::{self, TacnConfig};
use touchseq::tmae::{self, TmaeConfig};
use touchseq::{Graph, ParamStore, Tensor};

use super::{auc_oracle, confusion_oracle};

pub type Check = std::result::Result<String, String>;

/// Random window validity masks: a valid prefix followed by padding.
fn random_validity(rng: &mut ChaCha8Rng) -> Vec<bool> {
    let d = rng.random_range(2..=40);
    let valid = rng.random_range(2..=d);
    (0..d).map(|i| i < valid).collect()
}

/// Visible and masked indices partition `0..d`, the masked count follows
/// the ratio, and padding windows are never masked.
pub fn mask_partition(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let valid = random_validity(&mut rng);
        let ratio = rng.random_range(0.05..0.95);
        let d = valid.len();
        let n_valid = valid.iter().filter(|&&v| v).count();
        let split = tmae::split_visible_masked(&valid, ratio, &mut rng).map_err(|e| e.to_string())?;
        let mut seen = vec![0u8; d];
        for &i in split.v_index.iter().chain(&split.m_index) {
            if i >= d {
                return Err(format!("trial {trial}: index {i} outside d = {d}"));
            }
            seen[i] += 1;
        }
        if split.d() != d || seen.iter().any(|&c| c != 1) {
            return Err(format!(
                "trial {trial}: d_v {} + d_m {} does not partition d = {d}",
                split.v_index.len(),
                split.m_index.len()
            ));
        }
        if split.m_index.len() != tmae::masked_count(d, n_valid, ratio) {
            return Err(format!("trial {trial}: {} masked, ratio {ratio}", split.m_index.len()));
        }
        if let Some(&i) = split.m_index.iter().find(|&&i| !valid[i]) {
            return Err(format!("trial {trial}: padding window {i} masked"));
        }
    }
    Ok(format!("{trials} splits partition d"))
}

/// Two-block, kernel-4 convolution stage whose ReLUs are all active, so any
/// input change that reaches an output shows up in it.
fn positive_tcn(seed: u64) -> (ParamStore, TacnConfig) {
    let cfg = TacnConfig {
        num_inputs: 4,
        num_channels: vec![4, 6],
        kernel: 4,
        dropout: 0.0,
        heads: 2,
    };
    let mut store = ParamStore::new();
    tacn::init_tacn(&mut store, "t", &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let t = store.get_mut(&name).unwrap();
        if name.ends_with(".v") || name.contains(".skip.") {
            t.data_mut().iter_mut().for_each(|x| *x = x.abs() + 0.05);
        } else if name.ends_with(".g") {
            t.data_mut().fill(1.0);
        } else if name.ends_with(".bias") {
            t.data_mut().fill(0.1);
        }
    }
    (store, cfg)
}

/// Perturbs every input step in turn and records which output rows move.
/// Rows before the perturbed step must be bit-identical, other sequences in
/// the batch untouched, and the last affected row must sit exactly
/// `receptive_field - 1` steps later.
pub fn causality(seed: u64) -> Check {
    let (store, cfg) = positive_tcn(seed);
    let lengths = [30usize, 24];
    let offsets = [0, lengths[0], lengths[0] + lengths[1]];
    let total = offsets[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = Tensor::new(&[total, 4], (0..total * 4).map(|_| rng.random_range(0.5f32..1.5)).collect()).unwrap();
    let run = |x: &Tensor| {
        let mut g = Graph::eval();
        let xv = g.constant(x.clone());
        let y = tacn::tcn_forward(&mut g, Binding::frozen(&store), "t", xv, &cfg, &offsets).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    let rf = cfg.receptive_field();
    let mut widest = 0;
    for t0 in 0..total {
        let seg = usize::from(t0 >= offsets[1]);
        let mut xp = x.clone();
        xp.data_mut()[t0 * 4..t0 * 4 + 4].iter_mut().for_each(|v| *v += 1.0);
        let out = run(&xp);
        for t in 0..total {
            let moved = out.row(t) != base.row(t);
            let same_seq = (offsets[seg]..offsets[seg + 1]).contains(&t);
            let expected = same_seq && t >= t0 && t - t0 < rf;
            if moved != expected {
                return Err(format!("input step {t0}: output row {t} moved = {moved}, expected {expected}"));
            }
            if moved {
                widest = widest.max(t - t0 + 1);
            }
        }
    }
    if widest != 19 || rf != 19 {
        return Err(format!("receptive field {widest} (formula {rf}), expected 19"));
    }
    Ok(format!("causal over {total} steps, receptive field {widest}"))
}

fn worst_row_deviation(t: &Tensor) -> f64 {
    let n = t.cols();
    t.data()
        .chunks(n)
        .map(|r| (r.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Softmax over random wide-range logits and segmented multi-head attention
/// both produce rows summing to one.
pub fn rows_sum_to_one(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let rows = rng.random_range(1..20);
        let cols = rng.random_range(1..200);
        let scale = [0.1f32, 1.0, 10.0, 80.0][trial % 4];
        let mut g = Graph::eval();
        let x = g.constant(Tensor::randn(&[rows, cols], scale, &mut rng));
        let s = g.softmax(x, 1).map_err(|e| e.to_string())?;
        worst = worst.max(worst_row_deviation(g.value(s)));

        let heads = rng.random_range(1..=4);
        let c = heads * rng.random_range(1..=6);
        let q_len = [rng.random_range(1..9), rng.random_range(1..9)];
        let k_len = [rng.random_range(1..12), rng.random_range(1..12)];
        let q = g.constant(Tensor::randn(&[q_len[0] + q_len[1], c], scale, &mut rng));
        let kv = Tensor::randn(&[k_len[0] + k_len[1], c], scale, &mut rng);
        let k = g.constant(kv.clone());
        let v = g.constant(kv);
        let a = g
            .attention(q, k, v, heads, &[0, q_len[0], q_len[0] + q_len[1]], &[0, k_len[0], k_len[0] + k_len[1]])
            .map_err(|e| e.to_string())?;
        let blocks = g.attention_weights(a).ok_or("attention node lost its weights")?;
        if blocks.len() != 2 * heads {
            return Err(format!("{} weight blocks for 2 sequences x {heads} heads", blocks.len()));
        }
        for b in &blocks {
            worst = worst.max(worst_row_deviation(b));
        }
    }
    if worst > 1e-6 {
        return Err(format!("row sum off by {worst:.2e}"));
    }
    Ok(format!("worst row-sum deviation {worst:.1e}"))
}

pub fn tiny_tmae() -> TmaeConfig {
    let t = touchseq::nn::TransformerConfig {
        dim: 8,
        heads: 2,
        layers: 2,
        ff_hidden: 16,
        dropout: 0.0,
    };
    TmaeConfig {
        window: touchseq::tokenizer::WindowConfig {
            window: 4,
            embed_dim: 8,
            channels: 5,
            vocab: 6,
        },
        encoder: t,
        regressor: t,
        ..TmaeConfig::default()
    }
}

fn encoder_distance(store: &ParamStore) -> f64 {
    let mut sq = 0.0;
    for (name, e) in store.with_prefix("encoder.") {
        let m = store.get(&format!("momentum.{}", &name["encoder.".len()..])).unwrap();
        sq += e
            .data()
            .iter()
            .zip(m.data())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>();
    }
    sq.sqrt()
}

/// With the primary encoder frozen, `n` momentum updates shrink the
/// encoder-to-momentum distance to exactly `mu^n` of its initial value.
pub fn ema_contraction(mu: f64, steps: usize, seed: u64) -> Check {
    let mut store = tmae::init_params(&tiny_tmae(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let names: Vec<String> = store.with_prefix("momentum.").map(|(k, _)| k.clone()).collect();
    for name in names {
        let t = store.get_mut(&name).unwrap();
        for v in t.data_mut() {
            *v += rng.random_range(-1.0f32..1.0);
        }
    }
    let frozen: Vec<(String, Tensor)> = store.with_prefix("encoder.").map(|(k, v)| (k.clone(), v.clone())).collect();
    let initial = encoder_distance(&store);
    for _ in 0..steps {
        tmae::momentum_update(&mut store, mu).map_err(|e| e.to_string())?;
    }
    if frozen.iter().any(|(k, v)| store.get(k) != Some(v)) {
        return Err("momentum update modified the primary encoder".into());
    }
    let want = mu.powi(steps as i32) * initial;
    let got = encoder_distance(&store);
    let rel = (got - want).abs() / want;
    if rel > 1e-6 {
        return Err(format!("mu {mu}, {steps} steps: distance {got} vs {want} (rel {rel:.2e})"));
    }
    Ok(format!("mu {mu} x {steps}: rel {rel:.1e}"))
}

/// Trapezoidal area under the empirical ROC curve; assumes no tied scores.
pub fn trapezoid_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let (mut tpr, mut fpr, mut area) = (0.0, 0.0, 0.0);
    for i in order {
        if labels[i] == 1 {
            tpr += 1.0 / p;
        } else {
            area += tpr / n;
            fpr += 1.0 / n;
        }
    }
    debug_assert!((fpr - 1.0f64).abs() < 1e-9);
    area
}

/// Scores on a coarse dyadic grid so that ties are frequent and the
/// monotone transforms below stay exact.
fn grid_scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(-16i32..=16)) / 8.0).collect()
}

/// Accuracy, F1 and AUC against enumeration oracles on random instances,
/// plus AUC invariance under `x³` and `2x + 1`.
pub fn metric_oracles(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..instances {
        let n = rng.random_range(2..=12);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let preds: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let (tp, tn, fp, fn_) = confusion_oracle(&preds, &labels);

        let acc = metrics::accuracy(&preds, &labels).map_err(|e| e.to_string())?;
        if acc != (tp + tn) as f64 / n as f64 {
            return Err(format!("instance {k}: accuracy {acc}"));
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1_want = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let f1 = metrics::f1(&preds, &labels).map_err(|e| e.to_string())?;
        if f1 != f1_want {
            return Err(format!("instance {k}: f1 {f1} vs {f1_want}"));
        }
        let c = metrics::confusion(&preds, &labels).map_err(|e| e.to_string())?;
        if (c.tp, c.tn, c.fp, c.fn_) != (tp, tn, fp, fn_) {
            return Err(format!("instance {k}: confusion {c:?}"));
        }

        let scores = grid_scores(n, &mut rng);
        let auc = metrics::auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = auc_oracle(&scores, &labels);
        if auc != want {
            return Err(format!("instance {k}: auc {auc} vs oracle {want}"));
        }
        for (name, f) in [("x^3", (|x: f64| x * x * x) as fn(f64) -> f64), ("2x+1", |x| 2.0 * x + 1.0)] {
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let t = metrics::auc(&moved, &labels).map_err(|e| e.to_string())?;
            if t != auc {
                return Err(format!("instance {k}: auc {t} after {name}, {auc} before"));
            }
        }

        let distinct: Vec<f64> = (0..n).map(|i| rng.random::<f64>() + i as f64 * 1e-3).collect();
        let auc = metrics::auc(&distinct, &labels).map_err(|e| e.to_string())?;
        let trap = trapezoid_auc(&distinct, &labels);
        if (auc - trap).abs() > 1e-9 {
            return Err(format!("instance {k}: auc {auc} vs trapezoid {trap}"));
        }
    }
    let hand = metrics::auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    if hand != 0.75 {
        return Err(format!("hand example auc {hand}, expected 0.75"));
    }
    Ok(format!("{instances} instances exact, hand AUC {hand}"))
}

//! Shared oracles for the integration tests.

#![allow(dead_code)]

pub mod checks;
pub mod gradcases;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use touchseq::{Graph, ParamStore, Result, Tensor, Var};

/// Relative error above which a gradient check fails.
pub const GRAD_TOL: f64 = 1e-3;

/// Largest fraction of probed coordinates that may be set aside as sitting
/// on a ReLU kink.
pub const MAX_KINK_FRACTION: f64 = 0.1;

/// Outcome of one finite-difference comparison.
#[derive(Debug)]
pub struct FdReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over every
    /// smooth probed coordinate of the case.
    pub rel: f64,
    /// Tensor contributing the largest squared error.
    pub worst_param: String,
    pub probes: usize,
    /// Coordinates within the smallest step of a ReLU kink.
    pub kinks: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.rel < GRAD_TOL && (self.kinks as f64) <= MAX_KINK_FRACTION * self.probes as f64
    }
}

/// A forward pass that reads every differentiable input by name from the store.
pub type Forward<'a> = dyn Fn(&mut Graph, &ParamStore) -> Result<Var> + 'a;

fn run(store: &ParamStore, train: bool, seed: u64, f: &Forward<'_>) -> Result<(Graph, Var)> {
    let mut g = Graph::with_mode(train, seed);
    let out = f(&mut g, store)?;
    Ok((g, out))
}

/// Fixed projection weights that turn a tensor output into a scalar.
fn probe_weights(numel: usize, seed: u64) -> Tensor {
    Tensor::randn(&[numel], 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe))
}

fn scalarize(out: &Tensor, w: &Tensor) -> f64 {
    out.data().iter().zip(w.data()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Non-scalar outputs are reduced to `sum(out * w)` with fixed random `w`.
/// At most `max_probes` coordinates of each named tensor are perturbed. The
/// step starts at `eps` and is halved, at most six times, until both
/// perturbed passes keep every ReLU input on the same side of zero as the
/// unperturbed pass; coordinates that never get there are counted as kinks
/// rather than compared.
pub fn fd_check(store: &ParamStore, train: bool, seed: u64, eps: f32, max_probes: usize, f: &Forward<'_>) -> FdReport {
    let (mut g, out) = run(store, train, seed, f).expect("forward pass");
    let numel = g.value(out).numel();
    let w = probe_weights(numel, seed);
    let base_signs = g.relu_input_signs();
    let flat = g.reshape(out, &[numel]).unwrap();
    let wv = g.constant(w.clone());
    let prod = g.mul(flat, wv).unwrap();
    let loss = g.sum_all(prod);
    let analytic = g.backward(loss).unwrap().params(&g);

    let eval = |s: &ParamStore| {
        let (g, out) = run(s, train, seed, f).expect("forward pass");
        (scalarize(g.value(out), &w), g.relu_input_signs() == base_signs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    let (mut probes, mut kinks) = (0, 0);
    let mut worst = (0.0f64, String::new());
    for (name, grad) in &analytic {
        let n = grad.numel();
        let picks: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_probes).into_vec()
        };
        let mut s = store.clone();
        let mut central = |i: usize, h: f32| {
            let x0 = store.get(name).unwrap().data()[i];
            let (xp, xm) = (x0 + h, x0 - h);
            s.get_mut(name).unwrap().data_mut()[i] = xp;
            let (lp, same_p) = eval(&s);
            s.get_mut(name).unwrap().data_mut()[i] = xm;
            let (lm, same_m) = eval(&s);
            s.get_mut(name).unwrap().data_mut()[i] = x0;
            ((lp - lm) / (f64::from(xp) - f64::from(xm)), same_p && same_m)
        };
        let mut tensor_err = 0.0;
        for &i in &picks {
            probes += 1;
            let mut h = eps;
            let mut found = None;
            for _ in 0..7 {
                let (numeric, same_region) = central(i, h);
                if same_region {
                    found = Some(numeric);
                    break;
                }
                h /= 2.0;
            }
            let Some(numeric) = found else {
                kinks += 1;
                continue;
            };
            let a = f64::from(grad.data()[i]);
            tensor_err += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        diff2 += tensor_err;
        if worst.1.is_empty() || tensor_err > worst.0 {
            worst = (tensor_err, name.clone());
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    FdReport {
        rel: if scale < 1e-7 { diff2.sqrt() } else { diff2.sqrt() / scale },
        worst_param: worst.1,
        probes,
        kinks,
    }
}

/// `n` values drawn from `N(0, std)` with magnitude at least `gap`, so that
/// kinks at zero stay out of reach of the finite-difference step.
pub fn away_from_zero(shape: &[usize], std: f32, gap: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::randn(shape, std, rng);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap - v.abs() } else { gap + v.abs() };
        }
    }
    t
}

/// Brute-force pairwise AUC: the fraction of (positive, negative) pairs
/// ordered correctly, ties counting one half.
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Counts by enumeration: `(tp, tn, fp, fn)`.
pub fn confusion_oracle(preds: &[u8], labels: &[u8]) -> (usize, usize, usize, usize) {
    let count = |p: u8, l: u8| preds.iter().zip(labels).filter(|&(&a, &b)| a == p && b == l).count();
    (count(1, 1), count(0, 0), count(1, 0), count(0, 1))
}

use std::collections::BTreeMap;

use super::ops::{log_softmax_row, stable_sigmoid};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Gradients of a scalar with respect to every gradient-requiring leaf.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Graph::leaf`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Named parameter gradients, in name order. Parameters the loss does not
    /// reach get a zero gradient.
    pub fn params(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = self
                    .wrt(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.shape(*v)));
                (name.clone(), g)
            })
            .collect()
    }
}

struct Acc<'a> {
    grads: Vec<Option<Vec<f32>>>,
    graph: &'a Graph,
}

impl Acc<'_> {
    /// Mutable gradient buffer of `v`, or `None` when `v` needs no gradient.
    fn buf(&mut self, v: Var) -> Option<&mut [f32]> {
        let node = &self.graph.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn add(&mut self, v: Var, f: impl FnOnce(&mut [f32])) {
        if let Some(b) = self.buf(v) {
            f(b);
        }
    }
}

impl Graph {
    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {shape:?}")));
        }
        let mut acc = Acc {
            grads: vec![None; self.nodes.len()],
            graph: self,
        };
        if self.nodes[loss.0].requires_grad {
            acc.grads[loss.0] = Some(vec![1.0]);
        }
        let mut leaves = vec![None; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = acc.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.backward_node(Var(i), &g, &mut acc);
        }
        Ok(Gradients {
            leaves,
            params: self.param_order.clone(),
        })
    }

    fn backward_node(&self, out: Var, g: &[f32], acc: &mut Acc<'_>) {
        let y = &self.nodes[out.0].value;
        match &self.nodes[out.0].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc.add(*a, |ga| gemm(m, n, k, g, false, tb.data(), true, ga, 1.0));
                acc.add(*b, |gb| gemm(k, m, n, ta.data(), true, g, false, gb, 1.0));
            }
            Op::Transpose(a) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                // y is [r × c]; input was [c × r]
                acc.add(*a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(a) | Op::AddScalar(a) => acc.add(*a, |ga| add_into(ga, g)),
            Op::Add(a, b) => {
                acc.add(*a, |ga| add_into(ga, g));
                acc.add(*b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc.add(*a, |ga| add_into(ga, g));
                acc.add(*b, |gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc.add(*a, |ga| {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += s * o;
                    }
                });
                acc.add(*b, |gb| {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += s * o;
                    }
                });
            }
            Op::AddRow(x, row) => {
                acc.add(*x, |gx| add_into(gx, g));
                let n = self.value(*row).numel();
                acc.add(*row, |gr| {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulRows { x, gate, row_map } => {
                let (tx, tg) = (self.value(*x), self.value(*gate));
                let c = tx.cols();
                acc.add(*x, |gx| {
                    for (r, &m) in row_map.iter().enumerate() {
                        let gate_row = tg.row(m);
                        for j in 0..c {
                            gx[r * c + j] += g[r * c + j] * gate_row[j];
                        }
                    }
                });
                acc.add(*gate, |gg| {
                    for (r, &m) in row_map.iter().enumerate() {
                        let xr = tx.row(r);
                        for j in 0..c {
                            gg[m * c + j] += g[r * c + j] * xr[j];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc.add(*a, |ga| ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * c)),
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc.add(*a, |ga| {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if x > 0.0 {
                            *d += s;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc.add(*a, |ga| {
                for ((d, &s), &p) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += s * p * (1.0 - p);
                }
            }),
            Op::Square(a) => {
                let ta = self.value(*a);
                acc.add(*a, |ga| {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(ta.data()) {
                        *d += 2.0 * s * x;
                    }
                });
            }
            Op::Sqrt(a) => acc.add(*a, |ga| {
                for ((d, &s), &r) in ga.iter_mut().zip(g).zip(y.data()) {
                    if r > 0.0 {
                        *d += s * 0.5 / r;
                    }
                }
            }),
            Op::Softmax(a) => {
                let n = y.cols().max(1);
                acc.add(*a, |ga| {
                    for ((gr, yr), dr) in g.chunks(n).zip(y.data().chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(&s, &p)| f64::from(s) * f64::from(p)).sum();
                        for ((d, &s), &p) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += (f64::from(p) * (f64::from(s) - dot)) as f32;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let n = tx.cols().max(1);
                let xhat = |r: usize, j: usize| (tx.data()[r * n + j] - mean[r]) * rstd[r];
                acc.add(*beta, |gb| {
                    for chunk in g.chunks(n) {
                        add_into(gb, chunk);
                    }
                });
                acc.add(*gamma, |gg| {
                    for r in 0..tx.rows() {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat(r, j);
                        }
                    }
                });
                acc.add(*x, |gx| {
                    for r in 0..tx.rows() {
                        let mut m1 = 0.0f64;
                        let mut m2 = 0.0f64;
                        for j in 0..n {
                            let gh = f64::from(g[r * n + j] * tg.data()[j]);
                            m1 += gh;
                            m2 += gh * f64::from(xhat(r, j));
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for j in 0..n {
                            let gh = f64::from(g[r * n + j] * tg.data()[j]);
                            let v = f64::from(rstd[r]) * (gh - m1 - f64::from(xhat(r, j)) * m2);
                            gx[r * n + j] += v as f32;
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc.add(*x, |gx| {
                for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *d += s * m;
                }
            }),
            Op::SumAll(a) => {
                let s = g[0];
                acc.add(*a, |ga| ga.iter_mut().for_each(|d| *d += s));
            }
            Op::SumAxis { x, axis } => {
                let tx = self.value(*x);
                let c = tx.cols();
                acc.add(*x, |gx| {
                    for (r, row) in gx.chunks_mut(c.max(1)).enumerate() {
                        for (j, d) in row.iter_mut().enumerate() {
                            *d += if *axis == 0 { g[j] } else { g[r] };
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => match (y.rank(), *axis) {
                (1, _) | (2, 0) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        acc.add(p, |gp| add_into(gp, &g[off..off + n]));
                        off += n;
                    }
                }
                _ => {
                    let (r, total) = (y.rows(), y.cols());
                    let mut col = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        acc.add(p, |gp| {
                            for i in 0..r {
                                add_into(&mut gp[i * c..(i + 1) * c], &g[i * total + col..i * total + col + c]);
                            }
                        });
                        col += c;
                    }
                }
            },
            Op::GatherRows { x, idx } => {
                let c = y.cols();
                acc.add(*x, |gx| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut gx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::GroupMean { x, groups } => {
                let c = y.cols();
                acc.add(*x, |gx| {
                    for (gi, group) in groups.iter().enumerate() {
                        let inv = 1.0 / group.len() as f32;
                        for &r in group {
                            for j in 0..c {
                                gx[r * c + j] += g[gi * c + j] * inv;
                            }
                        }
                    }
                });
            }
            Op::CausalIm2Col {
                x,
                k,
                dilation,
                offsets,
            } => {
                let c = self.value(*x).cols();
                let width = c * k;
                acc.add(*x, |gx| {
                    for w in offsets.windows(2) {
                        let (start, end) = (w[0], w[1]);
                        for t in start..end {
                            let src = &g[t * width..(t + 1) * width];
                            for j in 0..*k {
                                let lag = j * dilation;
                                if t < start + lag {
                                    continue;
                                }
                                let dst = &mut gx[(t - lag) * c..(t - lag + 1) * c];
                                for (ch, d) in dst.iter_mut().enumerate() {
                                    *d += src[ch * k + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::WeightNorm { v, g: gain } => {
                let (tv, tg) = (self.value(*v), self.value(*gain));
                let rows = tg.numel();
                let per = tv.numel() / rows.max(1);
                let mut dgain = vec![0.0f32; rows];
                let mut dv = vec![0.0f32; tv.numel()];
                for o in 0..rows {
                    let vr = &tv.data()[o * per..(o + 1) * per];
                    let gr = &g[o * per..(o + 1) * per];
                    let norm = vr.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let proj: f64 = vr.iter().zip(gr).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / norm;
                    dgain[o] = proj as f32;
                    let s = f64::from(tg.data()[o]) / norm;
                    for j in 0..per {
                        let u = f64::from(vr[j]) / norm;
                        dv[o * per + j] = (s * (f64::from(gr[j]) - u * proj)) as f32;
                    }
                }
                acc.add(*v, |gv| add_into(gv, &dv));
                acc.add(*gain, |gg| add_into(gg, &dgain));
            }
            Op::Attention(cache) => self.attention_backward(cache, g, acc),
            Op::CrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                let k = tl.cols();
                let scale = g[0] / targets.len() as f32;
                acc.add(*logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        let ls = log_softmax_row(tl.row(r));
                        for j in 0..k {
                            let p = ls[j].exp() as f32;
                            gl[r * k + j] += scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::SoftCrossEntropy { logits, target } => {
                let (tl, tt) = (self.value(*logits), self.value(*target));
                let k = tl.cols();
                let scale = f64::from(g[0]) / tl.rows().max(1) as f64;
                let lsm: Vec<Vec<f64>> = (0..tl.rows()).map(|r| log_softmax_row(tl.row(r))).collect();
                acc.add(*logits, |gl| {
                    for (r, ls) in lsm.iter().enumerate() {
                        let mass: f64 = tt.row(r).iter().map(|&t| f64::from(t)).sum();
                        for j in 0..k {
                            let v = ls[j].exp() * mass - f64::from(tt.row(r)[j]);
                            gl[r * k + j] += (scale * v) as f32;
                        }
                    }
                });
                acc.add(*target, |gt| {
                    for (r, ls) in lsm.iter().enumerate() {
                        for j in 0..k {
                            gt[r * k + j] -= (scale * ls[j]) as f32;
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, labels } => {
                let tl = self.value(*logits);
                let scale = g[0] / labels.len() as f32;
                // sigmoid(z) - y everywhere: the probability clamp only bounds
                // the reported loss, it does not stop gradient flow
                acc.add(*logits, |gl| {
                    for ((d, &z), &lab) in gl.iter_mut().zip(tl.data()).zip(labels) {
                        *d += scale * (stable_sigmoid(z) - lab);
                    }
                });
            }
            Op::StraightThrough { soft } => acc.add(*soft, |gs| add_into(gs, g)),
        }
    }

    fn attention_backward(&self, c: &super::AttentionCache, g: &[f32], acc: &mut Acc<'_>) {
        let (tq, tk, tv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let ch = tq.cols();
        let dh = ch / c.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut gq = vec![0.0f32; tq.numel()];
        let mut gk = vec![0.0f32; tk.numel()];
        let mut gv = vec![0.0f32; tv.numel()];
        let mut dp = Vec::new();
        let mut base = 0;
        for s in 0..c.q_offsets.len() - 1 {
            let (q0, q1) = (c.q_offsets[s], c.q_offsets[s + 1]);
            let (k0, k1) = (c.kv_offsets[s], c.kv_offsets[s + 1]);
            let nk = k1 - k0;
            for h in 0..c.heads {
                let lo = h * dh;
                for i in q0..q1 {
                    let p = &c.probs[base..base + nk];
                    base += nk;
                    let go = &g[i * ch + lo..i * ch + lo + dh];
                    dp.clear();
                    for (jj, j) in (k0..k1).enumerate() {
                        let vj = &tv.data()[j * ch + lo..j * ch + lo + dh];
                        dp.push(go.iter().zip(vj).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>());
                        let gvj = &mut gv[j * ch + lo..j * ch + lo + dh];
                        for (d, &o) in gvj.iter_mut().zip(go) {
                            *d += p[jj] * o;
                        }
                    }
                    let dot: f64 = dp.iter().zip(p).map(|(&a, &b)| a * f64::from(b)).sum();
                    let qi = &tq.data()[i * ch + lo..i * ch + lo + dh];
                    for (jj, j) in (k0..k1).enumerate() {
                        let ds = (f64::from(p[jj]) * (dp[jj] - dot)) as f32 * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &tk.data()[j * ch + lo..j * ch + lo + dh];
                        let gqi = &mut gq[i * ch + lo..i * ch + lo + dh];
                        for (d, &kk) in gqi.iter_mut().zip(kj) {
                            *d += ds * kk;
                        }
                        let gkj = &mut gk[j * ch + lo..j * ch + lo + dh];
                        for (d, &qq) in gkj.iter_mut().zip(qi) {
                            *d += ds * qq;
                        }
                    }
                }
            }
        }
        acc.add(c.q, |b| add_into(b, &gq));
        acc.add(c.k, |b| add_into(b, &gk));
        acc.add(c.v, |b| add_into(b, &gv));
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

use rand::Rng;

use super::{AttentionCache, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

pub(crate) const BCE_CLAMP: f32 = 1e-7;

fn softmax_row(x: &[f32], out: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = f64::from(v - max).exp();
        *o = e as f32;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o = (f64::from(*o) * inv) as f32;
    }
}

/// `log(softmax(x))` for one row, accumulated in `f64`.
pub(crate) fn log_softmax_row(x: &[f32]) -> Vec<f64> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = x
        .iter()
        .map(|&v| f64::from(v - max).exp())
        .sum::<f64>()
        .ln()
        + f64::from(max);
    x.iter().map(|&v| f64::from(v) - lse).collect()
}

pub(crate) fn stable_sigmoid(x: f32) -> f32 {
    let x = f64::from(x);
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s as f32
}

fn check_offsets(offsets: &[usize], rows: usize, what: &'static str) -> Result<()> {
    let ok = offsets.len() >= 2
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(what, offsets, &[rows]))
    }
}

impl Graph {
    fn elementwise(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        self.value(a).map(f)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose2()?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds a length-`N` vector to every row of `x` (last axis `N`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tx.cols();
        if tr.numel() != n || tr.rank() > 1 && tr.rows() != 1 {
            return Err(Error::shape("add_row", tx.shape(), tr.shape()));
        }
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (d, &b) in chunk.iter_mut().zip(tr.data()) {
                *d += b;
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(t, Op::AddRow(x, row)))
    }

    /// `out[r, c] = x[r, c] * gate[row_map[r], c]`.
    pub fn mul_rows(&mut self, x: Var, gate: Var, row_map: &[usize]) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gate));
        if tx.rank() != 2 || tg.rank() != 2 || tx.cols() != tg.cols() || row_map.len() != tx.rows() {
            return Err(Error::shape("mul_rows", tx.shape(), tg.shape()));
        }
        if row_map.iter().any(|&g| g >= tg.rows()) {
            return Err(Error::Contract("mul_rows: row map out of range".into()));
        }
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for (r, chunk) in data.chunks_mut(c.max(1)).enumerate() {
            for (d, &g) in chunk.iter_mut().zip(tg.row(row_map[r])) {
                *d *= g;
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(
            t,
            Op::MulRows {
                x,
                gate,
                row_map: row_map.to_vec(),
            },
        ))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let t = self.unary(a, |x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let t = self.unary(a, |x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, stable_sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    /// Elementwise square root; inputs must be positive where a gradient is needed.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0).sqrt());
        self.push(t, Op::Sqrt(a))
    }

    /// Softmax along `axis`. The last axis is native; axis 0 of a matrix
    /// goes through a transpose pair.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.value(x).rank().max(1);
        if axis >= rank {
            return Err(Error::Param(format!("softmax axis {axis} for rank {rank}")));
        }
        if axis == rank - 1 {
            return self.softmax_last(x);
        }
        if rank != 2 {
            return Err(Error::Param("softmax over a non-last axis needs a matrix".into()));
        }
        let xt = self.transpose(x)?;
        let s = self.softmax_last(xt)?;
        self.transpose(s)
    }

    fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let n = tx.cols();
        let mut out = vec![0.0; tx.numel()];
        if n > 0 {
            for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
                softmax_row(src, dst);
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Normalizes each slice along the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Param(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let tx = self.value(x);
        let n = tx.cols();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != n || tb.numel() != n {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut out = vec![0.0; tx.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            let mean = src.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            let var = src.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + f64::from(eps)).sqrt();
            for (j, d) in dst.iter_mut().enumerate() {
                let xhat = (f64::from(src[j]) - mean) * rstd;
                *d = (xhat * f64::from(tg.data()[j]) + f64::from(tb.data()[j])) as f32;
            }
            means.push(mean as f32);
            rstds.push(rstd as f32);
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
        ))
    }

    /// Inverted dropout; returns `x` itself in evaluation mode.
    pub fn dropout(&mut self, x: Var, p: f32) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).numel();
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let rng = self.rng();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| f64::from(v)).sum();
        self.push(Tensor::scalar(s as f32), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f32)
    }

    /// Sum of a matrix over `axis` (0: per column, 1: per row).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || axis > 1 {
            return Err(Error::shape("sum_axis", tx.shape(), &[axis]));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let t = if axis == 0 {
            let mut acc = vec![0.0f64; c];
            for row in tx.data().chunks(c.max(1)) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += f64::from(v);
                }
            }
            Tensor::from_parts(vec![c], acc.into_iter().map(|v| v as f32).collect())
        } else {
            let sums = (0..r)
                .map(|i| tx.row(i).iter().map(|&v| f64::from(v)).sum::<f64>() as f32)
                .collect();
            Tensor::from_parts(vec![r], sums)
        };
        Ok(self.push(t, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.value(x).shape().get(axis).copied().unwrap_or(1).max(1);
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f32))
    }

    /// Concatenates matrices along `axis`, or vectors end to end (`axis = 0`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = self.value(*first).rank();
        let t = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &p in parts {
                    let tp = self.value(p);
                    if tp.rank() != 1 {
                        return Err(Error::shape("concat", self.value(*first).shape(), tp.shape()));
                    }
                    data.extend_from_slice(tp.data());
                }
                Tensor::from_parts(vec![data.len()], data)
            }
            (2, 0) => {
                let c = self.value(*first).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let tp = self.value(p);
                    if tp.rank() != 2 || tp.cols() != c {
                        return Err(Error::shape("concat", self.value(*first).shape(), tp.shape()));
                    }
                    data.extend_from_slice(tp.data());
                    rows += tp.rows();
                }
                Tensor::from_parts(vec![rows, c], data)
            }
            (2, 1) => {
                let r = self.value(*first).rows();
                let mut cols = 0;
                for &p in parts {
                    let tp = self.value(p);
                    if tp.rank() != 2 || tp.rows() != r {
                        return Err(Error::shape("concat", self.value(*first).shape(), tp.shape()));
                    }
                    cols += tp.cols();
                }
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::from_parts(vec![r, cols], data)
            }
            _ => {
                return Err(Error::Param(format!("concat axis {axis} for rank {rank}")));
            }
        };
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Rows `idx` of a matrix; also serves as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::shape("gather_rows", tx.shape(), &[2]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= tx.rows()) {
            return Err(Error::Contract(format!("row {bad} out of range for {:?}", tx.shape())));
        }
        let t = tx.select_rows(idx);
        Ok(self.push(t, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// One output row per group: the mean of the listed rows of `x`.
    pub fn group_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::shape("group_mean", tx.shape(), &[2]));
        }
        let c = tx.cols();
        let mut data = Vec::with_capacity(groups.len() * c);
        for g in groups {
            if g.is_empty() {
                return Err(Error::Contract("group_mean over an empty group".into()));
            }
            let mut acc = vec![0.0f64; c];
            for &r in g {
                if r >= tx.rows() {
                    return Err(Error::Contract(format!("row {r} out of range")));
                }
                for (a, &v) in acc.iter_mut().zip(tx.row(r)) {
                    *a += f64::from(v);
                }
            }
            let inv = 1.0 / g.len() as f64;
            data.extend(acc.into_iter().map(|a| (a * inv) as f32));
        }
        let t = Tensor::from_parts(vec![groups.len(), c], data);
        Ok(self.push(
            t,
            Op::GroupMean {
                x,
                groups: groups.to_vec(),
            },
        ))
    }

    /// Lagged-copy matrix for causal convolution over time-major sequences.
    ///
    /// `x` is `[L × C]` with independent sequences delimited by `offsets`.
    /// Output row `t`, column `c * k + j` holds `x[t - j * dilation, c]`, or
    /// zero when that index falls before the start of the row's sequence.
    pub fn causal_im2col(&mut self, x: Var, k: usize, dilation: usize, offsets: &[usize]) -> Result<Var> {
        if k == 0 {
            return Err(Error::Param("kernel size must be >= 1".into()));
        }
        if dilation == 0 {
            return Err(Error::Param("dilation must be >= 1".into()));
        }
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::shape("causal_im2col", tx.shape(), &[2]));
        }
        check_offsets(offsets, tx.rows(), "causal_im2col")?;
        let c = tx.cols();
        let width = c * k;
        let mut out = vec![0.0; tx.rows() * width];
        for w in offsets.windows(2) {
            let (start, end) = (w[0], w[1]);
            for t in start..end {
                let dst = &mut out[t * width..(t + 1) * width];
                for j in 0..k {
                    let lag = j * dilation;
                    if t < start + lag {
                        continue;
                    }
                    let src = tx.row(t - lag);
                    for ch in 0..c {
                        dst[ch * k + j] = src[ch];
                    }
                }
            }
        }
        let t = Tensor::from_parts(vec![tx.rows(), width], out);
        Ok(self.push(
            t,
            Op::CausalIm2Col {
                x,
                k,
                dilation,
                offsets: offsets.to_vec(),
            },
        ))
    }

    /// `w[o, ..] = g[o] * v[o, ..] / ||v[o, ..]||`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (tv, tg) = (self.value(v), self.value(g));
        let rows = tv.shape().first().copied().unwrap_or(0);
        if tv.rank() < 2 || tg.numel() != rows {
            return Err(Error::shape("weight_norm", tv.shape(), tg.shape()));
        }
        let per = tv.numel() / rows.max(1);
        let mut out = vec![0.0; tv.numel()];
        for o in 0..rows {
            let src = &tv.data()[o * per..(o + 1) * per];
            let norm = src.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            let s = if norm > 0.0 { f64::from(tg.data()[o]) / norm } else { 0.0 };
            for (d, &x) in out[o * per..(o + 1) * per].iter_mut().zip(src) {
                *d = (f64::from(x) * s) as f32;
            }
        }
        let t = Tensor::from_parts(tv.shape().to_vec(), out);
        Ok(self.push(t, Op::WeightNorm { v, g }))
    }

    /// Scaled dot-product attention over projected queries, keys and values.
    ///
    /// `q` is `[Nq × C]`, `k` and `v` are `[Nk × C]`, `C = heads * d_head`.
    /// Rows are grouped into independent sequences by `q_offsets` and
    /// `kv_offsets` (same number of sequences); queries of sequence `s` only
    /// attend to keys of sequence `s`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        q_offsets: &[usize],
        kv_offsets: &[usize],
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let c = tq.cols();
        if tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2 || tk.cols() != c || tv.cols() != c || tk.rows() != tv.rows() {
            return Err(Error::shape("attention", tq.shape(), tk.shape()));
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::Param(format!("{c} channels not divisible by {heads} heads")));
        }
        check_offsets(q_offsets, tq.rows(), "attention queries")?;
        check_offsets(kv_offsets, tk.rows(), "attention keys")?;
        if q_offsets.len() != kv_offsets.len() {
            return Err(Error::shape("attention segments", q_offsets, kv_offsets));
        }
        let dh = c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0f32; tq.numel()];
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for s in 0..q_offsets.len() - 1 {
            let (q0, q1) = (q_offsets[s], q_offsets[s + 1]);
            let (k0, k1) = (kv_offsets[s], kv_offsets[s + 1]);
            if q1 > q0 && k1 == k0 {
                return Err(Error::Contract("attention with an empty key set".into()));
            }
            let nk = k1 - k0;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in q0..q1 {
                    let qi = &tq.row(i)[cols.clone()];
                    scores.clear();
                    for j in k0..k1 {
                        let kj = &tk.row(j)[cols.clone()];
                        let dot: f64 = qi.iter().zip(kj).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                        scores.push((dot * scale) as f32);
                    }
                    let base = probs.len();
                    probs.resize(base + nk, 0.0);
                    softmax_row(&scores, &mut probs[base..]);
                    let orow = &mut out[i * c..(i + 1) * c][cols.clone()];
                    for (jj, j) in (k0..k1).enumerate() {
                        let p = probs[base + jj];
                        for (o, &vv) in orow.iter_mut().zip(&tv.row(j)[cols.clone()]) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let t = Tensor::from_parts(tq.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::Attention(Box::new(AttentionCache {
                q,
                k,
                v,
                heads,
                q_offsets: q_offsets.to_vec(),
                kv_offsets: kv_offsets.to_vec(),
                probs,
            })),
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.rows() != targets.len() {
            return Err(Error::shape("cross_entropy", tl.shape(), &[targets.len()]));
        }
        if targets.is_empty() {
            return Err(Error::Contract("cross_entropy over zero rows".into()));
        }
        let k = tl.cols();
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Contract(format!("target {t} outside vocabulary of {k}")));
            }
            total -= log_softmax_row(tl.row(r))[t];
        }
        let loss = (total / targets.len() as f64) as f32;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean over rows of `-sum_j target[j] * log softmax(logits)[j]`.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (tl, tt) = (self.value(logits), self.value(target));
        if tl.shape() != tt.shape() || tl.rank() != 2 {
            return Err(Error::shape("soft_cross_entropy", tl.shape(), tt.shape()));
        }
        let rows = tl.rows().max(1);
        let mut total = 0.0f64;
        for r in 0..tl.rows() {
            let ls = log_softmax_row(tl.row(r));
            total -= ls.iter().zip(tt.row(r)).map(|(l, &t)| l * f64::from(t)).sum::<f64>();
        }
        let loss = (total / rows as f64) as f32;
        Ok(self.push(Tensor::scalar(loss), Op::SoftCrossEntropy { logits, target }))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// with the probability clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f32]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.numel() != labels.len() || labels.is_empty() {
            return Err(Error::shape("bce_with_logits", tl.shape(), &[labels.len()]));
        }
        let total: f64 = tl
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_term(z, y))
            .sum();
        let loss = (total / labels.len() as f64) as f32;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Forward value `hard`, gradient routed to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Result<Var> {
        if self.value(soft).shape() != hard.shape() {
            return Err(Error::shape("straight_through", self.value(soft).shape(), hard.shape()));
        }
        Ok(self.push(hard, Op::StraightThrough { soft }))
    }
}

/// Binary cross-entropy for one logit, matching the clamped-probability form.
pub(crate) fn bce_term(z: f32, y: f32) -> f64 {
    let (z, y) = (f64::from(z), f64::from(y));
    let lo = f64::from(BCE_CLAMP).ln();
    let hi = (1.0 - f64::from(BCE_CLAMP)).ln();
    // log sigmoid(z) and log(1 - sigmoid(z)) without overflow
    let log_p = (-softplus(-z)).clamp(lo, hi);
    let log_q = (-softplus(z)).clamp(lo, hi);
    -(y * log_p + (1.0 - y) * log_q)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward sweep is a single reverse scan. Parameters are pulled in by name
//! from a [`ParamStore`]; requesting the same name twice yields the same leaf,
//! so weight-tied branches accumulate into one gradient.

mod backward;
mod ops;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use backward::Gradients;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRows {
        x: Var,
        gate: Var,
        row_map: Vec<usize>,
    },
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Sqrt(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        rstd: Vec<f32>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    SumAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    GroupMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    CausalIm2Col {
        x: Var,
        k: usize,
        dilation: usize,
        offsets: Vec<usize>,
    },
    WeightNorm {
        v: Var,
        g: Var,
    },
    Attention(Box<AttentionCache>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    SoftCrossEntropy {
        logits: Var,
        target: Var,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f32>,
    },
    StraightThrough {
        soft: Var,
    },
}

pub(crate) struct AttentionCache {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub heads: usize,
    pub q_offsets: Vec<usize>,
    pub kv_offsets: Vec<usize>,
    /// Softmax weights, one `nq_s × nk_s` block per (segment, head), segment-major.
    pub probs: Vec<f32>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

impl Graph {
    /// A graph in training mode: dropout is active and draws from a stream seeded by `seed`.
    pub fn train(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    /// A graph in evaluation mode: dropout is the identity.
    pub fn eval() -> Self {
        Self::with_mode(false, 0)
    }

    pub fn with_mode(train: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Random stream shared by every stochastic op recorded on this graph.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A leaf that receives gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// The trainable leaf bound to `name`, created from `store` on first use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?
            .clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    /// A parameter read as a constant (no gradient), e.g. the momentum encoder.
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?
            .clone();
        Ok(self.constant(value))
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.param_order
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether `target` is reachable backwards from `from` through recorded ops.
    pub fn depends_on(&self, from: Var, target: Var) -> bool {
        let mut seen = vec![false; from.0 + 1];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == target {
                return true;
            }
            if v.0 < target.0 || seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            stack.extend(self.inputs(v));
        }
        false
    }

    /// Attention weights recorded by an [`Graph::attention`] node, per (segment, head).
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Tensor>> {
        let Op::Attention(cache) = &self.nodes[v.0].op else {
            return None;
        };
        let mut out = Vec::new();
        let mut base = 0;
        for s in 0..cache.q_offsets.len() - 1 {
            let nq = cache.q_offsets[s + 1] - cache.q_offsets[s];
            let nk = cache.kv_offsets[s + 1] - cache.kv_offsets[s];
            for _ in 0..cache.heads {
                let block = cache.probs[base..base + nq * nk].to_vec();
                out.push(Tensor::from_parts(vec![nq, nk], block));
                base += nq * nk;
            }
        }
        Some(out)
    }

    /// Whether each ReLU input is positive, over every ReLU node in
    /// recording order. Two passes of the same computation with equal
    /// patterns lie in one piecewise-linear region.
    pub fn relu_input_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, v: Var) -> Vec<Var> {
        self.inputs_of(&self.nodes[v.0].op)
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::MulRows { x, gate, .. } => vec![*x, *gate],
            Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Softmax(a)
            | Op::SumAll(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Dropout { x, .. }
            | Op::SumAxis { x, .. }
            | Op::GatherRows { x, .. }
            | Op::GroupMean { x, .. }
            | Op::CausalIm2Col { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::WeightNorm { v, g } => vec![*v, *g],
            Op::Attention(c) => vec![c.q, c.k, c.v],
            Op::CrossEntropy { logits, .. } | Op::BceWithLogits { logits, .. } => vec![*logits],
            Op::SoftCrossEntropy { logits, target } => vec![*logits, *target],
            Op::StraightThrough { soft } => vec![*soft],
        }
    }
}

//! Channel-attention recalibration.
//!
//! Each sequence is pooled over time into a channel descriptor, passed
//! through a bottleneck MLP (`C → C/r → C`) and squashed into per-channel
//! gates in `(0, 1)` that rescale every timestep.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{linear, Binding};
use crate::params::ParamStore;

pub const FINGERCA: &str = "fingerca";
pub const REDUCTION: usize = 4;

pub fn init_fingerca<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, channels: usize, reduction: usize, rng: &mut R) {
    let hidden = (channels / reduction.max(1)).max(1);
    store.init_linear(&format!("{prefix}.fc1"), channels, hidden, true, rng);
    store.init_linear(&format!("{prefix}.fc2"), hidden, channels, true, rng);
}

fn segment_rows(offsets: &[usize]) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let mut groups = Vec::with_capacity(offsets.len().saturating_sub(1));
    let mut row_map = Vec::new();
    for (s, w) in offsets.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::Contract(format!("sequence {s} is empty")));
        }
        groups.push((w[0]..w[1]).collect());
        row_map.extend(std::iter::repeat_n(s, w[1] - w[0]));
    }
    Ok((groups, row_map))
}

/// Time-mean of each sequence: `[L × C]` to `[n × C]`.
pub fn channel_descriptor(g: &mut Graph, x: Var, offsets: &[usize]) -> Result<Var> {
    let (groups, _) = segment_rows(offsets)?;
    g.group_mean(x, &groups)
}

/// Per-sequence gates `sigmoid(fc2(ReLU(fc1(z))))`, `[n × C]`.
pub fn channel_gates(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, offsets: &[usize]) -> Result<Var> {
    let z = channel_descriptor(g, x, offsets)?;
    let h = linear(g, p, &format!("{prefix}.fc1"), z)?;
    let h = g.relu(h);
    let a = linear(g, p, &format!("{prefix}.fc2"), h)?;
    Ok(g.sigmoid(a))
}

/// `X̃ = α ⊙ X`, with `α` broadcast over time within each sequence.
pub fn recalibrate(g: &mut Graph, p: Binding<'_>, prefix: &str, x: Var, offsets: &[usize]) -> Result<Var> {
    let (_, row_map) = segment_rows(offsets)?;
    let gates = channel_gates(g, p, prefix, x, offsets)?;
    g.mul_rows(x, gates, &row_map)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn fixed_gate_store(c: usize, logits: &[f32]) -> ParamStore {
        // fc1/fc2 weights zero: the gate is sigmoid(fc2.bias)
        let mut s = ParamStore::new();
        s.insert("ca.fc1.weight", Tensor::zeros(&[c, 1]));
        s.insert("ca.fc1.bias", Tensor::zeros(&[1]));
        s.insert("ca.fc2.weight", Tensor::zeros(&[1, c]));
        s.insert("ca.fc2.bias", Tensor::vector(logits));
        s
    }

    #[test]
    fn descriptor_is_column_mean() {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap());
        let z = channel_descriptor(&mut g, x, &[0, 2]).unwrap();
        assert_eq!(g.value(z).data(), &[1.5, 3.5]);
    }

    #[test]
    fn half_gate_scales_channel() {
        let store = fixed_gate_store(2, &[0.0, 40.0]);
        let mut g = Graph::eval();
        let x = g.constant(Tensor::from_rows(&[vec![2.0, 1.0], vec![4.0, 3.0]]).unwrap());
        let y = recalibrate(&mut g, Binding::frozen(&store), "ca", x, &[0, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gates_are_per_sequence() {
        let mut store = ParamStore::new();
        init_fingerca(&mut store, "ca", 8, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::randn(&[7, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let mut g = Graph::eval();
        let xv = g.constant(x.clone());
        let y = recalibrate(&mut g, Binding::frozen(&store), "ca", xv, &[0, 3, 7]).unwrap();
        let mut g2 = Graph::eval();
        let tail = g2.constant(x.select_rows(&[3, 4, 5, 6]));
        let y2 = recalibrate(&mut g2, Binding::frozen(&store), "ca", tail, &[0, 4]).unwrap();
        assert_eq!(&g.value(y).data()[3 * 8..], g2.value(y2).data());
    }
}

//! Randomized finite-difference cases covering every differentiable
//! operation and both end-to-end training paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use touchseq::dataio::{process_all, ProcessedSample, SamplePair};
use touchseq::nn::{self, offsets_from_lengths, Binding, TransformerConfig};
use touchseq::tacn::{self, TacnConfig};
use touchseq::tmae::{self, TmaeConfig};
use touchseq::tokenizer::{self, GumbelNoise, WindowConfig};
use touchseq::touchseqnet::{self, Ablation, NetConfig, TrainConfig};
use touchseq::{fingerca, synthgen, Graph, ParamStore, Result, Tensor, Var};

use super::{away_from_zero, fd_check, FdReport, Forward};

pub struct GradCase {
    pub name: String,
    pub store: ParamStore,
    pub train: bool,
    pub seed: u64,
    pub forward: Box<Forward<'static>>,
}

impl GradCase {
    pub fn check(&self) -> FdReport {
        fd_check(&self.store, self.train, self.seed, STEP, 24, &*self.forward)
    }
}

const SEEDS: [u64; 2] = [11, 29];
const STEP: f32 = 1e-2;


fn case(name: &str, seed: u64, store: ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Result<Var> + 'static) -> GradCase {
    GradCase {
        name: format!("{name}#{seed}"),
        store,
        train: false,
        seed,
        forward: Box::new(f),
    }
}

fn store_of(items: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in items {
        s.insert(*k, v.clone());
    }
    s
}

fn p(g: &mut Graph, s: &ParamStore, name: &str) -> Result<Var> {
    g.param(s, name)
}

fn elementwise_cases(out: &mut Vec<GradCase>, seed: u64, rng: &mut ChaCha8Rng) {
    let a = Tensor::randn(&[3, 4], 1.0, rng);
    let b = Tensor::randn(&[3, 4], 1.0, rng);
    let ab = store_of(&[("a", a.clone()), ("b", b.clone())]);
    out.push(case("add", seed, ab.clone(), |g, s| {
        let (a, b) = (p(g, s, "a")?, p(g, s, "b")?);
        g.add(a, b)
    }));
    out.push(case("sub", seed, ab.clone(), |g, s| {
        let (a, b) = (p(g, s, "a")?, p(g, s, "b")?);
        g.sub(a, b)
    }));
    out.push(case("mul", seed, ab.clone(), |g, s| {
        let (a, b) = (p(g, s, "a")?, p(g, s, "b")?);
        g.mul(a, b)
    }));
    out.push(case("mul_self", seed, ab.clone(), |g, s| {
        let a = p(g, s, "a")?;
        g.mul(a, a)
    }));
    out.push(case("scale", seed, ab.clone(), |g, s| {
        let a = p(g, s, "a")?;
        Ok(g.scale(a, -1.7))
    }));
    out.push(case("add_scalar", seed, ab.clone(), |g, s| {
        let a = p(g, s, "a")?;
        let y = g.add_scalar(a, 0.3);
        Ok(g.square(y))
    }));
    out.push(case("square", seed, ab.clone(), |g, s| {
        let a = p(g, s, "a")?;
        Ok(g.square(a))
    }));
    out.push(case("sigmoid", seed, ab.clone(), |g, s| {
        let a = p(g, s, "a")?;
        Ok(g.sigmoid(a))
    }));
    let kinked = store_of(&[("a", away_from_zero(&[3, 4], 1.0, 0.05, rng))]);
    out.push(case("relu", seed, kinked, |g, s| {
        let a = p(g, s, "a")?;
        Ok(g.relu(a))
    }));
    let pos = store_of(&[("a", a.map(|v| v.abs() + 0.5))]);
    out.push(case("sqrt", seed, pos, |g, s| {
        let a = p(g, s, "a")?;
        Ok(g.sqrt(a))
    }));
    let row = Tensor::randn(&[4], 1.0, rng);
    out.push(case("add_row", seed, store_of(&[("a", a.clone()), ("r", row)]), |g, s| {
        let (a, r) = (p(g, s, "a")?, p(g, s, "r")?);
        g.add_row(a, r)
    }));
    let gate = Tensor::randn(&[2, 4], 1.0, rng);
    out.push(case("mul_rows", seed, store_of(&[("a", a.clone()), ("gate", gate)]), |g, s| {
        let (a, gt) = (p(g, s, "a")?, p(g, s, "gate")?);
        g.mul_rows(a, gt, &[0, 1, 1])
    }));
}

fn shape_cases(out: &mut Vec<GradCase>, seed: u64, rng: &mut ChaCha8Rng) {
    let a = Tensor::randn(&[3, 4], 1.0, rng);
    let b = Tensor::randn(&[4, 5], 1.0, rng);
    let c = Tensor::randn(&[2, 4], 1.0, rng);
    out.push(case("matmul", seed, store_of(&[("a", a.clone()), ("b", b)]), |g, s| {
        let (a, b) = (p(g, s, "a")?, p(g, s, "b")?);
        g.matmul(a, b)
    }));
    out.push(case("matmul_gram", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        let at = g.transpose(a)?;
        g.matmul(a, at)
    }));
    out.push(case("transpose", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        g.transpose(a)
    }));
    out.push(case("reshape", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        let r = g.reshape(a, &[2, 6])?;
        Ok(g.square(r))
    }));
    let ac = store_of(&[("a", a.clone()), ("c", c)]);
    out.push(case("concat_rows", seed, ac.clone(), |g, s| {
        let (a, c) = (p(g, s, "a")?, p(g, s, "c")?);
        g.concat(&[a, c], 0)
    }));
    let d = Tensor::randn(&[3, 2], 1.0, rng);
    out.push(case("concat_cols", seed, store_of(&[("a", a.clone()), ("d", d)]), |g, s| {
        let (a, d) = (p(g, s, "a")?, p(g, s, "d")?);
        g.concat(&[d, a, d], 1)
    }));
    out.push(case("gather_rows", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        g.gather_rows(a, &[2, 0, 2, 1])
    }));
    out.push(case("group_mean", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        g.group_mean(a, &[vec![0, 2], vec![1], vec![0, 1, 2]])
    }));
    out.push(case("sum_all", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        let sq = g.square(a);
        Ok(g.sum_all(sq))
    }));
    out.push(case("mean_all", seed, store_of(&[("a", a.clone())]), |g, s| {
        let a = p(g, s, "a")?;
        let sq = g.square(a);
        Ok(g.mean_all(sq))
    }));
    for axis in [0, 1] {
        out.push(case(&format!("sum_axis{axis}"), seed, store_of(&[("a", a.clone())]), move |g, s| {
            let a = p(g, s, "a")?;
            g.sum_axis(a, axis)
        }));
        out.push(case(&format!("mean_axis{axis}"), seed, store_of(&[("a", a.clone())]), move |g, s| {
            let a = p(g, s, "a")?;
            g.mean_axis(a, axis)
        }));
        out.push(case(&format!("softmax_axis{axis}"), seed, store_of(&[("a", a.clone())]), move |g, s| {
            let a = p(g, s, "a")?;
            g.softmax(a, axis)
        }));
    }
}

fn layer_cases(out: &mut Vec<GradCase>, seed: u64, rng: &mut ChaCha8Rng) {
    let x = Tensor::randn(&[4, 6], 1.0, rng);
    let gamma = Tensor::randn(&[6], 1.0, rng);
    let beta = Tensor::randn(&[6], 1.0, rng);
    out.push(case(
        "layer_norm",
        seed,
        store_of(&[("x", x.clone()), ("gamma", gamma), ("beta", beta)]),
        |g, s| {
            let (x, ga, be) = (p(g, s, "x")?, p(g, s, "gamma")?, p(g, s, "beta")?);
            g.layer_norm(x, ga, be, 1e-5)
        },
    ));
    let mut dropout = case("dropout", seed, store_of(&[("x", x.clone())]), |g, s| {
        let x = p(g, s, "x")?;
        g.dropout(x, 0.3)
    });
    dropout.train = true;
    out.push(dropout);

    let seq = Tensor::randn(&[7, 3], 1.0, rng);
    out.push(case("causal_im2col", seed, store_of(&[("x", seq.clone())]), |g, s| {
        let x = p(g, s, "x")?;
        g.causal_im2col(x, 3, 2, &[0, 4, 7])
    }));
    let v = Tensor::randn(&[4, 3, 2], 1.0, rng);
    let gain = Tensor::randn(&[4], 1.0, rng);
    out.push(case("weight_norm", seed, store_of(&[("v", v.clone()), ("g", gain.clone())]), |g, s| {
        let (v, gn) = (p(g, s, "v")?, p(g, s, "g")?);
        g.weight_norm(v, gn)
    }));
    out.push(case(
        "causal_conv",
        seed,
        store_of(&[("x", seq.clone()), ("k", Tensor::randn(&[2, 3, 3], 1.0, rng))]),
        |g, s| {
            let (x, k) = (p(g, s, "x")?, p(g, s, "k")?);
            nn::causal_conv_time_major(g, x, k, 2, &[0, 4, 7])
        },
    ));
    out.push(case(
        "causal_conv_channel_first",
        seed,
        store_of(&[("x", Tensor::randn(&[3, 6], 1.0, rng)), ("k", Tensor::randn(&[2, 3, 2], 1.0, rng))]),
        |g, s| {
            let (x, k) = (p(g, s, "x")?, p(g, s, "k")?);
            nn::dilated_causal_conv1d(g, x, k, 3)
        },
    ));

    let q = Tensor::randn(&[5, 4], 1.0, rng);
    let k = Tensor::randn(&[6, 4], 1.0, rng);
    let vv = Tensor::randn(&[6, 4], 1.0, rng);
    out.push(case("attention", seed, store_of(&[("q", q), ("k", k), ("v", vv)]), |g, s| {
        let (q, k, v) = (p(g, s, "q")?, p(g, s, "k")?, p(g, s, "v")?);
        g.attention(q, k, v, 2, &[0, 2, 5], &[0, 4, 6])
    }));
    out.push(case("self_attention_shared_input", seed, store_of(&[("x", Tensor::randn(&[5, 4], 1.0, rng))]), |g, s| {
        let x = p(g, s, "x")?;
        g.attention(x, x, x, 1, &[0, 5], &[0, 5])
    }));
}

fn loss_cases(out: &mut Vec<GradCase>, seed: u64, rng: &mut ChaCha8Rng) {
    let logits = Tensor::randn(&[4, 5], 1.5, rng);
    let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    out.push(case("cross_entropy", seed, store_of(&[("z", logits.clone())]), move |g, s| {
        let z = p(g, s, "z")?;
        g.cross_entropy(z, &targets)
    }));
    let t = Tensor::randn(&[4, 5], 1.0, rng);
    out.push(case("soft_cross_entropy", seed, store_of(&[("z", logits.clone()), ("t", t)]), |g, s| {
        let (z, t) = (p(g, s, "z")?, p(g, s, "t")?);
        let t = g.softmax(t, 1)?;
        g.soft_cross_entropy(z, t)
    }));
    let labels: Vec<f32> = (0..6).map(|i| (i % 2) as f32).collect();
    out.push(case("bce_with_logits", seed, store_of(&[("z", Tensor::randn(&[6], 2.0, rng))]), move |g, s| {
        let z = p(g, s, "z")?;
        g.bce_with_logits(z, &labels)
    }));
    out.push(case("gumbel_soft_relaxation", seed, store_of(&[("z", logits)]), |g, s| {
        let z = p(g, s, "z")?;
        Ok(tokenizer::gumbel_softmax_sample(g, z, 0.7, false, GumbelNoise::Off)?.0)
    }));
    let labels: Vec<f32> = vec![1.0, 0.0, 0.0, 1.0];
    // negative pairs kept well inside or outside the margin
    let z1 = Tensor::randn(&[4, 3], 0.3, rng);
    let z2 = Tensor::randn(&[4, 3], 0.3, rng);
    out.push(case("contrastive", seed, store_of(&[("z1", z1), ("z2", z2)]), move |g, s| {
        let (a, b) = (p(g, s, "z1")?, p(g, s, "z2")?);
        touchseqnet::contrastive_loss(g, a, b, &labels, 2.0)
    }));
    let labels: Vec<f32> = vec![1.0, 0.0, 1.0];
    let z1 = Tensor::randn(&[3, 3], 0.3, rng);
    let z2 = Tensor::randn(&[3, 3], 0.3, rng);
    let zl = Tensor::randn(&[3], 1.0, rng);
    out.push(case("hybrid_loss", seed, store_of(&[("z1", z1), ("z2", z2), ("logit", zl)]), move |g, s| {
        let (a, b, z) = (p(g, s, "z1")?, p(g, s, "z2")?, p(g, s, "logit")?);
        let con = touchseqnet::contrastive_loss(g, a, b, &labels, 2.0)?;
        let ce = touchseqnet::ce_loss(g, z, &labels)?;
        touchseqnet::total_loss(g, con, ce, 0.5, 1.0)
    }));
}

fn tiny_transformer(layers: usize, dropout: f32) -> TransformerConfig {
    TransformerConfig {
        dim: 8,
        heads: 2,
        layers,
        ff_hidden: 12,
        dropout,
    }
}

fn module_cases(out: &mut Vec<GradCase>, seed: u64, rng: &mut ChaCha8Rng) {
    let mut s = ParamStore::new();
    s.init_linear("lin", 5, 3, true, rng);
    general_position(&mut s, rng);
    s.insert("x", Tensor::randn(&[4, 5], 1.0, rng));
    out.push(case("linear", seed, s, |g, s| {
        let x = p(g, s, "x")?;
        nn::linear(g, Binding::trainable(s), "lin", x)
    }));

    let mut s = ParamStore::new();
    nn::init_attention(&mut s, "mha", 8, rng);
    s.insert("x", Tensor::randn(&[5, 8], 1.0, rng));
    s.insert("c", Tensor::randn(&[4, 8], 1.0, rng));
    out.push(case("multi_head_cross_attention", seed, s, |g, s| {
        let (x, c) = (p(g, s, "x")?, p(g, s, "c")?);
        Ok(nn::multi_head_attention(g, Binding::trainable(s), "mha", x, c, 2, &[0, 3, 5], &[0, 1, 4])?.0)
    }));

    let cfg = tiny_transformer(2, 0.1);
    let mut s = ParamStore::new();
    nn::init_encoder(&mut s, "enc", &cfg, rng);
    general_position(&mut s, rng);
    s.insert("x", Tensor::randn(&[6, 8], 1.0, rng));
    let mut enc = case("transformer_encoder", seed, s, move |g, s| {
        let x = p(g, s, "x")?;
        nn::encoder_forward(g, Binding::trainable(s), "enc", x, &[0, 4, 6], &cfg)
    });
    enc.train = true;
    out.push(enc);

    let cfg = tiny_transformer(2, 0.0);
    let mut s = ParamStore::new();
    nn::init_cross_decoder(&mut s, "dec", &cfg, rng);
    general_position(&mut s, rng);
    s.insert("q", Tensor::randn(&[3, 8], 1.0, rng));
    s.insert("ctx", Tensor::randn(&[5, 8], 1.0, rng));
    let dec = case("cross_decoder", seed, s, move |g, s| {
        let (q, c) = (p(g, s, "q")?, p(g, s, "ctx")?);
        Ok(nn::cross_decoder_forward(g, Binding::trainable(s), "dec", q, c, &[0, 1, 3], &[0, 2, 5], &cfg)?.0)
    });
    out.push(dec);

    let mut s = ParamStore::new();
    tacn::init_residual_block(&mut s, "blk", 3, 4, 3, rng);
    boost_conv_kernels(&mut s);
    general_position(&mut s, rng);
    s.insert("x", Tensor::randn(&[9, 3], 1.0, rng));
    let blk = case("residual_block", seed, s, |g, s| {
        let x = p(g, s, "x")?;
        tacn::residual_block(g, Binding::trainable(s), "blk", x, 2, 0.0, &[0, 5, 9])
    });
    out.push(blk);

    let tcfg = TacnConfig {
        num_inputs: 4,
        num_channels: vec![4, 6],
        kernel: 3,
        dropout: 0.1,
        heads: 2,
    };
    let mut s = ParamStore::new();
    tacn::init_tacn(&mut s, "tacn", &tcfg, rng);
    boost_conv_kernels(&mut s);
    general_position(&mut s, rng);
    s.insert("x", Tensor::randn(&[10, 4], 1.0, rng));
    let mut t = case("tacn", seed, s, move |g, s| {
        let x = p(g, s, "x")?;
        tacn::tacn_forward(g, Binding::trainable(s), "tacn", x, &tcfg, &[0, 6, 10])
    });
    t.train = true;
    out.push(t);

    let mut s = ParamStore::new();
    fingerca::init_fingerca(&mut s, "ca", 8, 4, rng);
    general_position(&mut s, rng);
    s.insert("x", Tensor::randn(&[7, 8], 1.0, rng));
    out.push(case("fingerca", seed, s, |g, s| {
        let x = p(g, s, "x")?;
        fingerca::recalibrate(g, Binding::trainable(s), "ca", x, &[0, 3, 7])
    }));

    let wcfg = WindowConfig {
        window: 4,
        embed_dim: 6,
        channels: 5,
        vocab: 7,
    };
    let mut s = ParamStore::new();
    tokenizer::init_projection(&mut s, &wcfg, rng);
    tokenizer::init_codebook(&mut s, &wcfg, rng);
    s.insert("x", Tensor::randn(&[12, 5], 1.0, rng));
    out.push(case("tokenizer", seed, s, move |g, s| {
        let x = p(g, s, "x")?;
        let z = tokenizer::window_project(g, Binding::trainable(s), x, &wcfg)?;
        tokenizer::token_logits(g, Binding::trainable(s), z)
    }));
}

/// Moves layer-norm gains and shifts and every bias away from their 1/0
/// initialization. Zero biases put ReLU inputs exactly on the kink whenever
/// all incoming activations are zero, where central differences see half a
/// slope.
fn general_position(s: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = s
        .names()
        .filter(|n| n.ends_with(".gamma") || n.ends_with(".beta") || n.ends_with(".bias"))
        .cloned()
        .collect();
    for n in names {
        for v in s.get_mut(&n).unwrap().data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

/// Conv kernels near unit scale: the default `N(0, 0.01)` init leaves the
/// block output dominated by the skip path, and a step of `eps` in `v` would
/// be a large relative change.
fn boost_conv_kernels(s: &mut ParamStore) {
    let names: Vec<String> = s
        .names()
        .filter(|n| n.ends_with(".g") || n.ends_with(".v"))
        .cloned()
        .collect();
    for n in names {
        for v in s.get_mut(&n).unwrap().data_mut() {
            *v *= 30.0;
        }
    }
}

fn tiny_samples(seed: u64, window: usize) -> Vec<ProcessedSample> {
    let data = synthgen::gen_dataset(2, 2, (9, 15), 1.0, seed).unwrap();
    process_all(&data, window).unwrap()
}

/// Tokenizer, encoder, regressor and both pretraining losses, with the
/// relaxed (non-straight-through) codeword targets and a fixed mask split.
fn pretrain_path(out: &mut Vec<GradCase>, seed: u64) {
    let cfg = TmaeConfig {
        window: WindowConfig {
            window: 4,
            embed_dim: 8,
            channels: 5,
            vocab: 6,
        },
        encoder: tiny_transformer(1, 0.0),
        regressor: tiny_transformer(1, 0.0),
        ..TmaeConfig::default()
    };
    let mut store = tmae::init_params(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    general_position(&mut store, &mut rng);
    // momentum weights differ from the primary encoder as they would mid-training
    let names: Vec<String> = store.names().filter(|n| n.starts_with("momentum.")).cloned().collect();
    for n in names {
        for v in store.get_mut(&n).unwrap().data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = Tensor::randn(&[20, 5], 1.0, &mut rng);
    let mut pe = tmae::positional_encoding(3, 8).into_data();
    pe.extend(tmae::positional_encoding(2, 8).into_data());
    let pe_t = Tensor::new(&[5, 8], pe).unwrap();
    let (v_rows, m_rows) = ([0usize, 2, 3], [1usize, 4]);
    // the momentum branch input is detached, so it stays fixed under perturbation
    let z_m = {
        let mut g = Graph::eval();
        let xv = g.constant(x.clone());
        let z = tokenizer::window_project(&mut g, Binding::frozen(&store), xv, &cfg.window).unwrap();
        let pe = g.constant(pe_t.clone());
        let zp = g.add(z, pe).unwrap();
        g.value(zp).select_rows(&m_rows)
    };
    let c = case("pretrain_path", seed, store, move |g, s| {
        let b = Binding::trainable(s);
        let xv = g.constant(x.clone());
        let z = tokenizer::window_project(g, b, xv, &cfg.window)?;
        let logits = tokenizer::codebook_logits(g, b, z)?;
        let (soft, _) = tokenizer::gumbel_softmax_sample(g, logits, cfg.tau, false, GumbelNoise::Off)?;
        // two sequences of 3 and 2 windows
        let pe = g.constant(pe_t.clone());
        let zp = g.add(z, pe)?;
        let z_v = g.gather_rows(zp, &v_rows)?;
        let v_off = offsets_from_lengths(&[2, 1]);
        let m_off = offsets_from_lengths(&[1, 1]);
        let r_v = tmae::encode_visible(g, s, z_v, &v_off, &cfg.encoder)?;
        let r_m = tmae::momentum_encode(g, s, &z_m, &m_off, &cfg.encoder)?;
        let e_mask = tmae::mask_queries(g, s, &pe_t.select_rows(&m_rows))?;
        let (r_hat, _) = tmae::regress_masked(g, s, r_v, e_mask, &v_off, &m_off, &cfg.regressor)?;
        let pred = tmae::predict_codewords(g, s, r_hat)?;
        let l_align = tmae::alignment_loss(g, r_m, r_hat)?;
        let target = g.gather_rows(soft, &m_rows)?;
        let l_pred = g.soft_cross_entropy(pred, target)?;
        Ok(tmae::pretrain_loss(g, l_align, l_pred, 1.0, 1.0, pred, &[0, 0])?.0)
    });
    out.push(c);
}

/// Projection, encoder, TACN, channel attention, pooling, pair head and the
/// hybrid loss, through the production pair-batch forward pass.
fn finetune_path(out: &mut Vec<GradCase>, seed: u64, ablation: Ablation) {
    let net = NetConfig {
        window: WindowConfig {
            window: 4,
            embed_dim: 8,
            channels: 5,
            vocab: 6,
        },
        encoder: tiny_transformer(1, 0.1),
        tacn: TacnConfig {
            num_inputs: 8,
            num_channels: vec![8, 6],
            kernel: 3,
            dropout: 0.1,
            heads: 2,
        },
        reduction: 2,
        head_hidden: 5,
        ablation,
    };
    let mut store = touchseqnet::build_random(&net, seed);
    boost_conv_kernels(&mut store);
    general_position(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    let samples = tiny_samples(seed, 4);
    let pairs = vec![
        SamplePair { a: 0, b: 1, y: 1 },
        SamplePair { a: 0, b: 2, y: 0 },
        SamplePair { a: 3, b: 1, y: 0 },
        SamplePair { a: 2, b: 3, y: 1 },
    ];
    let train = TrainConfig {
        margin: 3.0,
        ..TrainConfig::default()
    };
    let mut c = case(&format!("finetune_path_{ablation}"), seed, store, move |g, s| {
        Ok(touchseqnet::forward_pairs(g, s, &net, &train, &samples, &pairs)?.loss)
    });
    c.train = true;
    out.push(c);
}

/// Every case, in a fixed order.
pub fn all_cases() -> Vec<GradCase> {
    let mut out = Vec::new();
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        elementwise_cases(&mut out, seed, &mut rng);
        shape_cases(&mut out, seed, &mut rng);
        layer_cases(&mut out, seed, &mut rng);
        loss_cases(&mut out, seed, &mut rng);
        module_cases(&mut out, seed, &mut rng);
        pretrain_path(&mut out, seed);
        finetune_path(&mut out, seed, Ablation::Full);
    }
    finetune_path(&mut out, 3, Ablation::NoAttention);
    finetune_path(&mut out, 3, Ablation::PretrainedOnly);
    out
}

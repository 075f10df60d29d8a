//! Pre-norm encoder-decoder transformer built on the autograd tape.
//!
//! One embedding matrix is shared by the encoder input, the decoder input and
//! the output projection. Positions use fixed sinusoids.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use super::graph::{AttnMask, Graph, NodeId};
use super::params::ParamStore;
use super::tensor::Mat;

/// Number of sentiment classes served by the classification head.
pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LnIdx {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayer {
    ln1: LnIdx,
    attn: AttnIdx,
    ln2: LnIdx,
    ffn: FfnIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayer {
    ln1: LnIdx,
    self_attn: AttnIdx,
    ln2: LnIdx,
    cross: AttnIdx,
    ln3: LnIdx,
    ffn: FfnIdx,
}

/// Parameter indices for every weight of a configuration.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub out_bias: usize,
    enc: Vec<EncLayer>,
    enc_ln: LnIdx,
    dec: Vec<DecLayer>,
    dec_ln: LnIdx,
    mlm_w: usize,
    mlm_b: usize,
    mlm_ln: LnIdx,
    pub mlm_bias: usize,
    pub cls_w: usize,
    pub cls_b: usize,
}

struct SpecBuilder {
    specs: Vec<Spec>,
}

impl SpecBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(Spec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx { g: self.add(format!("{prefix}.g"), 1, d, Init::Ones), b: self.add(format!("{prefix}.b"), 1, d, Init::Zeros) }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let mut w = |n: &str| self.add(format!("{prefix}.w{n}"), d, d, Init::Xavier);
        let (wq, wk, wv, wo) = (w("q"), w("k"), w("v"), w("o"));
        let mut b = |n: &str| self.add(format!("{prefix}.b{n}"), 1, d, Init::Zeros);
        let (bq, bk, bv, bo) = (b("q"), b("k"), b("v"), b("o"));
        AttnIdx { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), d, ff, Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), 1, ff, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), ff, d, Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_specs(cfg: &ModelConfig) -> (Layout, Vec<Spec>) {
    let d = cfg.d_model;
    let mut b = SpecBuilder { specs: Vec::new() };
    let embed = b.add("embed".into(), cfg.vocab_size, d, Init::Embedding);
    let out_bias = b.add("out.bias".into(), 1, cfg.vocab_size, Init::Zeros);
    let enc = (0..cfg.enc_layers)
        .map(|i| {
            let p = format!("enc.{i}");
            EncLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                attn: b.attn(&format!("{p}.self"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff),
            }
        })
        .collect();
    let enc_ln = b.ln("enc.ln", d);
    let dec = (0..cfg.dec_layers)
        .map(|i| {
            let p = format!("dec.{i}");
            DecLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                self_attn: b.attn(&format!("{p}.self"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                cross: b.attn(&format!("{p}.cross"), d),
                ln3: b.ln(&format!("{p}.ln3"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff),
            }
        })
        .collect();
    let dec_ln = b.ln("dec.ln", d);
    let mlm_w = b.add("mlm.w".into(), d, d, Init::Xavier);
    let mlm_b = b.add("mlm.b".into(), 1, d, Init::Zeros);
    let mlm_ln = b.ln("mlm.ln", d);
    let mlm_bias = b.add("mlm.bias".into(), 1, cfg.vocab_size, Init::Zeros);
    let cls_w = b.add("cls.w".into(), d, NUM_CLASSES, Init::Xavier);
    let cls_b = b.add("cls.b".into(), 1, NUM_CLASSES, Init::Zeros);
    let layout = Layout { embed, out_bias, enc, enc_ln, dec, dec_ln, mlm_w, mlm_b, mlm_ln, mlm_bias, cls_w, cls_b };
    (layout, b.specs)
}

pub(crate) fn layout_for(cfg: &ModelConfig) -> Layout {
    build_specs(cfg).0
}

/// Expected `(name, rows, cols)` of every parameter, in storage order.
pub(crate) fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    build_specs(cfg).1.into_iter().map(|s| (s.name, s.rows, s.cols)).collect()
}

pub(crate) fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let (_, specs) = build_specs(cfg);
    let mut store = ParamStore::new();
    let emb_std = (cfg.d_model as f64).powf(-0.5);
    for s in specs {
        let n = s.rows * s.cols;
        let data: Vec<f64> = match s.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Embedding => {
                let dist = Normal::new(0.0, emb_std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Xavier => {
                let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        store.push(s.name, Mat::from_vec(s.rows, s.cols, data));
    }
    store
}

/// Inverted dropout with its own seeded stream.
pub struct Dropper {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropper {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropper { rate, rng }
    }

    fn apply(&mut self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = g.value(x).len();
        let mask = (0..n).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        g.dropout(x, mask)
    }
}

fn maybe_drop(g: &mut Graph<'_>, x: NodeId, drop: &mut Option<&mut Dropper>) -> NodeId {
    match drop {
        Some(d) => d.apply(g, x),
        None => x,
    }
}

pub fn sinusoid(len: usize, d: usize) -> Mat {
    let mut pe = Mat::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// Forward-pass builder for one configuration.
pub(crate) struct Net<'m> {
    pub cfg: &'m ModelConfig,
    pub layout: &'m Layout,
}

impl<'m> Net<'m> {
    fn embed(&self, g: &mut Graph<'_>, ids: &[u32], drop: &mut Option<&mut Dropper>) -> NodeId {
        let table = g.param(self.layout.embed);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = g.gather(table, &idx);
        let x = g.scale(x, (self.cfg.d_model as f64).sqrt());
        let pe = g.constant(sinusoid(ids.len(), self.cfg.d_model));
        let x = g.add(x, pe);
        maybe_drop(g, x, drop)
    }

    fn ln(&self, g: &mut Graph<'_>, x: NodeId, idx: LnIdx) -> NodeId {
        let (ga, be) = (g.param(idx.g), g.param(idx.b));
        g.layer_norm(x, ga, be)
    }

    fn linear(g: &mut Graph<'_>, x: NodeId, w: usize, b: usize) -> NodeId {
        let (w, b) = (g.param(w), g.param(b));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn attention(&self, g: &mut Graph<'_>, q_in: NodeId, kv_in: NodeId, idx: &AttnIdx, mask: &AttnMask) -> NodeId {
        let q = Self::linear(g, q_in, idx.wq, idx.bq);
        let k = Self::linear(g, kv_in, idx.wk, idx.bk);
        let v = Self::linear(g, kv_in, idx.wv, idx.bv);
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.cfg.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let scores = g.matmul_bt(qh, kh);
                let scores = g.scale(scores, scale);
                let probs = g.softmax(scores, Some(mask));
                g.matmul(probs, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        Self::linear(g, cat, idx.wo, idx.bo)
    }

    fn ffn(&self, g: &mut Graph<'_>, x: NodeId, idx: &FfnIdx) -> NodeId {
        let h = Self::linear(g, x, idx.w1, idx.b1);
        let h = g.gelu(h);
        Self::linear(g, h, idx.w2, idx.b2)
    }

    /// Encoder states (`len × d_model`). `pad[j]` marks padding keys.
    pub fn encode(&self, g: &mut Graph<'_>, ids: &[u32], pad: &[bool], mut drop: Option<&mut Dropper>) -> NodeId {
        let n = ids.len();
        let mask = AttnMask::new(n, n, |_, j| !pad[j]);
        let mut x = self.embed(g, ids, &mut drop);
        for layer in &self.layout.enc {
            let h = self.ln(g, x, layer.ln1);
            let a = self.attention(g, h, h, &layer.attn, &mask);
            let a = maybe_drop(g, a, &mut drop);
            x = g.add(x, a);
            let h = self.ln(g, x, layer.ln2);
            let f = self.ffn(g, h, &layer.ffn);
            let f = maybe_drop(g, f, &mut drop);
            x = g.add(x, f);
        }
        self.ln(g, x, self.layout.enc_ln)
    }

    /// Decoder states (`tgt_len × d_model`) under a causal mask.
    pub fn decode(
        &self,
        g: &mut Graph<'_>,
        memory: NodeId,
        mem_pad: &[bool],
        tgt: &[u32],
        tgt_pad: &[bool],
        mut drop: Option<&mut Dropper>,
    ) -> NodeId {
        let t = tgt.len();
        let self_mask = AttnMask::new(t, t, |i, j| j <= i && !tgt_pad[j]);
        let cross_mask = AttnMask::new(t, mem_pad.len(), |_, j| !mem_pad[j]);
        let mut x = self.embed(g, tgt, &mut drop);
        for layer in &self.layout.dec {
            let h = self.ln(g, x, layer.ln1);
            let a = self.attention(g, h, h, &layer.self_attn, &self_mask);
            let a = maybe_drop(g, a, &mut drop);
            x = g.add(x, a);
            let h = self.ln(g, x, layer.ln2);
            let c = self.attention(g, h, memory, &layer.cross, &cross_mask);
            let c = maybe_drop(g, c, &mut drop);
            x = g.add(x, c);
            let h = self.ln(g, x, layer.ln3);
            let f = self.ffn(g, h, &layer.ffn);
            let f = maybe_drop(g, f, &mut drop);
            x = g.add(x, f);
        }
        self.ln(g, x, self.layout.dec_ln)
    }

    /// Tied output projection onto the vocabulary.
    pub fn lm_logits(&self, g: &mut Graph<'_>, hidden: NodeId) -> NodeId {
        let e = g.param(self.layout.embed);
        let logits = g.matmul_bt(hidden, e);
        let b = g.param(self.layout.out_bias);
        g.add_row(logits, b)
    }

    /// Masked-LM head: dense + GELU + layer norm, then the tied projection.
    pub fn mlm_logits(&self, g: &mut Graph<'_>, enc: NodeId) -> NodeId {
        let h = Self::linear(g, enc, self.layout.mlm_w, self.layout.mlm_b);
        let h = g.gelu(h);
        let h = self.ln(g, h, self.layout.mlm_ln);
        let e = g.param(self.layout.embed);
        let logits = g.matmul_bt(h, e);
        let b = g.param(self.layout.mlm_bias);
        g.add_row(logits, b)
    }

    /// Mean-pooled non-pad encoder states through the linear class head (`1 × 3`).
    pub fn class_logits(&self, g: &mut Graph<'_>, enc: NodeId, pad: &[bool]) -> NodeId {
        let live = pad.iter().filter(|p| !**p).count().max(1) as f64;
        let weights = pad.iter().map(|p| if *p { 0.0 } else { 1.0 / live }).collect();
        let pooled = g.weighted_row_sum(enc, weights);
        Self::linear(g, pooled, self.layout.cls_w, self.layout.cls_b)
    }
}

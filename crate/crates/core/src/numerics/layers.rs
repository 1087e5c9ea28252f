//! Pre-norm transformer encoder built on [`Graph`] ops.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;

/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Architecture of one encoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ff_width: usize,
}

/// Parameters of one attention block: multi-head self-attention and a
/// two-layer GELU feed-forward, each wrapped as `x + sublayer(norm(x))`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlockParams {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub heads: usize,
}

impl AttentionBlockParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shape: EncoderShape,
        rng: &mut R,
    ) -> Self {
        let (d, f) = (shape.width, shape.ff_width);
        assert!(shape.heads > 0 && d % shape.heads == 0, "heads must divide width");
        let name = |s: &str| format!("{prefix}.{s}");
        Self {
            ln1_gamma: store.add_ones(name("ln1.gamma"), &[d]),
            ln1_beta: store.add_zeros(name("ln1.beta"), &[d]),
            wq: store.add_normal(name("attn.wq"), &[d, d], INIT_STD, rng),
            bq: store.add_zeros(name("attn.bq"), &[d]),
            wk: store.add_normal(name("attn.wk"), &[d, d], INIT_STD, rng),
            bk: store.add_zeros(name("attn.bk"), &[d]),
            wv: store.add_normal(name("attn.wv"), &[d, d], INIT_STD, rng),
            bv: store.add_zeros(name("attn.bv"), &[d]),
            wo: store.add_normal(name("attn.wo"), &[d, d], INIT_STD, rng),
            bo: store.add_zeros(name("attn.bo"), &[d]),
            ln2_gamma: store.add_ones(name("ln2.gamma"), &[d]),
            ln2_beta: store.add_zeros(name("ln2.beta"), &[d]),
            w1: store.add_normal(name("ff.w1"), &[d, f], INIT_STD, rng),
            b1: store.add_zeros(name("ff.b1"), &[f]),
            w2: store.add_normal(name("ff.w2"), &[f, d], INIT_STD, rng),
            b2: store.add_zeros(name("ff.b2"), &[d]),
            heads: shape.heads,
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str, heads: usize) -> Option<Self> {
        let get = |s: &str| store.find(&format!("{prefix}.{s}"));
        Some(Self {
            ln1_gamma: get("ln1.gamma")?,
            ln1_beta: get("ln1.beta")?,
            wq: get("attn.wq")?,
            bq: get("attn.bq")?,
            wk: get("attn.wk")?,
            bk: get("attn.bk")?,
            wv: get("attn.wv")?,
            bv: get("attn.bv")?,
            wo: get("attn.wo")?,
            bo: get("attn.bo")?,
            ln2_gamma: get("ln2.gamma")?,
            ln2_beta: get("ln2.beta")?,
            w1: get("ff.w1")?,
            b1: get("ff.b1")?,
            w2: get("ff.w2")?,
            b2: get("ff.b2")?,
            heads,
        })
    }

    /// `x` is `(batch * seq, d)`; `key_mask` flags attendable positions.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        seq: usize,
        key_mask: &[bool],
        dropout: f64,
    ) -> Result<Var> {
        let p = |g: &mut Graph<T>, id| g.param(store, id);
        let (g1, b1) = (p(g, self.ln1_gamma), p(g, self.ln1_beta));
        let h = g.layer_norm(x, g1, b1);
        let (wq, bq) = (p(g, self.wq), p(g, self.bq));
        let (wk, bk) = (p(g, self.wk), p(g, self.bk));
        let (wv, bv) = (p(g, self.wv), p(g, self.bv));
        let q = g.linear(h, wq, bq);
        let k = g.linear(h, wk, bk);
        let v = g.linear(h, wv, bv);
        let a = g.attention(q, k, v, seq, self.heads, key_mask)?;
        let (wo, bo) = (p(g, self.wo), p(g, self.bo));
        let a = g.linear(a, wo, bo);
        let a = g.dropout(a, dropout);
        let x = g.add(x, a);

        let (g2, b2) = (p(g, self.ln2_gamma), p(g, self.ln2_beta));
        let h = g.layer_norm(x, g2, b2);
        let (w1, fb1) = (p(g, self.w1), p(g, self.b1));
        let (w2, fb2) = (p(g, self.w2), p(g, self.b2));
        let h = g.linear(h, w1, fb1);
        let h = g.gelu(h);
        let h = g.linear(h, w2, fb2);
        let h = g.dropout(h, dropout);
        Ok(g.add(x, h))
    }
}

/// Stack of [`AttentionBlockParams`] followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<AttentionBlockParams>,
    pub final_gamma: ParamId,
    pub final_beta: ParamId,
}

impl Encoder {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shape: EncoderShape,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..shape.layers)
            .map(|i| AttentionBlockParams::init(store, &format!("{prefix}.block{i}"), shape, rng))
            .collect();
        Self {
            blocks,
            final_gamma: store.add_ones(format!("{prefix}.final_ln.gamma"), &[shape.width]),
            final_beta: store.add_zeros(format!("{prefix}.final_ln.beta"), &[shape.width]),
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str, shape: EncoderShape) -> Option<Self> {
        let blocks = (0..shape.layers)
            .map(|i| AttentionBlockParams::lookup(store, &format!("{prefix}.block{i}"), shape.heads))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            blocks,
            final_gamma: store.find(&format!("{prefix}.final_ln.gamma"))?,
            final_beta: store.find(&format!("{prefix}.final_ln.beta"))?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
        seq: usize,
        key_mask: &[bool],
        dropout: f64,
    ) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, store, x, seq, key_mask, dropout)?;
        }
        let gamma = g.param(store, self.final_gamma);
        let beta = g.param(store, self.final_beta);
        Ok(g.layer_norm(x, gamma, beta))
    }
}

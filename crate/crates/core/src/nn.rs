//! Layers shared by the vision and text towers: linear maps, multi-head
//! attention and pre-norm transformer blocks.

use crate::autograd::{Tape, Var};
use crate::error::{config_err, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::CounterRng;

pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Projection weights of one attention module; all maps are `x . W + b`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttentionWeights {
    pub const NAMES: [&'static str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, std: f64, rng: &mut CounterRng) {
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert_normal(&format!("{prefix}/{w}"), &[dim, dim], std, rng);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            store.insert_const(&format!("{prefix}/{b}"), &[dim], 0.0);
        }
    }

    pub fn bind(p: &Bound, prefix: &str) -> Result<Self> {
        let g = |n: &str| p.get(&format!("{prefix}/{n}"));
        Ok(Self {
            wq: g("wq")?,
            bq: g("bq")?,
            wk: g("wk")?,
            bk: g("bk")?,
            wv: g("wv")?,
            bv: g("bv")?,
            wo: g("wo")?,
            bo: g("bo")?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionShape {
    /// Independent attention problems stacked along the rows.
    pub batch: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub heads: usize,
    pub causal: bool,
}

/// Result of an attention call; `probs` is `[batch * heads, q_len, kv_len]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOut {
    pub out: Var,
    pub probs: Var,
}

fn split_heads(tape: &mut Tape, x: Var, batch: usize, len: usize, heads: usize, dh: usize) -> Result<Var> {
    let x = tape.reshape(x, &[batch, len, heads, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[batch * heads, len, dh])
}

/// Scaled dot-product attention over `heads` heads.
///
/// `q` is `[batch * q_len, D]`; `k` and `v` are `[batch * kv_len, D]`.
/// Returns `[batch * q_len, D]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    w: &AttentionWeights,
    s: AttentionShape,
) -> Result<AttentionOut> {
    let dim = *tape.shape(q).last().unwrap_or(&0);
    if s.heads == 0 || !dim.is_multiple_of(s.heads) {
        return Err(config_err(format!("model width {} is not divisible by {} heads", dim, s.heads)));
    }
    let dh = dim / s.heads;
    let qp = linear(tape, q, w.wq, w.bq)?;
    let kp = linear(tape, k, w.wk, w.bk)?;
    let vp = linear(tape, v, w.wv, w.bv)?;
    let qh = split_heads(tape, qp, s.batch, s.q_len, s.heads, dh)?;
    let kh = split_heads(tape, kp, s.batch, s.kv_len, s.heads, dh)?;
    let vh = split_heads(tape, vp, s.batch, s.kv_len, s.heads, dh)?;
    let kt = tape.permute(kh, &[0, 2, 1])?;
    let scores = tape.bmm(qh, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let probs = if s.causal {
        tape.causal_softmax(scores)?
    } else {
        tape.softmax(scores)
    };
    let ctx = tape.bmm(probs, vh)?;
    let ctx = tape.reshape(ctx, &[s.batch, s.heads, s.q_len, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[s.batch * s.q_len, dim])?;
    let out = linear(tape, ctx, w.wo, w.bo)?;
    Ok(AttentionOut { out, probs })
}

#[derive(Debug, Clone, Copy)]
pub struct BlockWeights {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub attn: AttentionWeights,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BlockWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, mlp_ratio: usize, std: f64, rng: &mut CounterRng) {
        store.insert_const(&format!("{prefix}/ln1/g"), &[dim], 1.0);
        store.insert_const(&format!("{prefix}/ln1/b"), &[dim], 0.0);
        AttentionWeights::init(store, &format!("{prefix}/attn"), dim, std, rng);
        store.insert_const(&format!("{prefix}/ln2/g"), &[dim], 1.0);
        store.insert_const(&format!("{prefix}/ln2/b"), &[dim], 0.0);
        let hidden = dim * mlp_ratio;
        store.insert_normal(&format!("{prefix}/mlp/w1"), &[dim, hidden], std, rng);
        store.insert_const(&format!("{prefix}/mlp/b1"), &[hidden], 0.0);
        store.insert_normal(&format!("{prefix}/mlp/w2"), &[hidden, dim], std, rng);
        store.insert_const(&format!("{prefix}/mlp/b2"), &[dim], 0.0);
    }

    pub fn bind(p: &Bound, prefix: &str) -> Result<Self> {
        let g = |n: &str| p.get(&format!("{prefix}/{n}"));
        Ok(Self {
            ln1_g: g("ln1/g")?,
            ln1_b: g("ln1/b")?,
            attn: AttentionWeights::bind(p, &format!("{prefix}/attn"))?,
            ln2_g: g("ln2/g")?,
            ln2_b: g("ln2/b")?,
            w1: g("mlp/w1")?,
            b1: g("mlp/b1")?,
            w2: g("mlp/w2")?,
            b2: g("mlp/b2")?,
        })
    }
}

/// Pre-norm block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
///
/// `x` holds `batch` independent sequences of `len` tokens each.
pub fn transformer_block(
    tape: &mut Tape,
    x: Var,
    w: &BlockWeights,
    batch: usize,
    len: usize,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let h = tape.layer_norm(x, w.ln1_g, w.ln1_b)?;
    let shape = AttentionShape { batch, q_len: len, kv_len: len, heads, causal };
    let a = multi_head_attention(tape, h, h, h, &w.attn, shape)?;
    let x = tape.add(x, a.out)?;
    let h = tape.layer_norm(x, w.ln2_g, w.ln2_b)?;
    let h = linear(tape, h, w.w1, w.b1)?;
    let h = tape.gelu(h);
    let h = linear(tape, h, w.w2, w.b2)?;
    tape.add(x, h)
}

//! Multi-head self- and cross-attention with SuperGlue-style residual
//! message passing.
//!
//! Self-attention keys are shifted by a learned projection of the pairwise
//! normal-angle embeddings: for head `h`,
//! `logit_ij = q_i · (k_j + e_ij^h W_R^h) / s`, where `e_ij^h` is the head's
//! slice of the embedding and `s` the scale. Cross-attention has no bias.
//! Every block updates features as `f ← f + MLP(concat(f, message))`.

use rand::Rng;

use crate::descriptor::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const DEFAULT_HEADS: usize = 4;

/// Divisor applied to attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionScale {
    /// `sqrt(d / heads)`
    #[default]
    PerHead,
    /// `sqrt(d)`
    Full,
}

impl AttentionScale {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerHead => "per-head",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for AttentionScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-head" => Ok(Self::PerHead),
            "full" => Ok(Self::Full),
            _ => Err(Error::param(format!("unknown attention scale '{s}' (expected per-head or full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionOptions {
    pub scale: AttentionScale,
    /// When false the normal-angle bias is skipped, which is the same as
    /// forcing every `W_R` to zero.
    pub normal_bias: bool,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self {
            scale: AttentionScale::PerHead,
            normal_bias: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    /// One `d_h × d_h` bias projection per head; empty for cross blocks.
    pub w_r: Vec<ParamId>,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

impl AttentionBlock {
    fn init(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let dh = d / heads;
        Self {
            w_q: store.add_weight(format!("{prefix}.w_q"), d, d, rng),
            w_k: store.add_weight(format!("{prefix}.w_k"), d, d, rng),
            w_v: store.add_weight(format!("{prefix}.w_v"), d, d, rng),
            w_o: store.add_weight(format!("{prefix}.w_o"), d, d, rng),
            w_r: if with_bias {
                (0..heads)
                    .map(|h| store.add_weight(format!("{prefix}.w_r{h}"), dh, dh, rng))
                    .collect()
            } else {
                Vec::new()
            },
            mlp_w1: store.add_weight(format!("{prefix}.mlp.w1"), 2 * d, 2 * d, rng),
            mlp_b1: store.add_bias(format!("{prefix}.mlp.b1"), 2 * d),
            mlp_w2: store.add_weight(format!("{prefix}.mlp.w2"), 2 * d, d, rng),
            mlp_b2: store.add_bias(format!("{prefix}.mlp.b2"), d),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerParams {
    pub self_blocks: Vec<AttentionBlock>,
    pub cross_blocks: Vec<AttentionBlock>,
    pub heads: usize,
    pub width: usize,
}

impl TransformerParams {
    pub fn init(store: &mut ParamStore, width: usize, layers: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::param(format!("{heads} heads do not divide width {width}")));
        }
        let mut self_blocks = Vec::with_capacity(layers);
        let mut cross_blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            self_blocks.push(AttentionBlock::init(store, &format!("attention.{l}.self"), width, heads, true, rng));
            cross_blocks.push(AttentionBlock::init(store, &format!("attention.{l}.cross"), width, heads, false, rng));
        }
        Ok(Self {
            self_blocks,
            cross_blocks,
            heads,
            width,
        })
    }

    pub fn layers(&self) -> usize {
        self.self_blocks.len()
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

/// Fused attention output together with each head's attention matrix.
pub struct Attended {
    pub message: Var,
    pub weights: Vec<Var>,
}

/// Splits an `n² × d` pair embedding into per-head column slices.
pub fn split_heads(tape: &mut Tape, pair_embedding: Var, heads: usize) -> Vec<Var> {
    let dh = tape.value(pair_embedding).cols() / heads;
    (0..heads).map(|h| tape.slice_cols(pair_embedding, h * dh, dh)).collect()
}

fn scale_factor(scale: AttentionScale, d: usize, heads: usize) -> f64 {
    match scale {
        AttentionScale::PerHead => 1.0 / ((d / heads) as f64).sqrt(),
        AttentionScale::Full => 1.0 / (d as f64).sqrt(),
    }
}

fn attend(
    tape: &mut Tape,
    queries_from: Var,
    keys_from: Var,
    pair_heads: Option<&[Var]>,
    block: &AttentionBlock,
    bound: &Bound,
    heads: usize,
    opts: AttentionOptions,
) -> Attended {
    let d = tape.value(queries_from).cols();
    let dh = d / heads;
    let s = scale_factor(opts.scale, d, heads);
    let q = tape.matmul(queries_from, bound[block.w_q]);
    let k = tape.matmul(keys_from, bound[block.w_k]);
    let v = tape.matmul(keys_from, bound[block.w_v]);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let mut logits = tape.matmul_bt(qh, kh);
        if let (Some(e), true, Some(&w_r)) = (pair_heads, opts.normal_bias, block.w_r.get(h)) {
            let r = tape.matmul(e[h], bound[w_r]);
            let bias = tape.pair_bias(qh, r);
            logits = tape.add(logits, bias);
        }
        let logits = tape.scale(logits, s);
        let a = tape.softmax_rows(logits);
        weights.push(a);
        outs.push(tape.matmul(a, vh));
    }
    let cat = tape.concat_cols(&outs);
    Attended {
        message: tape.matmul(cat, bound[block.w_o]),
        weights,
    }
}

/// Normal-biased self-attention over every pair of one cloud.
pub fn self_attention(
    tape: &mut Tape,
    features: Var,
    pair_heads: Option<&[Var]>,
    block: &AttentionBlock,
    bound: &Bound,
    heads: usize,
    opts: AttentionOptions,
) -> Attended {
    attend(tape, features, features, pair_heads, block, bound, heads, opts)
}

/// Attention from every point of `queries` to every point of `keys`.
pub fn cross_attention(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    block: &AttentionBlock,
    bound: &Bound,
    heads: usize,
    opts: AttentionOptions,
) -> Attended {
    attend(tape, queries, keys, None, block, bound, heads, opts)
}

/// `f + MLP(concat(f, message))`
pub fn residual_update(tape: &mut Tape, features: Var, message: Var, block: &AttentionBlock, bound: &Bound) -> Var {
    let cat = tape.concat_cols(&[features, message]);
    let h = tape.linear(cat, bound[block.mlp_w1], Some(bound[block.mlp_b1]));
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    let delta = tape.linear(h, bound[block.mlp_w2], Some(bound[block.mlp_b2]));
    tape.add(features, delta)
}

/// `L` rounds of (self on each cloud, then cross in both directions). Both
/// sides of each round read the features produced by the previous step, so
/// swapping the clouds swaps the outputs.
#[allow(clippy::too_many_arguments)]
pub fn transformer_forward(
    tape: &mut Tape,
    fx: Var,
    fy: Var,
    ex: Option<Var>,
    ey: Option<Var>,
    params: &TransformerParams,
    bound: &Bound,
    opts: AttentionOptions,
) -> (Var, Var) {
    let heads = params.heads;
    let ex_heads = ex.map(|e| split_heads(tape, e, heads));
    let ey_heads = ey.map(|e| split_heads(tape, e, heads));
    let (mut x, mut y) = (fx, fy);
    for (sb, cb) in params.self_blocks.iter().zip(&params.cross_blocks) {
        let mx = self_attention(tape, x, ex_heads.as_deref(), sb, bound, heads, opts).message;
        let my = self_attention(tape, y, ey_heads.as_deref(), sb, bound, heads, opts).message;
        x = residual_update(tape, x, mx, sb, bound);
        y = residual_update(tape, y, my, sb, bound);
        let cx = cross_attention(tape, x, y, cb, bound, heads, opts).message;
        let cy = cross_attention(tape, y, x, cb, bound, heads, opts).message;
        x = residual_update(tape, x, cx, cb, bound);
        y = residual_update(tape, y, cy, cb, bound);
    }
    (x, y)
}

//! Token embedding plus a small transformer encoder stack.
//!
//! The stack supports running an arbitrary prefix of layers and then the
//! remaining suffix separately (split-layer scoring caches layer-b
//! passage activations), and the gated contextualization used by the
//! kernel-pooling scorer.

pub mod vocab;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{Graph, TapeError, Tensor, Var};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;

pub use vocab::{tokenize, TokenId, TokenSequence, Vocabulary};

/// Additive attention-mask value for padding keys. exp(x - 1e9) underflows
/// to exactly 0.0, so masked positions contribute nothing, bit-for-bit.
const MASK_NEG: f64 = -1e9;

/// Layer-norm epsilon.
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence length {len} exceeds max_positions {max}")]
    PositionOverflow { len: usize, max: usize },
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("pad mask length {mask} does not match sequence length {len}")]
    MaskLength { mask: usize, len: usize },
    #[error("layer range {lo}..{hi} invalid for {layers} layers")]
    BadLayerRange { lo: usize, hi: usize, layers: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Transformer encoder hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    /// Initial contextualization gate, clamped into [0, 1]. Only the
    /// kernel-pooling scorer reads it.
    pub gate_alpha: f64,
}

impl EncoderConfig {
    /// Toy BERT-family stand-in: trains in minutes on a CPU.
    pub fn toy_bert(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 256,
            max_positions: 256,
            gate_alpha: 0.5,
        }
    }

    /// Toy TK-style encoder: 2 layers over its own embeddings.
    pub fn toy_tk(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_positions: 256,
            gate_alpha: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 {
            return Err("num_layers must be >= 1".into());
        }
        Ok(())
    }

    pub fn clamped_gate_alpha(&self) -> f64 {
        self.gate_alpha.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Embedding table, learned positional embeddings, and L transformer
/// layers (post-residual layer norm).
#[derive(Debug, Clone)]
pub struct EncoderStack<S> {
    cfg: EncoderConfig,
    emb: ParamId,
    pos: ParamId,
    layers: Vec<LayerParams>,
    _marker: std::marker::PhantomData<S>,
}

pub(crate) fn normal_init<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<S> {
    let dist = Normal::new(0.0f64, std).expect("valid std");
    (0..n).map(|_| S::of(dist.sample(rng))).collect()
}

impl<S: Scalar> EncoderStack<S> {
    /// Allocate all encoder parameters into `params` under `prefix`.
    pub fn init(
        cfg: &EncoderConfig,
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
    ) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim;
        let std = 0.02;
        let mat = |p: &mut ParamSet<S>, rng: &mut ChaCha8Rng, name: String, r: usize, c: usize| {
            p.add(name, Tensor::new(vec![r, c], normal_init(rng, r * c, std)).expect("sized"))
        };
        let emb = mat(params, rng, format!("{prefix}.emb"), cfg.vocab_size, d);
        let pos = mat(params, rng, format!("{prefix}.pos"), cfg.max_positions, d);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let zeros = |p: &mut ParamSet<S>, name: String, n: usize| {
                p.add(name, Tensor::vector(vec![S::zero(); n]))
            };
            let ones = |p: &mut ParamSet<S>, name: String, n: usize| {
                p.add(name, Tensor::vector(vec![S::one(); n]))
            };
            layers.push(LayerParams {
                wq: mat(params, rng, format!("{prefix}.l{l}.wq"), d, d),
                bq: zeros(params, format!("{prefix}.l{l}.bq"), d),
                wk: mat(params, rng, format!("{prefix}.l{l}.wk"), d, d),
                bk: zeros(params, format!("{prefix}.l{l}.bk"), d),
                wv: mat(params, rng, format!("{prefix}.l{l}.wv"), d, d),
                bv: zeros(params, format!("{prefix}.l{l}.bv"), d),
                wo: mat(params, rng, format!("{prefix}.l{l}.wo"), d, d),
                bo: zeros(params, format!("{prefix}.l{l}.bo"), d),
                ln1_g: ones(params, format!("{prefix}.l{l}.ln1_g"), d),
                ln1_b: zeros(params, format!("{prefix}.l{l}.ln1_b"), d),
                w1: mat(params, rng, format!("{prefix}.l{l}.w1"), d, f),
                b1: zeros(params, format!("{prefix}.l{l}.b1"), f),
                w2: mat(params, rng, format!("{prefix}.l{l}.w2"), f, d),
                b2: zeros(params, format!("{prefix}.l{l}.b2"), d),
                ln2_g: ones(params, format!("{prefix}.l{l}.ln2_g"), d),
                ln2_b: zeros(params, format!("{prefix}.l{l}.ln2_b"), d),
            });
        }
        EncoderStack {
            cfg: cfg.clone(),
            emb,
            pos,
            layers,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Token + position embeddings (the layer-0 states).
    pub fn embed(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        ids: &[TokenId],
    ) -> Result<Var, EncoderError> {
        if ids.len() > self.cfg.max_positions {
            return Err(EncoderError::PositionOverflow {
                len: ids.len(),
                max: self.cfg.max_positions,
            });
        }
        for &id in ids {
            if (id as usize) >= self.cfg.vocab_size {
                return Err(EncoderError::TokenOutOfRange {
                    id,
                    vocab: self.cfg.vocab_size,
                });
            }
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos_idx: Vec<usize> = (0..ids.len()).collect();
        let tok = g.gather_rows(bound.var(self.emb), &idx)?;
        let pos = g.gather_rows(bound.var(self.pos), &pos_idx)?;
        Ok(g.add(tok, pos)?)
    }

    fn attention_mask(
        &self,
        g: &mut Graph<S>,
        pad: Option<&[bool]>,
        len: usize,
    ) -> Result<Option<Var>, EncoderError> {
        let Some(pad) = pad else { return Ok(None) };
        if pad.len() != len {
            return Err(EncoderError::MaskLength {
                mask: pad.len(),
                len,
            });
        }
        if !pad.iter().any(|&p| p) {
            return Ok(None);
        }
        let mut data = Vec::with_capacity(len * len);
        for _row in 0..len {
            for &col_pad in pad {
                data.push(if col_pad { S::of(MASK_NEG) } else { S::zero() });
            }
        }
        let mask = g.constant(Tensor::new(vec![len, len], data)?)?;
        Ok(Some(mask))
    }

    fn layer(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        x: Var,
        mask: Option<Var>,
        layer_idx: usize,
    ) -> Result<Var, TapeError> {
        let lw = &self.layers[layer_idx];
        let d = self.cfg.embed_dim;
        let heads = self.cfg.num_heads;
        let dh = d / heads;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let eps = S::of(LN_EPS);

        let q = g.matmul(x, bound.var(lw.wq))?;
        let q = g.add_row(q, bound.var(lw.bq))?;
        let k = g.matmul(x, bound.var(lw.wk))?;
        let k = g.add_row(k, bound.var(lw.bk))?;
        let v = g.matmul(x, bound.var(lw.wv))?;
        let v = g.add_row(v, bound.var(lw.bv))?;

        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            let s = match mask {
                Some(m) => g.add(s, m)?,
                None => s,
            };
            let a = g.softmax_rows(s)?;
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat_cols(&outs)?;
        let o = g.matmul(cat, bound.var(lw.wo))?;
        let o = g.add_row(o, bound.var(lw.bo))?;
        let res1 = g.add(x, o)?;
        let n1 = g.layer_norm(res1, bound.var(lw.ln1_g), bound.var(lw.ln1_b), eps)?;

        let f = g.matmul(n1, bound.var(lw.w1))?;
        let f = g.add_row(f, bound.var(lw.b1))?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, bound.var(lw.w2))?;
        let f = g.add_row(f, bound.var(lw.b2))?;
        let res2 = g.add(n1, f)?;
        g.layer_norm(res2, bound.var(lw.ln2_g), bound.var(lw.ln2_b), eps)
    }

    /// Apply layers `lo+1..=hi` to existing states (0-based: `lo = 0`
    /// starts right after the embeddings).
    pub fn apply_layers(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        states: Var,
        pad: Option<&[bool]>,
        lo: usize,
        hi: usize,
    ) -> Result<Var, EncoderError> {
        let total = self.layers.len();
        if lo > hi || hi > total {
            return Err(EncoderError::BadLayerRange {
                lo,
                hi,
                layers: total,
            });
        }
        let len = g.value(states).shape()[0];
        let mask = self.attention_mask(g, pad, len)?;
        let mut x = states;
        for l in lo..hi {
            x = self.layer(g, bound, x, mask, l)?;
        }
        Ok(x)
    }

    /// Embeddings plus the first `b` layers.
    pub fn encode_prefix(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        ids: &[TokenId],
        pad: Option<&[bool]>,
        b: usize,
    ) -> Result<Var, EncoderError> {
        let e = self.embed(g, bound, ids)?;
        self.apply_layers(g, bound, e, pad, 0, b)
    }

    /// Layers `b+1..=L` on top of layer-`b` states.
    pub fn encode_suffix(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        states: Var,
        pad: Option<&[bool]>,
        b: usize,
    ) -> Result<Var, EncoderError> {
        self.apply_layers(g, bound, states, pad, b, self.layers.len())
    }

    /// The full stack.
    pub fn encode_full(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        ids: &[TokenId],
        pad: Option<&[bool]>,
    ) -> Result<Var, EncoderError> {
        self.encode_prefix(g, bound, ids, pad, self.layers.len())
    }
}

/// Gated contextualization: `out_i = emb_i * alpha + ctx_i * (1 - alpha)`.
/// `alpha` is a scalar node, so the gate can be learned.
pub fn contextualize_gated<S: Scalar>(
    g: &mut Graph<S>,
    emb: Var,
    ctx: Var,
    alpha: Var,
) -> Result<Var, TapeError> {
    let gated_e = g.scale_by_var(emb, alpha)?;
    let neg = g.scale(alpha, S::of(-1.0))?;
    let one_minus = g.add_scalar(neg, S::one())?;
    let gated_c = g.scale_by_var(ctx, one_minus)?;
    g.add(gated_e, gated_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> (EncoderConfig, ParamSet<f64>, EncoderStack<f64>) {
        let cfg = EncoderConfig {
            vocab_size: 20,
            embed_dim: 8,
            num_layers: 3,
            num_heads: 2,
            ffn_dim: 16,
            max_positions: 16,
            gate_alpha: 0.5,
        };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = EncoderStack::init(&cfg, &mut params, &mut rng, "enc");
        (cfg, params, stack)
    }

    #[test]
    fn zero_layers_is_embedding_plus_position() {
        let (_, params, stack) = small();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false).unwrap();
        let out = stack.encode_prefix(&mut g, &bound, &[7], None, 0).unwrap();
        let emb = params.get(stack.emb);
        let pos = params.get(stack.pos);
        let expect: Vec<f64> = emb.row(7).iter().zip(pos.row(0)).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(out).data(), expect.as_slice());
    }

    #[test]
    fn output_shape_contract() {
        let (cfg, params, stack) = small();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false).unwrap();
        let out = stack
            .encode_full(&mut g, &bound, &[1, 5, 9, 12], None)
            .unwrap();
        assert_eq!(g.value(out).shape(), &[4, cfg.embed_dim]);
    }

    #[test]
    fn split_layer_equivalence_bitwise_for_every_split() {
        let (_, params, stack) = small();
        let ids = [5u32, 9, 13, 2, 7];
        let full = {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false).unwrap();
            let out = stack.encode_full(&mut g, &bound, &ids, None).unwrap();
            g.value(out).data().to_vec()
        };
        for b in 0..=stack.num_layers() {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false).unwrap();
            let mid = stack.encode_prefix(&mut g, &bound, &ids, None, b).unwrap();
            let out = stack.encode_suffix(&mut g, &bound, mid, None, b).unwrap();
            let split = g.value(out).data();
            assert!(
                full.iter().zip(split).all(|(a, b)| a.to_bits() == b.to_bits()),
                "split at {b} not bitwise-identical"
            );
        }
    }

    #[test]
    fn padding_is_attention_masked() {
        let (_, params, stack) = small();
        let base = {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false).unwrap();
            let out = stack.encode_full(&mut g, &bound, &[4, 11], None).unwrap();
            g.value(out).data().to_vec()
        };
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false).unwrap();
        let ids = [4u32, 11, vocab::PAD, vocab::PAD];
        let pad = [false, false, true, true];
        let out = stack.encode_full(&mut g, &bound, &ids, Some(&pad)).unwrap();
        let padded = g.value(out);
        // Rows of the real tokens are untouched by the appended padding.
        for (a, b) in base.iter().zip(&padded.data()[..base.len()]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn position_budget_enforced() {
        let (_, params, stack) = small();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false).unwrap();
        let ids = vec![1u32; 17];
        assert!(matches!(
            stack.encode_full(&mut g, &bound, &ids, None),
            Err(EncoderError::PositionOverflow { .. })
        ));
    }

    #[test]
    fn gated_contextualization_endpoints_and_midpoint() {
        let (_, params, stack) = small();
        let ids = [3u32, 8, 14];
        let eval = |alpha: f64| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false).unwrap();
            let emb = stack.embed(&mut g, &bound, &ids).unwrap();
            let ctx = stack
                .apply_layers(&mut g, &bound, emb, None, 0, stack.num_layers())
                .unwrap();
            let a = g.constant(Tensor::scalar(alpha)).unwrap();
            let out = contextualize_gated(&mut g, emb, ctx, a).unwrap();
            (
                g.value(emb).data().to_vec(),
                g.value(ctx).data().to_vec(),
                g.value(out).data().to_vec(),
            )
        };
        let (emb, _, closed) = eval(1.0);
        assert_eq!(closed, emb, "alpha = 1 must return raw embeddings");
        let (_, ctx, open) = eval(0.0);
        assert_eq!(open, ctx, "alpha = 0 must return transformer output");
        let (_, _, mid) = eval(0.5);
        for ((&m, &e), &c) in mid.iter().zip(&emb).zip(&ctx) {
            assert!((m - 0.5 * (e + c)).abs() <= 1e-15 * (1.0 + m.abs()));
        }
        // Affine in alpha: out(0.3) == 0.3*out(1) + 0.7*out(0).
        let (_, _, a3) = eval(0.3);
        for ((&m, &e), &c) in a3.iter().zip(&emb).zip(&ctx) {
            let expect = 0.3 * e + 0.7 * c;
            assert!((m - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}

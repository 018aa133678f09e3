//! Miniature pre-norm transformer encoder.
//!
//! The text representation is the concatenation of the `[CLS]` hidden
//! state of the last `concat_layers` layers, last layer first, followed by
//! a high-rate dropout when training.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Standard deviation for the weights of a head reading `fan_in` inputs,
/// `1/√fan_in`, so head pre-activations start at unit scale.
pub fn head_init_std(fan_in: usize) -> f64 {
    1.0 / num_traits::Float::sqrt(fan_in.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    /// Dropout inside each transformer block.
    pub block_dropout: f64,
    /// Dropout on the concatenated representation.
    pub rep_dropout: f64,
    pub concat_layers: usize,
}

impl EncoderConfig {
    /// A config with `concat_layers = min(5, layers)` and the usual dropouts.
    pub fn new(vocab_size: usize, hidden: usize, layers: usize, heads: usize, max_positions: usize) -> Self {
        Self {
            vocab_size,
            hidden,
            layers,
            heads,
            ff_dim: 4 * hidden,
            max_positions,
            block_dropout: 0.1,
            rep_dropout: 0.5,
            concat_layers: layers.min(5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.concat_layers == 0 || self.concat_layers > self.layers {
            return Err(Error::Config(format!(
                "concat_layers {} must be in 1..={}",
                self.concat_layers, self.layers
            )));
        }
        if self.vocab_size < 3 || self.max_positions < 1 || self.ff_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        for r in [self.block_dropout, self.rep_dropout] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn rep_width(&self) -> usize {
        self.concat_layers * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    blocks: Vec<Block>,
}

impl Encoder {
    /// Registers freshly initialized parameters under the `encoder.` prefix.
    pub fn init<T: Real, R: Rng>(config: EncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let l = config.hidden;
        let tok_emb = store.add_normal("encoder.tok_emb", &[config.vocab_size, l], INIT_STD, rng);
        let pos_emb = store.add_normal("encoder.pos_emb", &[config.max_positions, l], INIT_STD, rng);
        let emb_ln_g = store.add_const("encoder.emb_ln.weight", &[l], 1.0, true);
        let emb_ln_b = store.add_const("encoder.emb_ln.bias", &[l], 0.0, true);
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("encoder.layer{i}");
            let mut linear = |store: &mut ParamStore<T>, name: &str, out: usize, inp: usize| {
                let w = store.add_normal(format!("{p}.{name}.weight"), &[out, inp], INIT_STD, rng);
                let b = store.add_const(format!("{p}.{name}.bias"), &[out], 0.0, true);
                (w, b)
            };
            let ln1_g = store.add_const(format!("{p}.ln1.weight"), &[l], 1.0, true);
            let ln1_b = store.add_const(format!("{p}.ln1.bias"), &[l], 0.0, true);
            let (wq, bq) = linear(store, "attn.q", l, l);
            let (wk, bk) = linear(store, "attn.k", l, l);
            let (wv, bv) = linear(store, "attn.v", l, l);
            let (wo, bo) = linear(store, "attn.out", l, l);
            let ln2_g = store.add_const(format!("{p}.ln2.weight"), &[l], 1.0, true);
            let ln2_b = store.add_const(format!("{p}.ln2.bias"), &[l], 0.0, true);
            let (w1, b1) = linear(store, "ffn.in", config.ff_dim, l);
            let (w2, b2) = linear(store, "ffn.out", l, config.ff_dim);
            blocks.push(Block {
                ln1_g,
                ln1_b,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_g,
                ln2_b,
                w1,
                b1,
                w2,
                b2,
            });
        }
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            blocks,
        })
    }

    /// Attention output projection of layer `i` (weight, bias).
    pub fn attention_output(&self, i: usize) -> (ParamId, ParamId) {
        (self.blocks[i].wo, self.blocks[i].bo)
    }

    /// Text representation `[rows × concat_layers·hidden]` of a padded batch.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<T: Real, R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[u32],
        mask: &[bool],
        rows: usize,
        seq: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        if seq > cfg.max_positions {
            return Err(Error::Contract(format!(
                "sequence length {seq} exceeds {} positions",
                cfg.max_positions
            )));
        }
        if seq == 0 || tokens.len() != rows * seq || mask.len() != rows * seq {
            return Err(Error::Contract(format!(
                "batch of {} tokens / {} mask entries for {rows}×{seq}",
                tokens.len(),
                mask.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {t} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..rows).flat_map(|_| 0..seq).collect();
        let cls_rows: Vec<usize> = (0..rows).map(|b| b * seq).collect();

        let tok = g.param(self.tok_emb);
        let pos = g.param(self.pos_emb);
        let te = g.gather_rows(tok, &ids)?;
        let pe = g.gather_rows(pos, &positions)?;
        let x = g.add(te, pe)?;
        // normalized embeddings keep the residual stream, and so e, at unit scale
        let mut x = layer_norm(g, x, self.emb_ln_g, self.emb_ln_b)?;

        let mut cls_states = Vec::with_capacity(cfg.layers);
        for blk in &self.blocks {
            let h = layer_norm(g, x, blk.ln1_g, blk.ln1_b)?;
            let q = linear(g, h, blk.wq, blk.bq)?;
            let k = linear(g, h, blk.wk, blk.bk)?;
            let v = linear(g, h, blk.wv, blk.bv)?;
            let a = g.attention(q, k, v, mask, rows, seq, cfg.heads)?;
            let a = linear(g, a, blk.wo, blk.bo)?;
            let a = dropout(g, a, cfg.block_dropout, training, rng)?;
            x = g.add(x, a)?;

            let h = layer_norm(g, x, blk.ln2_g, blk.ln2_b)?;
            let f = linear(g, h, blk.w1, blk.b1)?;
            let f = g.gelu(f)?;
            let f = linear(g, f, blk.w2, blk.b2)?;
            let f = dropout(g, f, cfg.block_dropout, training, rng)?;
            x = g.add(x, f)?;

            cls_states.push(g.gather_rows(x, &cls_rows)?);
        }
        let last: Vec<NodeId> = cls_states.iter().rev().take(cfg.concat_layers).copied().collect();
        let e = if last.len() == 1 {
            last[0]
        } else {
            g.concat_cols(&last)?
        };
        dropout(g, e, cfg.rep_dropout, training, rng)
    }
}

fn layer_norm<T: Real>(g: &mut Graph<'_, T>, x: NodeId, gamma: ParamId, beta: ParamId) -> Result<NodeId> {
    let gn = g.param(gamma);
    let bn = g.param(beta);
    g.layer_norm(x, gn, bn)
}

/// `x · Wᵀ + b` with `W` stored `[out × in]`.
pub fn linear<T: Real>(g: &mut Graph<'_, T>, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
    let wn = g.param(w);
    let bn = g.param(b);
    let y = g.matmul_nt(x, wn)?;
    g.add_row(y, bn)
}

/// Inverted dropout: survivors are scaled by `1/(1−rate)`; identity when not
/// training or when `rate` is zero.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = g.shape(x).to_vec();
    let n = g.value(x).len();
    let m: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = g.constant(Tensor::new(&shape, m)?);
    g.mul(x, mask)
}

//! Transformer building blocks composed from differentiable primitives.

use candle_core::{Tensor, D};

use super::params::ParamStore;
use crate::error::Result;

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            w: store.normal(&format!("{name}.weight"), &[d_in, d_out], INIT_STD, trainable)?,
            b: store.constant(&format!("{name}.bias"), &[d_out], 0.0, trainable)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w)?.broadcast_add(&self.b)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0, trainable)?,
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0, trainable)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Post-norm self-attention block.
#[derive(Debug, Clone)]
pub struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    f1: Linear,
    f2: Linear,
    ln2: LayerNorm,
    heads: usize,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, heads: usize, ffn: usize, trainable: bool) -> Result<Self> {
        let lin = |store: &mut ParamStore, part: &str, i: usize, o: usize| {
            Linear::new(store, &format!("{name}.{part}"), i, o, trainable)
        };
        Ok(Self {
            q: lin(store, "query", hidden, hidden)?,
            k: lin(store, "key", hidden, hidden)?,
            v: lin(store, "value", hidden, hidden)?,
            o: lin(store, "attn_out", hidden, hidden)?,
            ln1: LayerNorm::new(store, &format!("{name}.attn_norm"), hidden, trainable)?,
            f1: lin(store, "ffn_in", hidden, ffn)?,
            f2: lin(store, "ffn_out", ffn, hidden)?,
            ln2: LayerNorm::new(store, &format!("{name}.ffn_norm"), hidden, trainable)?,
            heads,
        })
    }

    /// `x`: `[B, L, H]`; `bias`: additive attention bias broadcastable to `[B, heads, L, L]`.
    pub fn forward(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        let dh = h / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let probs = softmax(&scores.broadcast_add(bias)?)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, h))?;
        let x = self.ln1.forward(&(x + self.o.forward(&ctx)?)?)?;
        let f = self.f2.forward(&self.f1.forward(&x)?.gelu()?)?;
        self.ln2.forward(&(x + f)?)
    }
}

/// Additive bias that hides padded key positions: `valid` is `[B, L]` of 0/1.
pub fn padding_bias(valid: &Tensor) -> Result<Tensor> {
    let (b, l) = valid.dims2()?;
    Ok(((valid - 1.0)? * 1e9)?.reshape((b, 1, 1, l))?)
}

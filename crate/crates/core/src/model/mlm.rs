//! A BERT-style masked language model.

use candle_core::Tensor;

use super::nn::{padding_bias, Block, LayerNorm, Linear, INIT_STD};
use super::params::ParamStore;
use crate::error::Result;

/// Number of input region types: text tokens, prefix slots, graph slots.
pub const N_TYPES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlmDims {
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct MaskedLm {
    pub tok_emb: Tensor,
    pos_emb: Tensor,
    type_emb: Tensor,
    emb_norm: LayerNorm,
    blocks: Vec<Block>,
    head_dense: Linear,
    head_norm: LayerNorm,
    dec_bias: Tensor,
    pub dims: MlmDims,
}

impl MaskedLm {
    /// Parameters are registered under `mlm.`.
    pub fn new(store: &mut ParamStore, dims: MlmDims) -> Result<Self> {
        let h = dims.hidden;
        let tok_emb = store.normal("mlm.embeddings.token", &[dims.vocab, h], INIT_STD, true)?;
        let pos_emb = store.normal("mlm.embeddings.position", &[dims.max_len, h], INIT_STD, true)?;
        let type_emb = store.normal("mlm.embeddings.type", &[N_TYPES, h], INIT_STD, true)?;
        let emb_norm = LayerNorm::new(store, "mlm.embeddings.norm", h, true)?;
        let blocks = (0..dims.layers)
            .map(|i| Block::new(store, &format!("mlm.layer{i}"), h, dims.heads, dims.ffn, true))
            .collect::<Result<Vec<_>>>()?;
        let head_dense = Linear::new(store, "mlm.head.dense", h, h, true)?;
        let head_norm = LayerNorm::new(store, "mlm.head.norm", h, true)?;
        let dec_bias = store.constant("mlm.head.decoder_bias", &[dims.vocab], 0.0, true)?;
        Ok(Self { tok_emb, pos_emb, type_emb, emb_norm, blocks, head_dense, head_norm, dec_bias, dims })
    }

    /// Add position and type embeddings to looked-up input rows `[B, L, H]`.
    pub fn embed(&self, rows: &Tensor, types: &Tensor) -> Result<Tensor> {
        let (b, l, h) = rows.dims3()?;
        let pos = self.pos_emb.narrow(0, 0, l)?.unsqueeze(0)?;
        let ty = self.type_emb.index_select(&types.flatten_all()?, 0)?.reshape((b, l, h))?;
        self.emb_norm.forward(&rows.broadcast_add(&pos)?.add(&ty)?)
    }

    /// Contextual states `[B, L, H]`; `valid` is `[B, L]` with 1 for real positions.
    pub fn encode(&self, x: &Tensor, valid: &Tensor) -> Result<Tensor> {
        let bias = padding_bias(valid)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, &bias)?;
        }
        Ok(h)
    }

    /// Vocabulary logits `[N, V]` for hidden rows `[N, H]`, decoder tied to the token embeddings.
    pub fn logits(&self, h: &Tensor) -> Result<Tensor> {
        let t = self.head_norm.forward(&self.head_dense.forward(h)?.gelu()?)?;
        Ok(t.matmul(&self.tok_emb.t()?)?.broadcast_add(&self.dec_bias)?)
    }
}

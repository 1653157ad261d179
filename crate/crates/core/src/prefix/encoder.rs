//! Frozen code encoder with data-flow-aware attention.
//!
//! The input is the code subtokens followed by one position per graph node.
//! Code positions attend to each other; a node attends to the subtokens of
//! its aligned code token, to itself and to its graph neighbours.

use candle_core::{Device, Tensor};

use crate::config::ModelConfig;
use crate::dfg::DataFlowGraph;
use crate::error::{Error, Result};
use crate::model::nn::{Block, LayerNorm, INIT_STD};
use crate::model::params::ParamStore;
use crate::tokenizer::Tokenizer;

/// Hidden states of one request's code.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCode {
    /// One row per code subtoken (after truncation).
    pub token_states: Vec<Vec<f32>>,
    /// One row per graph node whose code token survived truncation.
    pub node_states: Vec<Option<Vec<f32>>>,
}

impl EncodedCode {
    /// Node ids that have a state, in id order.
    pub fn aligned_nodes(&self) -> Vec<usize> {
        self.node_states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| i)
            .collect()
    }
}

pub struct CodeEncoder {
    store: ParamStore,
    tok_emb: Tensor,
    pos_emb: Tensor,
    type_emb: Tensor,
    emb_norm: LayerNorm,
    blocks: Vec<Block>,
    hidden: usize,
    max_tokens: usize,
}

impl CodeEncoder {
    /// `micro` gives a seeded random initialization; any other value is a
    /// safetensors file with weights for the configured shape. Every
    /// parameter is frozen.
    pub fn new(cfg: &ModelConfig, vocab_size: usize, seed: u64, device: &Device) -> Result<Self> {
        let h = cfg.code_hidden;
        let mut store = ParamStore::new(seed, cfg.dtype.to_dtype(), device);
        let tok_emb = store.normal("code.embeddings.token", &[vocab_size, h], INIT_STD, false)?;
        let pos_emb = store.normal("code.embeddings.position", &[cfg.code_max_tokens, h], INIT_STD, false)?;
        let type_emb = store.normal("code.embeddings.type", &[2, h], INIT_STD, false)?;
        let emb_norm = LayerNorm::new(&mut store, "code.embeddings.norm", h, false)?;
        let blocks = (0..cfg.code_layers)
            .map(|i| Block::new(&mut store, &format!("code.layer{i}"), h, cfg.code_heads, cfg.ffn, false))
            .collect::<Result<Vec<_>>>()?;
        if cfg.code_encoder != "micro" {
            let path = std::path::Path::new(&cfg.code_encoder);
            if !path.is_file() {
                return Err(Error::Asset(format!("code encoder weights `{}` not found", cfg.code_encoder)));
            }
            store.load(path)?;
        }
        Ok(Self { store, tok_emb, pos_emb, type_emb, emb_norm, blocks, hidden: h, max_tokens: cfg.code_max_tokens })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Overwrite the weights from a safetensors file of the same shape.
    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        self.store.load(path)
    }

    /// Subtoken ids of a code token stream plus, per code token, the range
    /// of its subtokens. Subtokens past `max_tokens` are dropped.
    pub fn subtokens(&self, tokens: &[String], tok: &Tokenizer) -> (Vec<u32>, Vec<std::ops::Range<usize>>) {
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(tokens.len());
        for t in tokens {
            let start = ids.len().min(self.max_tokens);
            ids.extend(tok.encode(t));
            ids.truncate(self.max_tokens);
            spans.push(start..ids.len());
        }
        (ids, spans)
    }

    pub fn encode(&self, tokens: &[String], graph: &DataFlowGraph, tok: &Tokenizer) -> Result<EncodedCode> {
        let (ids, spans) = self.subtokens(tokens, tok);
        let n = ids.len();
        let kept: Vec<usize> = graph
            .nodes
            .iter()
            .filter(|nd| spans.get(nd.token).is_some_and(|s| !s.is_empty()))
            .map(|nd| nd.id)
            .take(self.max_tokens)
            .collect();
        if n == 0 {
            return Ok(EncodedCode { token_states: Vec::new(), node_states: vec![None; graph.nodes.len()] });
        }
        let dev = self.tok_emb.device().clone();
        let dtype = self.tok_emb.dtype();
        let total = n + kept.len();

        // code positions: token + position + type 0
        let id_t = Tensor::from_vec(ids.clone(), n, &dev)?;
        let code_emb = self
            .tok_emb
            .index_select(&id_t, 0)?
            .broadcast_add(&self.pos_emb.narrow(0, 0, n)?)?
            .broadcast_add(&self.type_emb.narrow(0, 0, 1)?)?;
        let mut rows = vec![code_emb];
        if !kept.is_empty() {
            // node positions: mean of the aligned subtoken embeddings, position of the first one, type 1
            let mut avg = vec![0f64; kept.len() * n];
            let mut first_pos = Vec::with_capacity(kept.len());
            for (r, &node) in kept.iter().enumerate() {
                let span = spans[graph.nodes[node].token].clone();
                first_pos.push(span.start as u32);
                let w = 1.0 / span.len() as f64;
                for c in span {
                    avg[r * n + c] = w;
                }
            }
            let avg = Tensor::from_vec(avg, (kept.len(), n), &dev)?.to_dtype(dtype)?;
            let tok_rows = self.tok_emb.index_select(&id_t, 0)?;
            let pos = Tensor::from_vec(first_pos, kept.len(), &dev)?;
            let node_emb = avg
                .matmul(&tok_rows)?
                .broadcast_add(&self.pos_emb.index_select(&pos, 0)?)?
                .broadcast_add(&self.type_emb.narrow(0, 1, 1)?)?;
            rows.push(node_emb);
        }
        let x = self.emb_norm.forward(&Tensor::cat(&rows, 0)?)?.unsqueeze(0)?;

        let mut allow = vec![false; total * total];
        let mut set = |a: usize, b: usize| {
            allow[a * total + b] = true;
            allow[b * total + a] = true;
        };
        for a in 0..n {
            for b in 0..n {
                set(a, b);
            }
        }
        let slot_of: std::collections::HashMap<usize, usize> =
            kept.iter().enumerate().map(|(r, &node)| (node, n + r)).collect();
        for (&node, &slot) in &slot_of {
            set(slot, slot);
            for c in spans[graph.nodes[node].token].clone() {
                set(slot, c);
            }
        }
        for &(d, s) in &graph.edges {
            if let (Some(&a), Some(&b)) = (slot_of.get(&d), slot_of.get(&s)) {
                set(a, b);
            }
        }
        let bias: Vec<f64> = allow.iter().map(|&ok| if ok { 0.0 } else { -1e9 }).collect();
        let bias = Tensor::from_vec(bias, (1, 1, total, total), &dev)?.to_dtype(dtype)?;

        let mut h = x;
        for block in &self.blocks {
            h = block.forward(&h, &bias)?;
        }
        let states = h.squeeze(0)?.detach().to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
        let mut node_states = vec![None; graph.nodes.len()];
        for (r, &node) in kept.iter().enumerate() {
            node_states[node] = Some(states[n + r].clone());
        }
        Ok(EncodedCode { token_states: states[..n].to_vec(), node_states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{build_dfg, Language};
    use crate::tokenizer::TokenizerBuilder;

    fn setup() -> (CodeEncoder, Tokenizer) {
        let mut b = TokenizerBuilder::new(100, 1, &[]);
        b.feed("x = 1 y = x + 2 z w");
        let tok = b.build();
        let cfg = ModelConfig::default();
        (CodeEncoder::new(&cfg, tok.vocab_size(), 7, &Device::Cpu).unwrap(), tok)
    }

    #[test]
    fn one_state_per_token_and_node() {
        let (enc, tok) = setup();
        let out = build_dfg("x = 1\ny = x + 2", Language::Python);
        let e = enc.encode(&out.tokens, &out.graph, &tok).unwrap();
        assert_eq!(e.token_states.len(), 8);
        assert_eq!(e.aligned_nodes(), vec![0, 1, 2, 3, 4]);
        assert_eq!(e.node_states[0].as_ref().unwrap().len(), enc.hidden());
        let again = enc.encode(&out.tokens, &out.graph, &tok).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn different_code_gives_different_states() {
        let (enc, tok) = setup();
        let a = build_dfg("x = 1\ny = x + 2", Language::Python);
        let b = build_dfg("z = 1\ny = w + 2", Language::Python);
        let ea = enc.encode(&a.tokens, &a.graph, &tok).unwrap();
        let eb = enc.encode(&b.tokens, &b.graph, &tok).unwrap();
        assert_ne!(ea.token_states, eb.token_states);
    }
}

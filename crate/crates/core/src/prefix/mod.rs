//! Code prefix: a trainable prefix matrix followed by frozen graph vectors.

mod encoder;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use candle_core::Tensor;

use crate::config::PrefixInitMode;
use crate::error::{Error, Result};
use crate::model::params::ParamStore;

pub use encoder::{CodeEncoder, EncodedCode};

/// Encoded code per request, filled once and shared by readers.
#[derive(Default)]
pub struct GraphCache {
    inner: RwLock<HashMap<u64, Arc<EncodedCode>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl GraphCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, request_id: u64) -> Option<Arc<EncodedCode>> {
        self.inner.read().expect("cache lock").get(&request_id).cloned()
    }

    pub fn get_or_encode(&self, request_id: u64, encode: impl FnOnce() -> Result<EncodedCode>) -> Result<Arc<EncodedCode>> {
        if let Some(hit) = self.get(request_id) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let fresh = Arc::new(encode()?);
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut w = self.inner.write().expect("cache lock");
        Ok(w.entry(request_id).or_insert(fresh).clone())
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Frozen vectors of the aligned graph nodes, in node order.
pub fn embed_graph(code: &EncodedCode, nodes: &[usize]) -> Vec<Vec<f32>> {
    nodes
        .iter()
        .filter_map(|&n| code.node_states.get(n).and_then(|s| s.clone()))
        .collect()
}

/// Prefix rows for one request: the states of its first `len` code
/// subtokens, with missing rows taken from the generic snippet.
pub fn init_prefix(code: &EncodedCode, generic: &EncodedCode, len: usize) -> Result<Vec<Vec<f32>>> {
    (0..len)
        .map(|j| match code.token_states.get(j) {
            Some(row) => Ok(row.clone()),
            None => generic_row(generic, j),
        })
        .collect()
}

fn generic_row(generic: &EncodedCode, j: usize) -> Result<Vec<f32>> {
    if generic.token_states.is_empty() {
        return Err(Error::Config("the generic prefix snippet encodes to no tokens".into()));
    }
    Ok(generic.token_states[j % generic.token_states.len()].clone())
}

/// Row-wise mean of the leading code states over a sample of requests. A
/// row no sampled request reaches comes from the generic snippet.
pub fn shared_average(samples: &[&EncodedCode], generic: &EncodedCode, len: usize) -> Result<Vec<Vec<f32>>> {
    (0..len)
        .map(|j| {
            let rows: Vec<&Vec<f32>> = samples.iter().filter_map(|s| s.token_states.get(j)).collect();
            if rows.is_empty() {
                return generic_row(generic, j);
            }
            let mut mean = vec![0f64; rows[0].len()];
            for r in &rows {
                for (m, v) in mean.iter_mut().zip(r.iter()) {
                    *m += *v as f64;
                }
            }
            Ok(mean.into_iter().map(|m| (m / rows.len() as f64) as f32).collect())
        })
        .collect()
}

pub const PREFIX_PARAM: &str = "prefix.matrix";

/// The trainable prefix. In the shared and generic modes the stored matrix
/// is the prefix itself; in per-request mode it is a shared offset added to
/// each request's own initialization.
#[derive(Debug, Clone)]
pub struct PrefixMatrix {
    pub mode: PrefixInitMode,
    weight: Tensor,
    len: usize,
    dim: usize,
}

impl PrefixMatrix {
    pub fn new(store: &mut ParamStore, mode: PrefixInitMode, init: &[Vec<f32>], len: usize, dim: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("prefix length must be at least 1".into()));
        }
        let weight = match mode {
            PrefixInitMode::PerRequest => store.constant(PREFIX_PARAM, &[len, dim], 0.0, true)?,
            _ => {
                if init.len() != len || init.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!("prefix init must be {len} rows of width {dim}")));
                }
                let flat: Vec<f32> = init.iter().flatten().copied().collect();
                let t = Tensor::from_vec(flat, (len, dim), store.device())?;
                store.from_tensor(PREFIX_PARAM, &t, true)?
            }
        };
        Ok(Self { mode, weight, len, dim })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// Prefix rows for a request; `base` is its own initialization, used in
    /// per-request mode only.
    pub fn rows(&self, base: Option<&Tensor>) -> Result<Tensor> {
        match (self.mode, base) {
            (PrefixInitMode::PerRequest, Some(b)) => Ok(b.broadcast_add(&self.weight)?),
            (PrefixInitMode::PerRequest, None) => Err(Error::Config("per-request prefix needs the request's code state".into())),
            _ => Ok(self.weight.clone()),
        }
    }
}

/// A request's code region: `prefix_slots` prefix positions followed by
/// one frozen vector per aligned graph node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeRepresentation {
    pub request_id: u64,
    pub prefix_slots: usize,
    pub graph_nodes: Vec<usize>,
}

impl CodeRepresentation {
    pub fn from_encoded(request_id: u64, prefix_slots: usize, code: &EncodedCode) -> Self {
        Self { request_id, prefix_slots, graph_nodes: code.aligned_nodes() }
    }

    pub fn slot_count(&self) -> usize {
        self.prefix_slots + self.graph_nodes.len()
    }
}

pub const GRAPH_SLOTS: &str = "graph.slots";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

/// Split every parameter into trainable and frozen. The code encoder and
/// the cached graph vectors are always frozen.
pub fn trainable_partition(model: &ParamStore, encoder: &ParamStore) -> Partition {
    let mut trainable = BTreeSet::new();
    let mut frozen = BTreeSet::new();
    for (name, p) in model.iter() {
        if p.trainable {
            trainable.insert(name.to_string());
        } else {
            frozen.insert(name.to_string());
        }
    }
    for (name, p) in encoder.iter() {
        assert!(!p.trainable, "code encoder parameter `{name}` is trainable");
        frozen.insert(name.to_string());
    }
    frozen.insert(GRAPH_SLOTS.to_string());
    assert!(trainable.is_disjoint(&frozen), "parameter in both partitions");
    let all = model.names().count() + encoder.names().count() + 1;
    assert_eq!(trainable.len() + frozen.len(), all, "parameter missing from the partition");
    Partition { trainable, frozen }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(rows: usize, width: usize, base: f32) -> EncodedCode {
        EncodedCode {
            token_states: (0..rows).map(|r| vec![base + r as f32; width]).collect(),
            node_states: vec![Some(vec![base; width]), None, Some(vec![base + 0.5; width])],
        }
    }

    #[test]
    fn short_code_falls_back_to_generic_rows() {
        let generic = enc(10, 2, 100.0);
        let rows = init_prefix(&enc(3, 2, 0.0), &generic, 5).unwrap();
        assert_eq!(rows[2], vec![2.0, 2.0]);
        assert_eq!(rows[3], vec![103.0, 103.0]);
        let empty = EncodedCode { token_states: vec![], node_states: vec![] };
        assert_eq!(init_prefix(&empty, &generic, 2).unwrap()[1], vec![101.0, 101.0]);
    }

    #[test]
    fn shared_average_by_row() {
        let generic = enc(4, 1, 100.0);
        let (a, b) = (enc(2, 1, 0.0), enc(1, 1, 10.0));
        let rows = shared_average(&[&a, &b], &generic, 3).unwrap();
        assert_eq!(rows, vec![vec![5.0], vec![1.0], vec![102.0]]);
    }

    #[test]
    fn graph_vectors_skip_unaligned_nodes() {
        let e = enc(1, 2, 1.0);
        assert_eq!(embed_graph(&e, &e.aligned_nodes()).len(), 2);
        let rep = CodeRepresentation::from_encoded(9, 8, &e);
        assert_eq!(rep.slot_count(), 10);
    }

    #[test]
    fn cache_hits_on_second_call() {
        let cache = GraphCache::new();
        let mut calls = 0;
        for _ in 0..2 {
            cache
                .get_or_encode(1, || {
                    calls += 1;
                    Ok(enc(1, 1, 0.0))
                })
                .unwrap();
        }
        assert_eq!(calls, 1);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }
}

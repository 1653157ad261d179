#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use candle_core::Device;
use serde::Deserialize;
use unipcr::answering::LabelSpace;
use unipcr::config::{Precision, RunConfig};
use unipcr::corpus::{extract_request, NecessityRule, Request};
use unipcr::dfg::{build_dfg, DataFlowGraph, Language};
use unipcr::model::{build_tokenizer, AblationSpec, UnifiedModel};
use unipcr::synth::{synth_posts, SynthConfig};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Two-layer, 64-wide model with short inputs.
pub fn micro_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.hidden = 64;
    c.model.heads = 4;
    c.model.ffn = 128;
    c.model.layers = 2;
    c.model.code_hidden = 64;
    c.model.code_heads = 4;
    c.model.code_max_tokens = 64;
    c.model.vocab_min_count = 1;
    c.model.batch_size = 8;
    c.model.lr = 1e-3;
    c.model.dtype = Precision::F32;
    c.prompting.budget = 96;
    c.prompting.code_budget = 32;
    c.prefix.length = 4;
    c
}

/// Synthetic requests that carry at least one tag.
pub fn synth_requests(n: usize, seed: u64) -> Vec<Request> {
    let cfg = SynthConfig { questions: n, answers: 0, seed, ..Default::default() };
    synth_posts(&cfg)
        .iter()
        .map(|p| extract_request(p, NecessityRule::ScoreSign))
        .filter(|r| !r.tags.is_empty())
        .collect()
}

pub fn micro_model(spec: AblationSpec, config: &RunConfig, reqs: &[Request]) -> UnifiedModel {
    let labels = LabelSpace::new(reqs.iter().flat_map(|r| r.tags.clone()).collect());
    let tok = build_tokenizer(reqs, &labels, config);
    let mut m = UnifiedModel::new(config, spec, tok, labels, &Device::Cpu).expect("model");
    m.init_shared_prefix(reqs, &HashMap::new()).expect("prefix init");
    m
}

#[derive(Deserialize)]
struct Golden {
    name: String,
    lang: String,
    code: String,
    /// `dst@token <- src@token`
    edges: Vec<String>,
}

fn render(g: &DataFlowGraph) -> Vec<String> {
    let mut out: Vec<String> = g
        .edges
        .iter()
        .map(|&(d, s)| {
            let (d, s) = (&g.nodes[d], &g.nodes[s]);
            format!("{}@{} <- {}@{}", d.name, d.token, s.name, s.token)
        })
        .collect();
    out.sort();
    out
}

/// Compare every committed golden graph with a fresh build, twice.
/// Returns the number of fixtures checked.
pub fn check_golden_graphs() -> Result<usize, String> {
    let dir = fixtures_dir().join("dfg");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.len() < 10 {
        return Err(format!("only {} golden fixtures", paths.len()));
    }
    for p in &paths {
        let f: Golden = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).map_err(|e| format!("{}: {e}", p.display()))?;
        let lang: Language = f.lang.parse().map_err(|e| format!("{}: {e}", f.name))?;
        let a = build_dfg(&f.code, lang);
        if a != build_dfg(&f.code, lang) {
            return Err(format!("{}: two runs differ", f.name));
        }
        if let Some(d) = &a.diagnostic {
            return Err(format!("{}: {d}", f.name));
        }
        let mut want = f.edges.clone();
        want.sort();
        let got = render(&a.graph);
        if got != want {
            return Err(format!("{}: got {got:?}, want {want:?}", f.name));
        }
        a.graph.check(a.tokens.len()).map_err(|e| format!("{}: {e}", f.name))?;
    }
    Ok(paths.len())
}

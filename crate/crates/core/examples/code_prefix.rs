//! Encode a snippet with the frozen code encoder and show the data-flow
//! node states that become graph slots and the prefix initialisation.

use candle_core::Device;
use unipcr::answering::LabelSpace;
use unipcr::config::RunConfig;
use unipcr::corpus::{extract_request, NecessityRule, Request};
use unipcr::dfg::{build_dfg, Language};
use unipcr::model::build_tokenizer;
use unipcr::prefix::CodeEncoder;
use unipcr::prefix::{embed_graph, init_prefix};
use unipcr::synth::{synth_posts, SynthConfig};

fn main() -> unipcr::Result<()> {
    let code = "total = 0\nfor x in items:\n    total = total + x\nprint(total)";
    let reqs: Vec<Request> = synth_posts(&SynthConfig { questions: 50, answers: 0, ..Default::default() })
        .iter()
        .map(|p| extract_request(p, NecessityRule::ScoreSign))
        .collect();
    let mut config = RunConfig::default();
    config.model.code_hidden = 32;
    config.model.code_heads = 2;
    config.prefix.length = 4;
    let tok = build_tokenizer(&reqs, &LabelSpace::new(vec![]), &config);
    let encoder = CodeEncoder::new(&config.model, tok.vocab_size(), config.model.seed, &Device::Cpu)?;

    let dfg = build_dfg(code, Language::Python);
    let enc = encoder.encode(&dfg.tokens, &dfg.graph, &tok)?;
    let nodes = enc.aligned_nodes();
    println!("{} code tokens, {} graph nodes, {} edges", dfg.tokens.len(), dfg.graph.nodes.len(), dfg.graph.edges.len());
    for (n, row) in nodes.iter().zip(embed_graph(&enc, &nodes)) {
        println!("node {:<8} {:.3?}", dfg.graph.nodes[*n].name, &row[..4]);
    }
    let snippet = build_dfg(&config.prefix.generic_snippet, Language::Python);
    let generic = encoder.encode(&snippet.tokens, &snippet.graph, &tok)?;
    let prefix = init_prefix(&enc, &generic, config.prefix.length)?;
    println!("prefix init: {} rows of width {}", prefix.len(), prefix[0].len());
    Ok(())
}

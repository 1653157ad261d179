//! Show how a request is wrapped in the prompt template and where the
//! mask slots land.

use std::collections::HashMap;

use candle_core::Device;
use unipcr::answering::LabelSpace;
use unipcr::config::RunConfig;
use unipcr::corpus::{extract_request, NecessityRule, Request};
use unipcr::model::{build_tokenizer, AblationSpec, UnifiedModel};
use unipcr::prompting::render_template;
use unipcr::synth::{synth_posts, SynthConfig};

fn main() -> unipcr::Result<()> {
    let reqs: Vec<Request> = synth_posts(&SynthConfig { questions: 50, answers: 0, ..Default::default() })
        .iter()
        .map(|p| extract_request(p, NecessityRule::ScoreSign))
        .filter(|r| !r.tags.is_empty())
        .collect();
    let mut config = RunConfig::default();
    config.model.hidden = 32;
    config.model.heads = 2;
    config.model.layers = 1;
    config.model.ffn = 64;
    config.model.code_hidden = 32;
    config.model.code_heads = 2;
    let labels = LabelSpace::new(reqs.iter().flat_map(|r| r.tags.clone()).collect());
    let tok = build_tokenizer(&reqs, &labels, &config);
    let mut model = UnifiedModel::new(&config, AblationSpec::Full, tok, labels, &Device::Cpu)?;
    model.init_shared_prefix(&reqs, &HashMap::new())?;

    let r = &reqs[0];
    let prompted = render_template(r, &model.template, &model.tokenizer);
    println!("request {}: {}", r.id, r.title);
    println!("tags: {:?}", r.tags);
    println!("template: {}", model.template.text());
    println!("prompt tokens: {:?}", prompted.ids.iter().map(|&id| model.tokenizer.id_to_token(id)).collect::<Vec<_>>());
    let input = model.prepare(r, None)?.input;
    println!("{} slots, masks at {:?}, spans {:?}", input.len(), input.mask_positions, input.spans);
    Ok(())
}

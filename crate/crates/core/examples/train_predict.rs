//! Train the full model on a synthetic corpus, then predict on its test split.
//!
//! cargo run --example train_predict -- [WORKDIR]

use std::path::PathBuf;

use unipcr::config::RunConfig;
use unipcr::model::AblationSpec;
use unipcr::pipeline::{self, Workspace};
use unipcr::synth::{synth_posts, write_posts_xml, SynthConfig};

fn main() -> unipcr::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-work".into()));
    let ws = Workspace::new(&root);
    std::fs::create_dir_all(&root).expect("workdir");
    let config = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml"))?;

    let dump = root.join("Posts.xml");
    let posts = synth_posts(&SynthConfig { questions: 600, ..Default::default() });
    write_posts_xml(&posts, std::io::BufWriter::new(std::fs::File::create(&dump).expect("dump"))).expect("write dump");
    pipeline::ingest(&config, &dump, &ws.corpus())?;
    pipeline::build_graphs(&config, &ws.corpus(), &ws.graphs())?;

    let rep = pipeline::train_stage(&config, AblationSpec::Full, &ws.corpus(), Some(&ws.graphs()), &ws.model(AblationSpec::Full))?;
    println!("{} steps, last loss {:.4}", rep.steps, rep.losses.last().copied().unwrap_or(f64::NAN));

    let test = pipeline::split_path(&ws.corpus(), "test");
    let out = root.join("predictions.jsonl");
    let preds = pipeline::predict_stage(&config, &ws.checkpoint(AblationSpec::Full), &test, &out)?;
    for p in preds.iter().take(5) {
        println!("{}: {:?} ({:?})", p.id, &p.tags[..p.tags.len().min(5)], p.necessity);
    }
    Ok(())
}

//! Train, predict and evaluate all three ablation variants on a synthetic
//! corpus and print the comparison tables.
//!
//! cargo run --example ablate -- [WORKDIR]

use std::path::PathBuf;

use unipcr::config::RunConfig;
use unipcr::model::AblationSpec;
use unipcr::pipeline::{self, Workspace};
use unipcr::synth::{synth_posts, write_posts_xml, SynthConfig};

fn main() -> unipcr::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablate-work".into()));
    let ws = Workspace::new(&root);
    std::fs::create_dir_all(&root).expect("workdir");
    let config = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml"))?;
    let dump = root.join("Posts.xml");
    let posts = synth_posts(&SynthConfig { questions: 1000, ..Default::default() });
    write_posts_xml(&posts, std::io::BufWriter::new(std::fs::File::create(&dump).expect("dump"))).expect("write dump");
    pipeline::ingest(&config, &dump, &ws.corpus())?;
    pipeline::build_graphs(&config, &ws.corpus(), &ws.graphs())?;
    let rep = pipeline::ablate(&config, &ws, &AblationSpec::ALL)?;
    print!("{}", rep.text);
    Ok(())
}

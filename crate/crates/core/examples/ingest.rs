//! Clean a posts dump into split request files and print the corpus stats.
//!
//! cargo run --example ingest -- Posts.xml out/corpus

use std::path::PathBuf;

use unipcr::config::RunConfig;
use unipcr::pipeline;

fn main() -> unipcr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dump = PathBuf::from(args.next().expect("usage: ingest DUMP [OUT]"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "corpus".into()));
    let rep = pipeline::ingest(&RunConfig::default(), &dump, &out)?;
    println!("{}", serde_json::to_string_pretty(&rep.stats).expect("json"));
    if let Some(note) = rep.divergence {
        println!("{note}");
    }
    Ok(())
}

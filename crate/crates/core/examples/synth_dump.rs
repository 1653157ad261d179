//! Write a seeded synthetic `Posts.xml` dump.
//!
//! cargo run --example synth_dump -- work/Posts.xml 1000

use std::fs::File;
use std::io::BufWriter;

use unipcr::synth::{synth_posts, write_posts_xml, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "Posts.xml".to_string());
    let questions = args.next().map(|n| n.parse().expect("question count")).unwrap_or(1000);
    let posts = synth_posts(&SynthConfig { questions, ..Default::default() });
    if let Some(dir) = std::path::Path::new(&path).parent() {
        std::fs::create_dir_all(dir).expect("output directory");
    }
    let file = File::create(&path).expect("create dump");
    write_posts_xml(&posts, BufWriter::new(file)).expect("write dump");
    println!("wrote {} posts to {path}", posts.len());
}

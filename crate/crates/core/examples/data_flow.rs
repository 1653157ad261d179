//! Print the data-flow graph of a snippet.
//!
//! cargo run --example data_flow -- python 'x = 1
//! y = x + 2'

use unipcr::dfg::{build_dfg, Language};

fn main() {
    let mut args = std::env::args().skip(1);
    let lang: Language = args.next().as_deref().unwrap_or("python").parse().expect("language");
    let code = args.next().unwrap_or_else(|| "x = 1\ny = x + 2".to_string());
    let out = build_dfg(&code, lang);
    if let Some(d) = &out.diagnostic {
        println!("diagnostic: {d}");
    }
    let g = &out.graph;
    for &(dst, src) in &g.edges {
        let (d, s) = (&g.nodes[dst], &g.nodes[src]);
        println!("{}@{} <- {}@{}", d.name, d.token, s.name, s.token);
    }
    println!("{}", g.to_json().expect("json"));
}

//! Data-flow graphs over code tokens.
//!
//! Nodes are variable and literal occurrences, identified by their position
//! in the lexed token stream. An edge `(dst, src)` says the value at `dst`
//! comes from `src`.

mod analysis;
mod cfamily;
pub mod lexer;
mod python;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lexer::{LexError, TokKind, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    C,
    Cpp,
    Java,
    JavaScript,
    CSharp,
    Unknown,
}

impl Language {
    pub const SUPPORTED: [Language; 6] = [
        Language::Python,
        Language::C,
        Language::Cpp,
        Language::Java,
        Language::JavaScript,
        Language::CSharp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Java => "java",
            Language::JavaScript => "javascript",
            Language::CSharp => "csharp",
            Language::Unknown => "unknown",
        }
    }

    /// Language implied by a single tag, if any.
    pub fn from_tag(tag: &str) -> Option<Language> {
        let t = tag.to_lowercase();
        let lang = match t.as_str() {
            "c" => Language::C,
            "c++" | "cpp" | "c++11" | "c++14" | "c++17" | "c++20" => Language::Cpp,
            "java" | "android" => Language::Java,
            "javascript" | "js" | "node.js" | "jquery" | "typescript" | "reactjs" => Language::JavaScript,
            "c#" | "csharp" | ".net" => Language::CSharp,
            _ if t == "python" || t.starts_with("python-") || t == "django" || t == "numpy" => Language::Python,
            _ => return None,
        };
        Some(lang)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_lowercase();
        Language::SUPPORTED
            .into_iter()
            .chain([Language::Unknown])
            .find(|x| x.as_str() == l)
            .or_else(|| Language::from_tag(&l))
            .ok_or_else(|| Error::Config(format!("unknown language `{s}`")))
    }
}

/// Language of a request's code: the first tag naming a supported language,
/// otherwise a keyword heuristic over the code itself.
pub fn detect_language<S: AsRef<str>>(code: &str, tags: &[S]) -> Language {
    tags.iter()
        .find_map(|t| Language::from_tag(t.as_ref()))
        .unwrap_or_else(|| guess_language(code))
}

/// Marker-count heuristic. Ties go to the earlier language in
/// [`Language::SUPPORTED`]; code without any marker is `Unknown`.
pub fn guess_language(code: &str) -> Language {
    if code.trim().is_empty() {
        return Language::Unknown;
    }
    let markers: [(Language, &[&str]); 6] = [
        (Language::Python, &["def ", "elif ", "self.", "import ", "print(", "None", "True", "):\n", "lambda "]),
        (Language::C, &["#include <stdio.h>", "#include <stdlib.h>", "printf(", "malloc(", "free(", "struct "]),
        (Language::Cpp, &["std::", "#include <iostream>", "cout <<", "template <", "template<", "nullptr", "auto "]),
        (Language::Java, &["public class", "System.out", "public static void", "private ", "extends ", "@Override", "String[]"]),
        (Language::JavaScript, &["function ", "const ", "let ", "=>", "console.log", "document.", "var ", "==="]),
        (Language::CSharp, &["using System", "Console.Write", "namespace ", "public void", "var ", "{ get;", "async Task"]),
    ];
    let mut best = (0usize, Language::Unknown);
    for (lang, ms) in markers {
        let score: usize = ms.iter().map(|m| code.matches(m).count()).sum();
        if score > best.0 {
            best = (score, lang);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgNode {
    pub id: usize,
    pub name: String,
    /// Index of the node's token in the code token stream.
    pub token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlowGraph {
    pub nodes: Vec<DfgNode>,
    /// `(dst, src)` node ids.
    pub edges: Vec<(usize, usize)>,
    pub lang: Language,
}

impl DataFlowGraph {
    pub fn empty(lang: Language) -> Self {
        Self { nodes: Vec::new(), edges: Vec::new(), lang }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids of the nodes `id` takes its value from.
    pub fn sources(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == id).map(|e| e.1)
    }

    /// Undirected neighbourhood of each node, indexed by node id.
    pub fn neighbours(&self) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); self.nodes.len()];
        for &(d, s) in &self.edges {
            out[d].insert(s);
            out[s].insert(d);
        }
        out
    }

    /// Node-to-token alignment.
    pub fn align(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.token).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Structural checks: ids are dense and ordered by token, edges reference
    /// existing nodes and every node takes part in an edge.
    pub fn check(&self, n_tokens: usize) -> std::result::Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(format!("node {i} has id {}", n.id));
            }
            if n.token >= n_tokens {
                return Err(format!("node {i} token {} out of range", n.token));
            }
            if i > 0 && self.nodes[i - 1].token >= n.token {
                return Err(format!("node {i} is out of token order"));
            }
        }
        let mut touched = vec![false; self.nodes.len()];
        for &(d, s) in &self.edges {
            if d >= self.nodes.len() || s >= self.nodes.len() {
                return Err(format!("edge ({d}, {s}) references a missing node"));
            }
            touched[d] = true;
            touched[s] = true;
        }
        if let Some(i) = touched.iter().position(|t| !t) {
            return Err(format!("node {i} has no edge"));
        }
        Ok(())
    }
}

/// Outcome of extracting a graph from one code segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DfgOutcome {
    pub tokens: Vec<String>,
    pub graph: DataFlowGraph,
    /// Set when lexing or parsing failed and the graph was left empty.
    pub diagnostic: Option<String>,
}

/// Token stream used for alignment. Falls back to a generic lexer when the
/// language lexer rejects the code, so the stream is never empty for
/// non-blank code.
pub fn code_tokens(code: &str, lang: Language) -> Vec<String> {
    let lexed = match lang {
        Language::Unknown => Ok(lexer::lex_generic(code)),
        _ => lexer::lex(code, lang),
    };
    lexed
        .unwrap_or_else(|_| lexer::lex_generic(code))
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Build the data-flow graph of one code segment. Unsupported languages and
/// unparseable code produce an empty graph with a diagnostic.
pub fn build_dfg(code: &str, lang: Language) -> DfgOutcome {
    if lang == Language::Unknown {
        return DfgOutcome {
            tokens: code_tokens(code, lang),
            graph: DataFlowGraph::empty(lang),
            diagnostic: Some("no data-flow analysis for unknown language".into()),
        };
    }
    let tokens = match lexer::lex(code, lang) {
        Ok(t) => t,
        Err(e) => {
            return DfgOutcome {
                tokens: code_tokens(code, lang),
                graph: DataFlowGraph::empty(lang),
                diagnostic: Some(format!("lex error on line {}: {}", e.line + 1, e.message)),
            }
        }
    };
    let texts: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let analysed = match lang {
        Language::Python => python::analyse(&tokens),
        _ => cfamily::analyse(&tokens, lang),
    };
    match analysed {
        Ok(flow) => DfgOutcome {
            graph: flow.into_graph(&tokens, lang),
            tokens: texts,
            diagnostic: None,
        },
        Err(msg) => DfgOutcome {
            tokens: texts,
            graph: DataFlowGraph::empty(lang),
            diagnostic: Some(msg),
        },
    }
}

/// Separator token placed between code segments of one request.
pub const SEGMENT_SEPARATOR: &str = "[SEP]";

/// Graph of a whole request: segments are concatenated with a separator
/// token; each segment is analysed on its own and node ids and token indices
/// are offset into the combined stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestGraph {
    pub request_id: u64,
    pub tokens: Vec<String>,
    pub graph: DataFlowGraph,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

pub fn build_request_dfg<S: AsRef<str>>(request_id: u64, segments: &[S], lang: Language) -> RequestGraph {
    let mut tokens = Vec::new();
    let mut graph = DataFlowGraph::empty(lang);
    let mut diagnostics = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        if si > 0 {
            tokens.push(SEGMENT_SEPARATOR.to_string());
        }
        let out = build_dfg(seg.as_ref(), lang);
        let tok_off = tokens.len();
        let node_off = graph.nodes.len();
        graph.nodes.extend(out.graph.nodes.into_iter().map(|n| DfgNode {
            id: n.id + node_off,
            name: n.name,
            token: n.token + tok_off,
        }));
        graph
            .edges
            .extend(out.graph.edges.into_iter().map(|(d, s)| (d + node_off, s + node_off)));
        tokens.extend(out.tokens);
        if let Some(d) = out.diagnostic {
            diagnostics.push(format!("segment {si}: {d}"));
        }
    }
    RequestGraph { request_id, tokens, graph, diagnostics }
}

//! The descriptive hard prompt and assembly of the full model input.

use serde::{Deserialize, Serialize};

use crate::config::PromptConfig;
use crate::corpus::Request;
use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, MASK};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    text: String,
    n_topic_masks: usize,
    n_necessity_masks: usize,
}

impl PromptTemplate {
    pub fn new(text: &str, n_topic_masks: usize, n_necessity_masks: usize) -> Result<Self> {
        let found = text.matches(MASK).count();
        if found != n_topic_masks + n_necessity_masks {
            return Err(Error::Config(format!(
                "template has {found} {MASK} placeholders, expected {}",
                n_topic_masks + n_necessity_masks
            )));
        }
        if n_topic_masks == 0 || n_necessity_masks == 0 {
            return Err(Error::Config("template needs topic and necessity masks".into()));
        }
        Ok(Self { text: text.to_string(), n_topic_masks, n_necessity_masks })
    }

    pub fn from_config(cfg: &PromptConfig) -> Result<Self> {
        Self::new(&cfg.template, cfg.n_topic_masks, cfg.n_necessity_masks)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn n_topic_masks(&self) -> usize {
        self.n_topic_masks
    }

    pub fn n_necessity_masks(&self) -> usize {
        self.n_necessity_masks
    }

    pub fn n_masks(&self) -> usize {
        self.n_topic_masks + self.n_necessity_masks
    }
}

/// Rendered text: template, then title, then description.
pub fn render_text(request: &Request, template: &PromptTemplate) -> String {
    let mut parts = vec![template.text().to_string()];
    for p in [request.title.trim(), request.description.trim()] {
        if !p.is_empty() {
            parts.push(p.to_string());
        }
    }
    parts.join(" ")
}

/// Half-open range of sequence positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Spans {
    pub template: Span,
    pub title: Span,
    pub description: Span,
    pub code: Span,
}

/// Tokenized prompt before the code region is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptedInput {
    pub request_id: u64,
    pub text: String,
    /// `[CLS]`, template, title and description, untruncated.
    pub ids: Vec<u32>,
    pub spans: Spans,
    pub mask_positions: Vec<usize>,
    pub n_topic_masks: usize,
}

/// Render and tokenize a request. Special tokens typed by users are
/// replaced by `[UNK]` so only template masks are mask tokens.
pub fn render_template(request: &Request, template: &PromptTemplate, tok: &Tokenizer) -> PromptedInput {
    let scrub = |ids: Vec<u32>| -> Vec<u32> {
        ids.into_iter()
            .map(|id| if tok.is_special(id) { tok.unk_id() } else { id })
            .collect()
    };
    let template_ids = tok.encode(template.text());
    let title_ids = scrub(tok.encode(&request.title));
    let desc_ids = scrub(tok.encode(&request.description));

    let mut ids = vec![tok.cls_id()];
    let t0 = ids.len();
    ids.extend(&template_ids);
    let t1 = ids.len();
    ids.extend(&title_ids);
    let t2 = ids.len();
    ids.extend(&desc_ids);
    let t3 = ids.len();
    let mask_positions = (t0..t1).filter(|&i| ids[i] == tok.mask_id()).collect();
    PromptedInput {
        request_id: request.id,
        text: render_text(request, template),
        ids,
        spans: Spans {
            template: Span { start: t0, end: t1 },
            title: Span { start: t1, end: t2 },
            description: Span { start: t2, end: t3 },
            code: Span { start: t3, end: t3 },
        },
        mask_positions,
        n_topic_masks: template.n_topic_masks(),
    }
}

/// One position of the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Token(u32),
    /// Row of the shared prefix matrix.
    Prefix(usize),
    /// Frozen vector of the request's graph node with this id.
    Graph(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub request_id: u64,
    pub slots: Vec<Slot>,
    /// Topic masks first, then necessity masks.
    pub mask_positions: Vec<usize>,
    pub n_topic_masks: usize,
    pub spans: Spans,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn topic_positions(&self) -> &[usize] {
        &self.mask_positions[..self.n_topic_masks]
    }

    pub fn necessity_positions(&self) -> &[usize] {
        &self.mask_positions[self.n_topic_masks..]
    }

    /// Graph node ids that survived truncation, in slot order.
    pub fn graph_nodes(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Graph(n) => Some(*n),
                _ => None,
            })
            .collect()
    }

    /// Mask positions recovered by scanning the token slots.
    pub fn scan_masks(&self, mask_id: u32) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Slot::Token(mask_id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Lay out `[CLS] template title description prefix graph` within the
/// budget. The title is capped at its own budget; the description tail is
/// cut first and graph slots only once the description is gone.
pub fn assemble_input(prompted: &PromptedInput, prefix_len: usize, graph_nodes: &[usize], cfg: &PromptConfig) -> Result<ModelInput> {
    let s = &prompted.spans;
    let title_len = s.title.len().min(cfg.title_budget);
    let fixed = s.template.end + title_len;
    if prefix_len > cfg.code_budget {
        return Err(Error::Config(format!(
            "prefix length {prefix_len} exceeds the code budget {}",
            cfg.code_budget
        )));
    }
    if fixed + prefix_len > cfg.budget {
        return Err(Error::Config(format!(
            "budget {} cannot hold the template, title and {prefix_len} prefix slots ({} needed)",
            cfg.budget,
            fixed + prefix_len
        )));
    }
    let room = cfg.budget - fixed - prefix_len;
    let graph_cap = (cfg.code_budget - prefix_len).min(room);
    let n_graph = graph_nodes.len().min(graph_cap);
    let n_desc = s.description.len().min(room - n_graph);

    let mut slots: Vec<Slot> = prompted.ids[..s.template.end + title_len]
        .iter()
        .map(|&id| Slot::Token(id))
        .collect();
    let title = Span { start: s.title.start, end: s.title.start + title_len };
    let d0 = slots.len();
    slots.extend(
        prompted.ids[s.description.start..s.description.start + n_desc]
            .iter()
            .map(|&id| Slot::Token(id)),
    );
    let c0 = slots.len();
    slots.extend((0..prefix_len).map(Slot::Prefix));
    slots.extend(graph_nodes[..n_graph].iter().map(|&n| Slot::Graph(n)));
    Ok(ModelInput {
        request_id: prompted.request_id,
        mask_positions: prompted.mask_positions.clone(),
        n_topic_masks: prompted.n_topic_masks,
        spans: Spans {
            template: s.template,
            title,
            description: Span { start: d0, end: c0 },
            code: Span { start: c0, end: slots.len() },
        },
        slots,
    })
}

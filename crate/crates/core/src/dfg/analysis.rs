//! Def-use machinery shared by the language front ends.

use std::collections::{BTreeMap, BTreeSet};

use super::{DataFlowGraph, DfgNode, Language, TokKind, Token};
use super::lexer::is_literal_word;

/// Reaching definitions: variable name to defining token indices.
pub(super) type State = BTreeMap<String, BTreeSet<usize>>;

pub(super) fn merge(states: impl IntoIterator<Item = State>) -> State {
    let mut out = State::new();
    for s in states {
        for (k, v) in s {
            out.entry(k).or_default().extend(v);
        }
    }
    out
}

/// Token-level edges collected during analysis.
#[derive(Debug, Default)]
pub(super) struct Flow {
    edges: BTreeSet<(usize, usize)>,
}

impl Flow {
    /// Keep only tokens that take part in an edge and renumber them in token order.
    pub(super) fn into_graph(self, tokens: &[Token], lang: Language) -> DataFlowGraph {
        let used: BTreeSet<usize> = self.edges.iter().flat_map(|&(d, s)| [d, s]).collect();
        let id_of: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let nodes = used
            .iter()
            .map(|&t| DfgNode { id: id_of[&t], name: tokens[t].text.clone(), token: t })
            .collect();
        let edges = self.edges.iter().map(|(d, s)| (id_of[d], id_of[s])).collect();
        DataFlowGraph { nodes, edges, lang }
    }
}

pub(super) struct Analyzer<'a> {
    pub toks: &'a [Token],
    pub lang: Language,
    /// For every opening bracket, the index of its partner.
    close: Vec<Option<usize>>,
    pub flow: Flow,
}

impl<'a> Analyzer<'a> {
    pub fn new(toks: &'a [Token], lang: Language) -> Result<Self, String> {
        let mut close = vec![None; toks.len()];
        let mut stack: Vec<usize> = Vec::new();
        for (i, t) in toks.iter().enumerate() {
            if t.kind != TokKind::Punct {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => stack.push(i),
                ")" | "]" | "}" => {
                    let want = match t.text.as_str() {
                        ")" => "(",
                        "]" => "[",
                        _ => "{",
                    };
                    match stack.pop() {
                        Some(o) if toks[o].text == want => close[o] = Some(i),
                        _ => return Err(format!("unbalanced `{}` on line {}", t.text, t.line + 1)),
                    }
                }
                _ => {}
            }
        }
        if let Some(&o) = stack.last() {
            return Err(format!("unclosed `{}` on line {}", toks[o].text, toks[o].line + 1));
        }
        Ok(Self { toks, lang, close, flow: Flow::default() })
    }

    pub fn python(&self) -> bool {
        self.lang == Language::Python
    }

    pub fn text(&self, i: usize) -> &str {
        self.toks.get(i).map(|t| t.text.as_str()).unwrap_or("")
    }

    pub fn is(&self, i: usize, s: &str) -> bool {
        self.toks.get(i).is_some_and(|t| t.text == s && t.kind != TokKind::Str)
    }

    pub fn kind(&self, i: usize) -> Option<TokKind> {
        self.toks.get(i).map(|t| t.kind)
    }

    pub fn close_of(&self, i: usize) -> Option<usize> {
        self.close.get(i).copied().flatten()
    }

    /// Index just past the token or bracket group starting at `i`.
    pub fn skip(&self, i: usize) -> usize {
        self.close_of(i).map_or(i + 1, |c| c + 1)
    }

    /// Positions in `lo..hi` outside nested brackets. Opening brackets are
    /// reported, their contents and partners are not.
    pub fn top(&self, lo: usize, hi: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = lo;
        while i < hi {
            out.push(i);
            i = self.skip(i);
        }
        out
    }

    pub fn find_top(&self, lo: usize, hi: usize, s: &str) -> Option<usize> {
        self.top(lo, hi).into_iter().find(|&i| self.is(i, s))
    }

    pub fn find_top_any(&self, lo: usize, hi: usize, set: &[&str]) -> Option<usize> {
        self.top(lo, hi).into_iter().find(|&i| set.iter().any(|s| self.is(i, s)))
    }

    /// Split `lo..hi` at top-level `sep` tokens, dropping empty pieces.
    pub fn split_top(&self, lo: usize, hi: usize, sep: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = lo;
        for i in self.top(lo, hi) {
            if self.is(i, sep) {
                if i > start {
                    out.push((start, i));
                }
                start = i + 1;
            }
        }
        if hi > start {
            out.push((start, hi));
        }
        out
    }

    pub fn is_var(&self, i: usize) -> bool {
        self.kind(i) == Some(TokKind::Ident) && !is_literal_word(self.lang, self.text(i))
    }

    /// First plain variable at the top level of `lo..hi`.
    pub fn first_var(&self, lo: usize, hi: usize) -> Option<usize> {
        self.top(lo, hi).into_iter().find(|&i| self.is_var(i) && !self.is_member(i))
    }

    /// `i` names a member or namespace-qualified item rather than a variable.
    pub fn is_member(&self, i: usize) -> bool {
        i > 0 && [".", "->", "?.", "::"].iter().any(|s| self.is(i - 1, s))
    }

    pub fn use_var(&mut self, i: usize, state: &State) -> usize {
        if let Some(defs) = state.get(self.text(i)) {
            for &d in defs {
                self.flow.edges.insert((i, d));
            }
        }
        i
    }

    /// Record a definition at token `i`. Partial updates keep the previous
    /// definitions as sources.
    pub fn define(&mut self, i: usize, sources: &[usize], keep_prev: bool, state: &mut State) {
        for &s in sources {
            self.flow.edges.insert((i, s));
        }
        let name = self.text(i).to_string();
        if keep_prev {
            if let Some(prev) = state.get(&name) {
                for &d in prev {
                    self.flow.edges.insert((i, d));
                }
            }
        }
        state.insert(name, BTreeSet::from([i]));
    }

    /// Value sources of an expression.
    pub fn expr(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        if lo >= hi {
            return Vec::new();
        }
        if self.python() {
            self.py_expr(lo, hi, state)
        } else {
            self.c_expr(lo, hi, state)
        }
    }

    pub fn expr_list(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        let mut out = Vec::new();
        for (a, b) in self.split_top(lo, hi, ",") {
            out.extend(self.expr(a, b, state));
        }
        out
    }

    /// Uses inside every bracket group of `lo..hi` (indices of a subscript target, call arguments).
    pub fn group_uses(&mut self, lo: usize, hi: usize, state: &mut State) {
        for i in self.top(lo, hi) {
            if let Some(c) = self.close_of(i) {
                self.group(i, c, state);
            }
        }
    }

    pub fn group(&mut self, open: usize, close: usize, state: &mut State) -> Vec<usize> {
        let (lo, hi) = (open + 1, close);
        if self.python() {
            if self
                .top(lo, hi)
                .into_iter()
                .any(|i| self.is(i, "for") && self.kind(i) == Some(TokKind::Keyword))
            {
                return self.py_comprehension(lo, hi, state);
            }
        } else if self.is(open, "{") && self.find_top(lo, hi, ";").is_some() {
            let mut inner = state.clone();
            self.c_stmts(lo, hi, &mut inner);
            return Vec::new();
        }
        self.expr_list(lo, hi, state)
    }

    /// Operand scan: literals and variable uses in `lo..hi`.
    pub fn scan(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        let python = self.python();
        let mut out = Vec::new();
        let mut i = lo;
        while i < hi {
            if let Some(c) = self.close_of(i) {
                out.extend(self.group(i, c, state));
                i = c + 1;
                continue;
            }
            match self.kind(i) {
                Some(TokKind::Number) | Some(TokKind::Str) => out.push(i),
                Some(TokKind::Keyword) if !python && self.is(i, "new") => {
                    i += 1;
                    while i < hi && self.close_of(i).is_none() && !self.is(i, ";") {
                        i += 1;
                    }
                    continue;
                }
                Some(TokKind::Ident) => {
                    let next_is = |s: &str| i + 1 < hi && self.is(i + 1, s);
                    let qualified = self.is_member(i) || next_is("::");
                    let call = next_is("(") && !state.contains_key(self.text(i));
                    let object_key = !python && i > 0 && (self.is(i - 1, "{") || self.is(i - 1, ",")) && next_is(":");
                    if is_literal_word(self.lang, self.text(i)) {
                        out.push(i);
                    } else if qualified || call || object_key {
                        // not a variable occurrence
                    } else if !python && ((i + 1 < hi && self.is_step(i + 1)) || (i > lo && self.is_step(i - 1))) {
                        self.define(i, &[], true, state);
                        out.push(i);
                    } else {
                        out.push(self.use_var(i, state));
                    }
                }
                _ => {}
            }
            i += 1;
        }
        out
    }

    fn is_step(&self, i: usize) -> bool {
        self.is(i, "++") || self.is(i, "--")
    }
}

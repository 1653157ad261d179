//! Python front end: logical lines, indentation blocks and statements.

use super::analysis::{merge, Analyzer, Flow, State};
use super::{Language, TokKind, Token};

#[derive(Debug, Clone, Copy)]
struct Line {
    indent: usize,
    lo: usize,
    hi: usize,
}

struct Clause<'l> {
    lo: usize,
    hi: usize,
    colon: usize,
    body: &'l [Line],
}

const AUG_OPS: &[&str] = &[
    "+=", "-=", "*=", "/=", "//=", "%=", "**=", ">>=", "<<=", "&=", "|=", "^=", "@=",
];

pub(super) fn analyse(tokens: &[Token]) -> Result<Flow, String> {
    let mut a = Analyzer::new(tokens, Language::Python)?;
    let lines = logical_lines(tokens);
    let mut state = State::new();
    a.py_block(&lines, &mut state);
    Ok(a.flow)
}

fn logical_lines(toks: &[Token]) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut start = 0;
    let mut depth = 0i32;
    for i in 0..toks.len() {
        if i > start && depth <= 0 && toks[i].line != toks[i - 1].line && !toks[i - 1].continued {
            lines.push(Line { indent: toks[start].indent, lo: start, hi: i });
            start = i;
        }
        if toks[i].kind == TokKind::Punct {
            match toks[i].text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                _ => {}
            }
        }
    }
    if start < toks.len() {
        lines.push(Line { indent: toks[start].indent, lo: start, hi: toks.len() });
    }
    lines
}

/// End (exclusive) of the indented body following line `i`.
fn body_end(lines: &[Line], i: usize) -> usize {
    let mut j = i + 1;
    while j < lines.len() && lines[j].indent > lines[i].indent {
        j += 1;
    }
    j
}

impl Analyzer<'_> {
    fn py_block(&mut self, lines: &[Line], state: &mut State) {
        let mut i = 0;
        while i < lines.len() {
            let line = lines[i];
            let end = body_end(lines, i);
            let Some(colon) = self.header(line) else {
                self.py_simple_line(line.lo, line.hi, state);
                self.py_block(&lines[i + 1..end], state);
                i = end;
                continue;
            };
            let mut clauses = vec![Clause { lo: line.lo, hi: line.hi, colon, body: &lines[i + 1..end] }];
            i = end;
            let kw = self.keyword_at(line.lo);
            let continuations: &[&str] = match self.text(kw) {
                "if" => &["elif", "else"],
                "for" | "while" => &["else"],
                "try" => &["except", "else", "finally"],
                _ => &[],
            };
            while i < lines.len()
                && lines[i].indent == line.indent
                && continuations.contains(&self.text(lines[i].lo))
            {
                let Some(c) = self.header(lines[i]) else { break };
                let e = body_end(lines, i);
                clauses.push(Clause { lo: lines[i].lo, hi: lines[i].hi, colon: c, body: &lines[i + 1..e] });
                i = e;
            }
            self.py_compound(&clauses, state);
        }
    }

    fn keyword_at(&self, lo: usize) -> usize {
        if self.is(lo, "async") {
            lo + 1
        } else {
            lo
        }
    }

    /// Colon position when the line opens a compound statement.
    fn header(&self, line: Line) -> Option<usize> {
        let kw = self.keyword_at(line.lo);
        let opens = match self.kind(kw) {
            Some(TokKind::Keyword) => matches!(
                self.text(kw),
                "if" | "elif" | "else" | "for" | "while" | "try" | "except" | "finally" | "with" | "def" | "class"
            ),
            Some(TokKind::Ident) => {
                matches!(self.text(kw), "match" | "case") && kw + 1 < line.hi && !self.is(kw + 1, "=")
            }
            _ => false,
        };
        if !opens {
            return None;
        }
        self.find_top(kw + 1, line.hi, ":")
    }

    fn run_body(&mut self, cl: &Clause, state: &mut State) {
        if cl.colon + 1 < cl.hi {
            self.py_simple_line(cl.colon + 1, cl.hi, state);
        }
        self.py_block(cl.body, state);
    }

    fn py_compound(&mut self, clauses: &[Clause], state: &mut State) {
        let c0 = &clauses[0];
        let kw = self.keyword_at(c0.lo);
        match self.text(kw) {
            "if" => {
                let mut cur = state.clone();
                let mut outs = Vec::new();
                let mut has_else = false;
                for cl in clauses {
                    if self.is(cl.lo, "else") {
                        has_else = true;
                    } else {
                        let k = self.keyword_at(cl.lo);
                        self.expr(k + 1, cl.colon, &mut cur);
                    }
                    let mut s = cur.clone();
                    self.run_body(cl, &mut s);
                    outs.push(s);
                }
                if !has_else {
                    outs.push(cur);
                }
                *state = merge(outs);
            }
            "while" => {
                let entry = state.clone();
                let mut cur = state.clone();
                for _ in 0..2 {
                    self.expr(kw + 1, c0.colon, &mut cur);
                    self.run_body(c0, &mut cur);
                    cur = merge([entry.clone(), cur]);
                }
                for cl in &clauses[1..] {
                    self.run_body(cl, &mut cur);
                }
                *state = cur;
            }
            "for" => {
                let Some(in_pos) = self.find_top(kw + 1, c0.colon, "in") else {
                    return self.py_generic(c0, kw, state);
                };
                let src = self.expr(in_pos + 1, c0.colon, state);
                let entry = state.clone();
                let mut cur = state.clone();
                for _ in 0..2 {
                    self.py_targets(kw + 1, in_pos, &src, false, &mut cur);
                    self.run_body(c0, &mut cur);
                    cur = merge([entry.clone(), cur]);
                }
                for cl in &clauses[1..] {
                    self.run_body(cl, &mut cur);
                }
                *state = cur;
            }
            "try" => {
                let entry = state.clone();
                let mut body = state.clone();
                self.run_body(c0, &mut body);
                let mut normal = body.clone();
                let mut outs = Vec::new();
                let mut finally = None;
                for cl in &clauses[1..] {
                    match self.text(cl.lo) {
                        "except" => {
                            let mut s = merge([entry.clone(), body.clone()]);
                            match self.find_top(cl.lo + 1, cl.colon, "as") {
                                Some(p) => {
                                    self.expr(cl.lo + 1, p, &mut s);
                                    if self.is_var(p + 1) {
                                        self.define(p + 1, &[], false, &mut s);
                                    }
                                }
                                None => {
                                    self.expr(cl.lo + 1, cl.colon, &mut s);
                                }
                            }
                            self.run_body(cl, &mut s);
                            outs.push(s);
                        }
                        "else" => self.run_body(cl, &mut normal),
                        _ => finally = Some(cl),
                    }
                }
                outs.insert(0, normal);
                let mut merged = merge(outs);
                if let Some(cl) = finally {
                    self.run_body(cl, &mut merged);
                }
                *state = merged;
            }
            "with" => {
                for (a, b) in self.split_top(kw + 1, c0.colon, ",") {
                    match self.find_top(a, b, "as") {
                        Some(p) => {
                            let src = self.expr(a, p, state);
                            self.py_targets(p + 1, b, &src, false, state);
                        }
                        None => {
                            self.expr(a, b, state);
                        }
                    }
                }
                self.run_body(c0, state);
            }
            "def" => {
                let mut inner = state.clone();
                if self.is(kw + 2, "(") {
                    let close = self.close_of(kw + 2).unwrap_or(kw + 2);
                    for (a, b) in self.split_top(kw + 3, close, ",") {
                        let eq = self.find_top(a, b, "=");
                        let src = match eq {
                            Some(e) => self.expr(e + 1, b, state),
                            None => Vec::new(),
                        };
                        if let Some(p) = (a..eq.unwrap_or(b)).find(|&i| self.is_var(i)) {
                            self.define(p, &src, false, &mut inner);
                        }
                    }
                }
                self.run_body(c0, &mut inner);
            }
            "class" => {
                if self.is(kw + 2, "(") {
                    if let Some(close) = self.close_of(kw + 2) {
                        self.expr_list(kw + 3, close, state);
                    }
                }
                let mut inner = state.clone();
                self.run_body(c0, &mut inner);
            }
            _ => self.py_generic(c0, kw, state),
        }
    }

    /// Header expression evaluated, body possibly executed.
    fn py_generic(&mut self, cl: &Clause, kw: usize, state: &mut State) {
        self.expr(kw + 1, cl.colon, state);
        let mut s = state.clone();
        self.run_body(cl, &mut s);
        *state = merge([state.clone(), s]);
    }

    fn py_simple_line(&mut self, lo: usize, hi: usize, state: &mut State) {
        for (a, b) in self.split_top(lo, hi, ";") {
            self.py_stmt(a, b, state);
        }
    }

    fn py_stmt(&mut self, lo: usize, hi: usize, state: &mut State) {
        if self.kind(lo) == Some(TokKind::Keyword) {
            match self.text(lo) {
                "import" | "from" | "global" | "nonlocal" | "pass" | "break" | "continue" => return,
                "return" | "yield" | "assert" | "raise" | "del" | "await" | "print" => {
                    self.expr_list(lo + 1, hi, state);
                    return;
                }
                _ => {}
            }
        }
        if self.is(lo, "@") {
            self.expr(lo + 1, hi, state);
            return;
        }
        if let Some(p) = self.find_top_any(lo, hi, AUG_OPS) {
            let src = self.expr(p + 1, hi, state);
            self.py_targets(lo, p, &src, true, state);
            return;
        }
        let eqs: Vec<usize> = self.top(lo, hi).into_iter().filter(|&i| self.is(i, "=")).collect();
        let Some(&last) = eqs.last() else {
            if self.find_top(lo, hi, ":").is_none() {
                self.expr(lo, hi, state);
            }
            return;
        };
        let parts = self.tuple_parts(last + 1, hi);
        let part_src: Vec<Vec<usize>> = parts.iter().map(|&(a, b)| self.expr(a, b, state)).collect();
        let all: Vec<usize> = part_src.concat();
        let mut start = lo;
        for &eq in &eqs {
            let end = self.find_top(start, eq, ":").unwrap_or(eq);
            let targets = self.tuple_parts(start, end);
            if targets.len() > 1 && targets.len() == part_src.len() {
                for (&(a, b), src) in targets.iter().zip(&part_src) {
                    self.py_target_one(a, b, src, false, state);
                }
            } else {
                self.py_targets(start, end, &all, false, state);
            }
            start = eq + 1;
        }
    }

    /// Elements of a (possibly parenthesized) comma list.
    fn tuple_parts(&self, lo: usize, hi: usize) -> Vec<(usize, usize)> {
        if hi > lo && (self.is(lo, "(") || self.is(lo, "[")) && self.close_of(lo) == Some(hi - 1) {
            let inner = self.split_top(lo + 1, hi - 1, ",");
            if inner.len() > 1 {
                return inner;
            }
        }
        self.split_top(lo, hi, ",")
    }

    fn py_targets(&mut self, lo: usize, hi: usize, src: &[usize], keep_prev: bool, state: &mut State) -> Vec<usize> {
        let mut out = Vec::new();
        for (a, b) in self.tuple_parts(lo, hi) {
            out.extend(self.py_target_one(a, b, src, keep_prev, state));
        }
        out
    }

    fn py_target_one(&mut self, lo: usize, hi: usize, src: &[usize], keep_prev: bool, state: &mut State) -> Vec<usize> {
        let lo = if self.is(lo, "*") { lo + 1 } else { lo };
        if lo >= hi {
            return Vec::new();
        }
        if hi - lo == 1 && self.is_var(lo) {
            self.define(lo, src, keep_prev, state);
            return vec![lo];
        }
        if (self.is(lo, "(") || self.is(lo, "[")) && self.close_of(lo) == Some(hi - 1) {
            return self.py_targets(lo + 1, hi - 1, src, keep_prev, state);
        }
        // attribute or subscript target: a partial update of its base
        self.group_uses(lo, hi, state);
        match self.first_var(lo, hi) {
            Some(base) => {
                self.define(base, src, true, state);
                vec![base]
            }
            None => Vec::new(),
        }
    }

    pub(super) fn py_expr(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        if self.is(lo, "lambda") {
            let colon = self.find_top(lo, hi, ":").unwrap_or(hi);
            let mut inner = state.clone();
            for (a, b) in self.split_top(lo + 1, colon, ",") {
                if let Some(p) = (a..b).find(|&i| self.is_var(i)) {
                    self.define(p, &[], false, &mut inner);
                }
            }
            self.py_expr(colon + 1, hi, &mut inner);
            return Vec::new();
        }
        if let Some(p) = self.find_top(lo, hi, ":=") {
            let src = self.py_expr(p + 1, hi, state);
            return match self.first_var(lo, p) {
                Some(t) => {
                    self.define(t, &src, false, state);
                    vec![t]
                }
                None => src,
            };
        }
        // keyword argument or parameter default
        if let Some(p) = self.find_top(lo, hi, "=") {
            return self.py_expr(p + 1, hi, state);
        }
        self.scan(lo, hi, state)
    }

    pub(super) fn py_comprehension(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        let fors: Vec<usize> = self
            .top(lo, hi)
            .into_iter()
            .filter(|&i| self.is(i, "for") && self.kind(i) == Some(TokKind::Keyword))
            .collect();
        let mut inner = state.clone();
        for (k, &f) in fors.iter().enumerate() {
            let end = fors.get(k + 1).copied().unwrap_or(hi);
            let Some(in_pos) = self.find_top(f + 1, end, "in") else { continue };
            let ifs: Vec<usize> = self
                .top(in_pos + 1, end)
                .into_iter()
                .filter(|&i| self.is(i, "if"))
                .collect();
            let iter_end = ifs.first().copied().unwrap_or(end);
            let src = self.py_expr(in_pos + 1, iter_end, &mut inner);
            self.py_targets(f + 1, in_pos, &src, false, &mut inner);
            for (j, &c) in ifs.iter().enumerate() {
                let c_end = ifs.get(j + 1).copied().unwrap_or(end);
                self.py_expr(c + 1, c_end, &mut inner);
            }
        }
        let elem_end = fors.first().copied().unwrap_or(hi);
        let elem_end = if elem_end > lo && self.is(elem_end - 1, "async") { elem_end - 1 } else { elem_end };
        self.py_expr(lo, elem_end, &mut inner)
    }
}

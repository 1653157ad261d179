//! Front end for C, C++, Java, JavaScript and C#: brace blocks and statements.

use super::analysis::{merge, Analyzer, Flow, State};
use super::{Language, TokKind, Token};

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
];

/// Keywords that may start an expression rather than a declaration.
const EXPR_KEYWORDS: &[&str] = &[
    "this", "super", "new", "delete", "typeof", "sizeof", "await", "yield", "throw", "return", "in", "of", "is",
    "as", "instanceof",
];

const TYPE_DEF_KEYWORDS: &[&str] = &["class", "struct", "interface", "enum", "namespace", "union"];

const TYPE_PUNCT: &[&str] = &["<", ">", ">>", "::", "*", "&", "&&", ".", "?"];

pub(super) fn analyse(tokens: &[Token], lang: Language) -> Result<Flow, String> {
    let mut a = Analyzer::new(tokens, lang)?;
    let mut state = State::new();
    a.c_stmts(0, tokens.len(), &mut state);
    Ok(a.flow)
}

impl Analyzer<'_> {
    pub(super) fn c_stmts(&mut self, lo: usize, hi: usize, state: &mut State) {
        let mut i = lo;
        while i < hi {
            let next = self.c_stmt(i, hi, state);
            i = next.max(i + 1);
        }
    }

    fn line_of(&self, i: usize) -> usize {
        self.toks[i].line
    }

    fn line_start(&self, i: usize) -> bool {
        i == 0 || self.line_of(i - 1) != self.line_of(i)
    }

    fn paren_after(&self, i: usize) -> Option<usize> {
        if self.is(i, "(") {
            self.close_of(i)
        } else {
            None
        }
    }

    /// Parse one statement starting at `i`; returns the index after it.
    fn c_stmt(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        if i >= hi {
            return hi;
        }
        if self.is(i, "#") && self.line_start(i) {
            let mut j = i;
            let mut line = self.line_of(i);
            while j < hi && self.line_of(j) == line {
                if self.is(j, "\\") {
                    line += 1;
                }
                j += 1;
            }
            return j;
        }
        let kw = matches!(self.kind(i), Some(TokKind::Keyword) | Some(TokKind::Punct));
        if kw {
            match self.text(i) {
                "{" => {
                    let c = self.close_of(i).unwrap_or(hi);
                    self.c_stmts(i + 1, c, state);
                    return c + 1;
                }
                ";" | "else" => return i + 1,
                "if" => return self.c_if(i, hi, state),
                "while" => return self.c_while(i, hi, state),
                "do" => return self.c_do(i, hi, state),
                "for" | "foreach" => return self.c_for(i, hi, state),
                "switch" => {
                    if let Some(c) = self.paren_after(i + 1) {
                        self.expr_list(i + 2, c, state);
                        let mut s = state.clone();
                        let end = self.c_stmt(c + 1, hi, &mut s);
                        *state = merge([state.clone(), s]);
                        return end;
                    }
                }
                "try" => return self.c_try(i, hi, state),
                "using" if self.is(i + 1, "(") => {
                    let c = self.close_of(i + 1).unwrap_or(hi);
                    self.c_simple(i + 2, c, state);
                    return self.c_stmt(c + 1, hi, state);
                }
                "return" | "throw" | "yield" => {
                    let e = self.stmt_end(i + 1, hi);
                    self.expr_list(i + 1, e, state);
                    return e + 1;
                }
                "break" | "continue" | "goto" | "import" | "package" | "using" | "typedef" | "export"
                    if !(self.is(i, "export") && self.kind(i + 1) == Some(TokKind::Keyword)) =>
                {
                    return self.stmt_end(i + 1, hi) + 1;
                }
                "case" => {
                    let e = self.find_top(i + 1, hi, ":").unwrap_or(hi);
                    self.expr(i + 1, e, state);
                    return e + 1;
                }
                "default" if self.is(i + 1, ":") => return i + 2,
                "@" => {
                    let mut j = i + 1;
                    while j < hi && (self.kind(j) == Some(TokKind::Ident) || self.is(j, ".")) {
                        j += 1;
                    }
                    return if self.is(j, "(") { self.skip(j) } else { j };
                }
                _ => {}
            }
        }
        // labels and access specifiers
        if self.line_start(i)
            && matches!(self.kind(i), Some(TokKind::Ident) | Some(TokKind::Keyword))
            && self.is(i + 1, ":")
        {
            return i + 2;
        }
        if let Some(end) = self.c_type_def(i, hi, state) {
            return end;
        }
        if let Some(end) = self.c_function(i, hi, state) {
            return end;
        }
        let e = self.stmt_end(i, hi);
        self.c_simple(i, e, state);
        if e < hi && self.is(e, ";") {
            e + 1
        } else {
            e
        }
    }

    /// End of a simple statement: the next top-level `;`, or a line break
    /// that cannot continue the statement.
    fn stmt_end(&self, i: usize, hi: usize) -> usize {
        let mut brace_close_line: Option<usize> = None;
        let mut prev: Option<usize> = None;
        for q in self.top(i, hi) {
            if self.is(q, ";") {
                return q;
            }
            if let Some(line) = brace_close_line {
                if self.line_of(q) > line {
                    return q;
                }
            }
            if let Some(p) = prev {
                if self.lang == Language::JavaScript && self.asi_break(p, q) {
                    return q;
                }
            }
            brace_close_line = if self.is(q, "{") { self.close_of(q).map(|c| self.line_of(c)) } else { None };
            prev = Some(q);
        }
        hi
    }

    fn asi_break(&self, prev: usize, q: usize) -> bool {
        let last = self.close_of(prev).unwrap_or(prev);
        if self.line_of(q) <= self.line_of(last) {
            return false;
        }
        let ends_value = matches!(self.kind(last), Some(TokKind::Ident) | Some(TokKind::Number) | Some(TokKind::Str))
            || self.is(last, ")")
            || self.is(last, "]");
        let starts_stmt = match self.kind(q) {
            Some(TokKind::Ident) => true,
            Some(TokKind::Keyword) => !EXPR_KEYWORDS.contains(&self.text(q)),
            _ => false,
        };
        ends_value && starts_stmt
    }

    fn c_if(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        let Some(c) = self.paren_after(i + 1) else {
            return i + 1;
        };
        self.c_cond(i + 2, c, state);
        let mut then_s = state.clone();
        let after = self.c_stmt(c + 1, hi, &mut then_s);
        if after < hi && self.is(after, "else") {
            let mut else_s = state.clone();
            let end = self.c_stmt(after + 1, hi, &mut else_s);
            *state = merge([then_s, else_s]);
            end
        } else {
            *state = merge([state.clone(), then_s]);
            after
        }
    }

    fn c_while(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        let Some(c) = self.paren_after(i + 1) else {
            return i + 1;
        };
        let entry = state.clone();
        let mut cur = state.clone();
        let mut end = c + 1;
        for _ in 0..2 {
            self.c_cond(i + 2, c, &mut cur);
            end = self.c_stmt(c + 1, hi, &mut cur);
            cur = merge([entry.clone(), cur]);
        }
        *state = cur;
        end
    }

    fn c_do(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        let entry = state.clone();
        let mut cur = state.clone();
        let mut end = i + 1;
        for _ in 0..2 {
            let after = self.c_stmt(i + 1, hi, &mut cur);
            end = after;
            if self.is(after, "while") {
                if let Some(c) = self.paren_after(after + 1) {
                    self.c_cond(after + 2, c, &mut cur);
                    end = if self.is(c + 1, ";") { c + 2 } else { c + 1 };
                }
            }
            cur = merge([entry.clone(), cur]);
        }
        *state = cur;
        end
    }

    fn c_for(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        let Some(c) = self.paren_after(i + 1) else {
            return i + 1;
        };
        let (lo, h) = (i + 2, c);
        let semis: Vec<usize> = self.top(lo, h).into_iter().filter(|&q| self.is(q, ";")).collect();
        let entry;
        let mut cur;
        let mut end = c + 1;
        if semis.len() >= 2 {
            self.c_simple(lo, semis[0], state);
            entry = state.clone();
            cur = state.clone();
            for _ in 0..2 {
                self.c_cond(semis[0] + 1, semis[1], &mut cur);
                end = self.c_stmt(c + 1, hi, &mut cur);
                self.expr_list(semis[1] + 1, h, &mut cur);
                cur = merge([entry.clone(), cur]);
            }
        } else {
            let sep = self.find_top_any(lo, h, &[":", "in", "of"]);
            let src = match sep {
                Some(p) => self.expr(p + 1, h, state),
                None => {
                    self.c_simple(lo, h, state);
                    Vec::new()
                }
            };
            entry = state.clone();
            cur = state.clone();
            for _ in 0..2 {
                if let Some(p) = sep {
                    self.c_target(lo, p, &src, false, true, &mut cur);
                }
                end = self.c_stmt(c + 1, hi, &mut cur);
                cur = merge([entry.clone(), cur]);
            }
        }
        *state = cur;
        end
    }

    fn c_try(&mut self, i: usize, hi: usize, state: &mut State) -> usize {
        let mut j = i + 1;
        if let Some(c) = self.paren_after(j) {
            for (a, b) in self.split_top(j + 1, c, ";") {
                self.c_simple(a, b, state);
            }
            j = c + 1;
        }
        let entry = state.clone();
        let mut body = state.clone();
        j = self.c_stmt(j, hi, &mut body);
        let mut outs = vec![body.clone()];
        loop {
            if self.is(j, "catch") {
                let mut s = merge([entry.clone(), body.clone()]);
                j += 1;
                if let Some(c) = self.paren_after(j) {
                    if let Some(v) = self.decl_name(j + 1, c) {
                        self.define(v, &[], false, &mut s);
                    }
                    j = c + 1;
                }
                if self.is(j, "when") {
                    j = self.skip(j + 1);
                }
                j = self.c_stmt(j, hi, &mut s);
                outs.push(s);
            } else if self.is(j, "finally") {
                let mut m = merge(outs);
                j = self.c_stmt(j + 1, hi, &mut m);
                *state = m;
                return j;
            } else {
                break;
            }
        }
        *state = merge(outs);
        j
    }

    /// `class`/`struct`/`enum`/... definitions with a body.
    fn c_type_def(&mut self, i: usize, hi: usize, state: &mut State) -> Option<usize> {
        let mut is_type = false;
        let mut is_enum = false;
        for q in self.top(i, hi) {
            if self.is(q, ";") || self.is(q, "=") || self.is(q, "(") {
                return None;
            }
            if self.kind(q) == Some(TokKind::Keyword) && TYPE_DEF_KEYWORDS.contains(&self.text(q)) {
                is_type = true;
                is_enum |= self.is(q, "enum");
            }
            if self.is(q, "{") {
                if !is_type {
                    return None;
                }
                let c = self.close_of(q)?;
                if !is_enum {
                    let mut inner = state.clone();
                    self.c_stmts(q + 1, c, &mut inner);
                }
                return Some(if self.is(c + 1, ";") { c + 2 } else { c + 1 });
            }
        }
        None
    }

    /// Function and method definitions: parameters are defined in a fresh
    /// scope that sees the enclosing state.
    fn c_function(&mut self, i: usize, hi: usize, state: &mut State) -> Option<usize> {
        let p = self
            .top(i, hi)
            .into_iter()
            .take_while(|&q| !(self.is(q, ";") || self.is(q, "=") || self.is(q, "{")))
            .find(|&q| self.is(q, "("))?;
        if p == i || !(self.kind(p - 1) == Some(TokKind::Ident) || self.is(p - 1, "function")) {
            return None;
        }
        let c = self.close_of(p)?;
        let mut j = c + 1;
        while j < hi && !self.is(j, "{") {
            if self.is(j, ":") {
                j = self.find_top(j, hi, "{")?;
                break;
            }
            let qualifier = matches!(self.kind(j), Some(TokKind::Keyword) | Some(TokKind::Ident))
                || self.is(j, ",")
                || self.is(j, "->")
                || TYPE_PUNCT.contains(&self.text(j));
            if !qualifier {
                return None;
            }
            j = self.skip(j);
        }
        if !self.is(j, "{") {
            return None;
        }
        let body_end = self.close_of(j)?;
        let mut inner = state.clone();
        for (a, b) in self.split_top(p + 1, c, ",") {
            let eq = self.find_top(a, b, "=");
            let src = match eq {
                Some(e) => self.expr(e + 1, b, state),
                None => Vec::new(),
            };
            let name_end = eq.unwrap_or(b);
            let name_end = self.find_top(a, name_end, ":").unwrap_or(name_end);
            if let Some(v) = self.decl_name(a, name_end) {
                self.define(v, &src, false, &mut inner);
            }
        }
        self.c_stmts(j + 1, body_end, &mut inner);
        Some(body_end + 1)
    }

    /// Declared name: the last top-level variable in `lo..hi`.
    fn decl_name(&self, lo: usize, hi: usize) -> Option<usize> {
        self.top(lo, hi)
            .into_iter()
            .filter(|&q| self.is_var(q) && !self.is_member(q))
            .last()
    }

    fn looks_like_decl(&self, lo: usize, hi: usize) -> bool {
        if lo >= hi {
            return false;
        }
        if self.kind(lo) == Some(TokKind::Keyword) {
            return !EXPR_KEYWORDS.contains(&self.text(lo));
        }
        let mut items = self.top(lo, hi);
        if items.len() > 1 && ["[", "{", "("].iter().any(|b| self.is(*items.last().unwrap(), b)) {
            items.pop();
        }
        let Some(&last) = items.last() else { return false };
        if !self.is_var(last) || self.is_member(last) {
            return false;
        }
        let words = items
            .iter()
            .filter(|&&q| matches!(self.kind(q), Some(TokKind::Ident) | Some(TokKind::Keyword)))
            .count();
        let shape_ok = items.iter().all(|&q| {
            matches!(self.kind(q), Some(TokKind::Ident) | Some(TokKind::Keyword))
                || self.is(q, "[")
                || TYPE_PUNCT.contains(&self.text(q))
        });
        let angle = |q: &usize| match self.text(*q) {
            "<" => 1i32,
            ">" => -1,
            ">>" => -2,
            _ => 0,
        };
        words >= 2 && shape_ok && items.iter().map(angle).sum::<i32>() == 0
    }

    /// Condition of `if`/`while`/`for`: an expression, or a declaration
    /// with an initializer.
    fn c_cond(&mut self, lo: usize, hi: usize, state: &mut State) {
        match self.find_top_any(lo, hi, ASSIGN_OPS) {
            Some(p) if self.looks_like_decl(lo, p) => self.c_simple(lo, hi, state),
            _ => {
                self.expr_list(lo, hi, state);
            }
        }
    }

    /// Lambda: parameters scoped to the body. The value itself carries no flow.
    fn c_lambda(&mut self, lo: usize, arrow: usize, hi: usize, state: &mut State) -> Vec<usize> {
        let mut inner = state.clone();
        let (plo, phi) = if self.is(lo, "(") && self.close_of(lo) == Some(arrow - 1) {
            (lo + 1, arrow - 1)
        } else {
            (lo, arrow)
        };
        for (a, b) in self.split_top(plo, phi, ",") {
            let eq = self.find_top(a, b, "=");
            let src = match eq {
                Some(e) => self.expr(e + 1, b, state),
                None => Vec::new(),
            };
            if let Some(v) = self.decl_name(a, eq.unwrap_or(b)) {
                self.define(v, &src, false, &mut inner);
            }
        }
        if self.is(arrow + 1, "{") && self.close_of(arrow + 1) == Some(hi - 1) {
            self.c_stmts(arrow + 2, hi - 1, &mut inner);
        } else {
            self.expr(arrow + 1, hi, &mut inner);
        }
        Vec::new()
    }

    /// Declarations and expression statements.
    fn c_simple(&mut self, lo: usize, hi: usize, state: &mut State) {
        let mut decl = false;
        for (k, (a, b)) in self.split_top(lo, hi, ",").into_iter().enumerate() {
            let op = self.find_top_any(a, b, ASSIGN_OPS);
            if k == 0 {
                decl = self.looks_like_decl(a, op.unwrap_or(b));
            }
            match op {
                Some(p) => {
                    let src = self.expr(p + 1, b, state);
                    let aug = !self.is(p, "=");
                    self.c_target(a, p, &src, aug, decl, state);
                }
                None if decl => {
                    // constructor-style initializer: `T x(args)` or `T x{args}`
                    let last = *self.top(a, b).last().expect("non-empty part");
                    let (name_end, src) = match self.close_of(last) {
                        Some(c) if !self.is(last, "[") => (last, self.expr_list(last + 1, c, state)),
                        _ => (b, Vec::new()),
                    };
                    if let Some(v) = self.decl_name(a, name_end) {
                        self.define(v, &src, false, state);
                    }
                }
                None => {
                    self.expr(a, b, state);
                }
            }
        }
    }

    /// Assignment target; returns the defined tokens.
    fn c_target(&mut self, lo: usize, hi: usize, src: &[usize], aug: bool, decl: bool, state: &mut State) -> Vec<usize> {
        let mut a = lo;
        while a < hi && self.kind(a) == Some(TokKind::Keyword) && !EXPR_KEYWORDS.contains(&self.text(a)) {
            a += 1;
        }
        if a >= hi {
            return Vec::new();
        }
        let mut b0 = a;
        while b0 < hi && (self.is(b0, "&") || self.is(b0, "*") || self.is(b0, "&&")) {
            b0 += 1;
        }
        if (self.is(b0, "[") || self.is(b0, "{")) && self.close_of(b0) == Some(hi - 1) {
            let mut out = Vec::new();
            for (p, q) in self.split_top(b0 + 1, hi - 1, ",") {
                let q = self.find_top(p, q, "=").unwrap_or(q);
                let p = self.find_top(p, q, ":").map_or(p, |c| c + 1);
                if let Some(v) = self.decl_name(p, q) {
                    self.define(v, src, false, state);
                    out.push(v);
                }
            }
            return out;
        }
        let last = hi - 1;
        if self.is_var(last) && !self.is_member(last) {
            let deref = !decl && self.is(lo, "*");
            self.define(last, src, aug || deref, state);
            return vec![last];
        }
        if self.is(last, "]") && (decl || a < lo) {
            if let Some(&open) = self.top(a, hi).last() {
                if open > a && self.is_var(open - 1) && !self.is_member(open - 1) {
                    self.define(open - 1, src, aug, state);
                    return vec![open - 1];
                }
            }
        }
        self.group_uses(a, hi, state);
        match self.first_var(a, hi) {
            Some(base) => {
                self.define(base, src, true, state);
                vec![base]
            }
            None => Vec::new(),
        }
    }

    pub(super) fn c_expr(&mut self, lo: usize, hi: usize, state: &mut State) -> Vec<usize> {
        let arrow = if self.lang == Language::Java { "->" } else { "=>" };
        if let Some(p) = self.find_top(lo, hi, arrow) {
            if p > lo && self.find_top_any(lo, p, ASSIGN_OPS).is_none() {
                return self.c_lambda(lo, p, hi, state);
            }
        }
        if let Some(p) = self.find_top_any(lo, hi, ASSIGN_OPS) {
            let src = self.c_expr(p + 1, hi, state);
            let decl = self.looks_like_decl(lo, p);
            let aug = !self.is(p, "=");
            let t = self.c_target(lo, p, &src, aug, decl, state);
            return if t.is_empty() { src } else { t };
        }
        self.scan(lo, hi, state)
    }
}

//! Tolerant lexers for the supported language families.

use super::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Keyword,
    Number,
    Str,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokKind,
    /// 0-based source line.
    pub line: usize,
    /// Indentation width of the token's physical line.
    pub indent: usize,
    /// The line continues onto the next one (explicit backslash continuation).
    pub continued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub line: usize,
    pub message: String,
}

const PY_KEYWORDS: &[&str] = &[
    "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif", "else",
    "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not",
    "or", "pass", "raise", "return", "try", "while", "with", "yield", "print",
];

const PY_LITERAL_WORDS: &[&str] = &["True", "False", "None"];

const C_KEYWORDS: &[&str] = &[
    // shared control flow
    "if", "else", "for", "while", "do", "switch", "case", "default", "break", "continue", "return", "goto",
    "try", "catch", "finally", "throw", "throws", "new", "delete", "sizeof", "typeof", "instanceof",
    // types and qualifiers
    "int", "char", "float", "double", "long", "short", "unsigned", "signed", "void", "bool", "boolean",
    "byte", "auto", "const", "static", "extern", "register", "volatile", "inline", "struct", "union",
    "enum", "typedef", "class", "interface", "namespace", "using", "public", "private", "protected",
    "virtual", "override", "final", "abstract", "template", "typename", "friend", "operator", "this",
    "super", "let", "var", "function", "async", "await", "yield", "import", "export", "package", "extends",
    "implements", "string", "object", "decimal", "foreach", "in", "of", "is", "as", "out", "ref", "readonly",
    "sealed", "synchronized", "transient", "native", "constexpr", "noexcept", "mutable", "explicit",
    "size_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int8_t", "int16_t", "int32_t", "int64_t",
];

const C_LITERAL_WORDS: &[&str] = &["true", "false", "null", "NULL", "nullptr", "undefined", "None"];

pub fn is_keyword(lang: Language, word: &str) -> bool {
    match lang {
        Language::Python => PY_KEYWORDS.contains(&word),
        _ => C_KEYWORDS.contains(&word),
    }
}

pub fn is_literal_word(lang: Language, word: &str) -> bool {
    match lang {
        Language::Python => PY_LITERAL_WORDS.contains(&word),
        _ => C_LITERAL_WORDS.contains(&word),
    }
}

const PY_OPS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "@=", "**", "//", "<<", ">>",
];

const C_OPS: &[&str] = &[
    ">>>=", "<<=", ">>=", "===", "!==", "...", "->", "::", "=>", "==", "!=", "<=", ">=", "&&", "||", "++",
    "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "?.", "??",
];

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    lang: Language,
    _src: &'a str,
}

impl Cursor<'_> {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }
}

/// Lex `code` into visible tokens. Comments and whitespace are dropped.
pub fn lex(code: &str, lang: Language) -> Result<Vec<Token>, LexError> {
    let mut cur = Cursor {
        chars: code.chars().collect(),
        pos: 0,
        line: 0,
        lang,
        _src: code,
    };
    let python = lang == Language::Python;
    let ops = if python { PY_OPS } else { C_OPS };
    let mut out: Vec<Token> = Vec::new();
    let mut line_indent = 0usize;
    let mut at_line_start = true;
    let mut indent_acc = 0usize;

    while let Some(c) = cur.peek(0) {
        if c == '\n' {
            cur.pos += 1;
            cur.line += 1;
            at_line_start = true;
            indent_acc = 0;
            continue;
        }
        if c == ' ' || c == '\t' || c == '\r' || c == '\u{c}' {
            if at_line_start {
                indent_acc += if c == '\t' { 4 } else { 1 };
            }
            cur.pos += 1;
            continue;
        }
        if at_line_start {
            line_indent = indent_acc;
            at_line_start = false;
        }
        let line = cur.line;
        let push = |out: &mut Vec<Token>, text: String, kind: TokKind| {
            out.push(Token { text, kind, line, indent: line_indent, continued: false });
        };

        // comments
        if python && c == '#' || !python && cur.starts_with("//") {
            while cur.peek(0).is_some_and(|c| c != '\n') {
                cur.pos += 1;
            }
            continue;
        }
        if !python && cur.starts_with("/*") {
            cur.pos += 2;
            loop {
                match cur.peek(0) {
                    None => return Err(LexError { line, message: "unterminated block comment".into() }),
                    Some('*') if cur.peek(1) == Some('/') => {
                        cur.pos += 2;
                        break;
                    }
                    Some('\n') => {
                        cur.line += 1;
                        cur.pos += 1;
                    }
                    Some(_) => cur.pos += 1,
                }
            }
            continue;
        }
        if python && c == '\\' && cur.peek(1) == Some('\n') {
            if let Some(last) = out.last_mut() {
                last.continued = true;
            }
            cur.pos += 2;
            cur.line += 1;
            // continuation lines keep the logical line's indentation
            at_line_start = false;
            continue;
        }

        // strings (with python prefixes like r"", f'', b"""...""")
        let mut prefix_len = 0;
        if python && c.is_ascii_alphabetic() {
            while prefix_len < 2 && cur.peek(prefix_len).is_some_and(|c| "rRbBuUfF".contains(c)) {
                prefix_len += 1;
            }
            if !cur.peek(prefix_len).is_some_and(|q| q == '"' || q == '\'') {
                prefix_len = 0;
            }
        }
        if !python && c == '@' && cur.peek(1) == Some('"') {
            prefix_len = 1;
        }
        let quote_at = cur.peek(prefix_len);
        let is_quote = match quote_at {
            Some('"') | Some('\'') => prefix_len > 0 || !c.is_ascii_alphabetic(),
            Some('`') => cur.lang == Language::JavaScript && prefix_len == 0,
            _ => false,
        };
        if is_quote {
            let q = quote_at.unwrap();
            let start = cur.pos;
            cur.pos += prefix_len;
            let triple = python && cur.peek(1) == Some(q) && cur.peek(2) == Some(q);
            let multiline = triple || q == '`';
            cur.pos += if triple { 3 } else { 1 };
            loop {
                match cur.peek(0) {
                    None => return Err(LexError { line, message: "unterminated string".into() }),
                    Some('\\') => {
                        if cur.peek(1) == Some('\n') {
                            cur.line += 1;
                        }
                        cur.pos += 2;
                    }
                    Some('\n') if !multiline => {
                        return Err(LexError { line, message: "newline in string literal".into() });
                    }
                    Some('\n') => {
                        cur.line += 1;
                        cur.pos += 1;
                    }
                    Some(ch) if ch == q => {
                        if triple {
                            if cur.peek(1) == Some(q) && cur.peek(2) == Some(q) {
                                cur.pos += 3;
                                break;
                            }
                            cur.pos += 1;
                        } else {
                            cur.pos += 1;
                            break;
                        }
                    }
                    Some(_) => cur.pos += 1,
                }
            }
            let text: String = cur.chars[start..cur.pos.min(cur.chars.len())].iter().collect();
            push(&mut out, text, TokKind::Str);
            continue;
        }

        if c.is_ascii_digit() || (c == '.' && cur.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            let start = cur.pos;
            cur.pos += 1;
            while let Some(d) = cur.peek(0) {
                let prev = cur.chars[cur.pos - 1];
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' || d == '\'' && !python {
                    cur.pos += 1;
                } else if (d == '+' || d == '-') && (prev == 'e' || prev == 'E') && !cur.chars[start..cur.pos].iter().any(|c| *c == 'x' || *c == 'X') {
                    cur.pos += 1;
                } else {
                    break;
                }
            }
            push(&mut out, cur.chars[start..cur.pos].iter().collect(), TokKind::Number);
            continue;
        }

        if c.is_alphabetic() || c == '_' || c == '$' && !python {
            let start = cur.pos;
            while cur.peek(0).is_some_and(|d| d.is_alphanumeric() || d == '_' || d == '$' && !python) {
                cur.pos += 1;
            }
            let text: String = cur.chars[start..cur.pos].iter().collect();
            let kind = if is_keyword(lang, &text) { TokKind::Keyword } else { TokKind::Ident };
            push(&mut out, text, kind);
            continue;
        }

        if let Some(op) = ops.iter().find(|op| cur.starts_with(op)) {
            cur.pos += op.chars().count();
            push(&mut out, op.to_string(), TokKind::Punct);
            continue;
        }
        cur.pos += 1;
        push(&mut out, c.to_string(), TokKind::Punct);
    }
    Ok(out)
}

/// Tokenization used when no language-specific lexer applies: whitespace and
/// punctuation boundaries only. Never fails.
pub fn lex_generic(code: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (line, text) in code.lines().enumerate() {
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<Token>| {
            if !word.is_empty() {
                out.push(Token { text: std::mem::take(word), kind: TokKind::Ident, line, indent: 0, continued: false });
            }
        };
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                if !c.is_whitespace() {
                    out.push(Token { text: c.to_string(), kind: TokKind::Punct, line, indent: 0, continued: false });
                }
            }
        }
        flush(&mut word, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(code: &str, lang: Language) -> Vec<String> {
        lex(code, lang).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn python_tokens() {
        assert_eq!(texts("x = 1\ny = x + 2", Language::Python), vec!["x", "=", "1", "y", "=", "x", "+", "2"]);
        assert_eq!(texts("a //= 2 # note", Language::Python), vec!["a", "//=", "2"]);
        assert_eq!(texts("s = f'{x}' + r\"\\d\"", Language::Python), vec!["s", "=", "f'{x}'", "+", "r\"\\d\""]);
        let toks = lex("if x:\n    y = '''a\nb'''\n", Language::Python).unwrap();
        assert_eq!(toks[3].indent, 4);
        assert_eq!(toks[5].kind, TokKind::Str);
    }

    #[test]
    fn c_tokens() {
        assert_eq!(texts("for (int i = 0; i < n; i++) /* c */ s += a[i]; // tail", Language::C).len(), 21);
        assert_eq!(texts("x->y = 1e-5;", Language::Cpp), vec!["x", "->", "y", "=", "1e-5", ";"]);
        let kinds: Vec<TokKind> = lex("int x = 'a';", Language::C).unwrap().iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![TokKind::Keyword, TokKind::Ident, TokKind::Punct, TokKind::Str, TokKind::Punct]);
    }

    #[test]
    fn lex_errors() {
        assert!(lex("x = 'abc", Language::Python).is_err());
        assert!(lex("/* open", Language::C).is_err());
        assert!(lex("s = \"a\nb\"", Language::Java).is_err());
    }
}

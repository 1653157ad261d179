//! A small WordPiece tokenizer whose vocabulary is built from the training split.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    /// Multi-character words matched whole before punctuation splitting.
    added: Vec<String>,
    specials: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Tokenizer {
    fn from_parts(vocab: Vec<String>, mut added: Vec<String>, specials: Vec<String>) -> Self {
        added.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { vocab, added, specials, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_to_token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn pad_id(&self) -> u32 {
        self.index[PAD]
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn cls_id(&self) -> u32 {
        self.index[CLS]
    }

    pub fn sep_id(&self) -> u32 {
        self.index[SEP]
    }

    pub fn mask_id(&self) -> u32 {
        self.index[MASK]
    }

    /// Reserved tokens occupy the first ids.
    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.specials.len()
    }

    /// Split text into words: special tokens verbatim, then lowercased added
    /// words, alphanumeric runs and single punctuation characters.
    pub fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let next_special = self
                .specials
                .iter()
                .filter_map(|s| rest.find(s.as_str()).map(|at| (at, s)))
                .min_by_key(|(at, s)| (*at, std::cmp::Reverse(s.len())));
            match next_special {
                Some((at, s)) => {
                    self.pre_tokenize_plain(&rest[..at], &mut out);
                    out.push(s.clone());
                    rest = &rest[at + s.len()..];
                }
                None => {
                    self.pre_tokenize_plain(rest, &mut out);
                    break;
                }
            }
        }
        out
    }

    fn pre_tokenize_plain(&self, text: &str, out: &mut Vec<String>) {
        let lowered = text.to_lowercase();
        let chars: Vec<char> = lowered.chars().collect();
        let is_word = |c: char| c.is_alphanumeric() || c == '_';
        let mut i = 0;
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<String>| {
            if !word.is_empty() {
                out.push(std::mem::take(word));
            }
        };
        'outer: while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                flush(&mut word, out);
                i += 1;
                continue;
            }
            if word.is_empty() {
                for a in &self.added {
                    let ac: Vec<char> = a.chars().collect();
                    let end = i + ac.len();
                    if end <= chars.len()
                        && chars[i..end] == ac[..]
                        && !(ac.last().is_some_and(|&l| is_word(l)) && chars.get(end).is_some_and(|&n| is_word(n)))
                    {
                        out.push(a.clone());
                        i = end;
                        continue 'outer;
                    }
                }
            }
            if is_word(c) {
                word.push(c);
            } else {
                flush(&mut word, out);
                out.push(c.to_string());
            }
            i += 1;
        }
        flush(&mut word, out);
    }

    /// Greedy longest-match-first WordPiece for one pre-tokenized word.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        if let Some(&id) = self.index.get(word) {
            return vec![id];
        }
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return vec![self.unk_id()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.unk_id()],
            }
        }
        pieces
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.pre_tokenize(text)
            .iter()
            .flat_map(|w| self.encode_word(w))
            .collect()
    }

    /// First subtoken id of a single word.
    pub fn first_subtoken(&self, word: &str) -> u32 {
        let words = self.pre_tokenize(word);
        match words.first() {
            Some(w) => self.encode_word(w)[0],
            None => self.unk_id(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Tokenizer = serde_json::from_str(&text)
            .map_err(|e| Error::Asset(format!("tokenizer {}: {e}", path.display())))?;
        Ok(Self::from_parts(raw.vocab, raw.added, raw.specials))
    }
}

/// Collects word counts from training text and produces a [`Tokenizer`].
pub struct TokenizerBuilder {
    max_vocab: usize,
    min_count: usize,
    specials: Vec<String>,
    required: BTreeSet<String>,
    counts: HashMap<String, usize>,
    chars: BTreeSet<char>,
    probe: Tokenizer,
}

impl TokenizerBuilder {
    /// `extra_specials` are reserved tokens (such as the verbalizer pad word)
    /// placed right after the built-in ones.
    pub fn new(max_vocab: usize, min_count: usize, extra_specials: &[&str]) -> Self {
        let mut specials: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
        for s in extra_specials {
            if !specials.iter().any(|x| x == s) {
                specials.push(s.to_string());
            }
        }
        let probe = Tokenizer::from_parts(specials.clone(), Vec::new(), specials.clone());
        Self {
            max_vocab,
            min_count,
            specials,
            required: BTreeSet::new(),
            counts: HashMap::new(),
            chars: BTreeSet::new(),
            probe,
        }
    }

    /// Words that must be whole vocabulary entries (label words, template
    /// words). Words containing punctuation become atomic added tokens.
    pub fn require_words<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) {
        for w in words {
            let w = w.to_lowercase();
            if w.is_empty() || self.specials.contains(&w) {
                continue;
            }
            self.chars.extend(w.chars());
            self.required.insert(w);
        }
        let added: Vec<String> = self
            .required
            .iter()
            .filter(|w| w.chars().count() > 1 && w.chars().any(|c| !(c.is_alphanumeric() || c == '_')))
            .cloned()
            .collect();
        self.probe = Tokenizer::from_parts(self.specials.clone(), added, self.specials.clone());
    }

    pub fn feed(&mut self, text: &str) {
        for w in self.probe.pre_tokenize(text) {
            if self.specials.contains(&w) {
                continue;
            }
            self.chars.extend(w.chars());
            *self.counts.entry(w).or_default() += 1;
        }
    }

    pub fn build(self) -> Tokenizer {
        let mut vocab = self.specials.clone();
        let mut seen: BTreeSet<String> = vocab.iter().cloned().collect();
        let mut push = |t: String, vocab: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                vocab.push(t);
            }
        };
        for w in &self.required {
            push(w.clone(), &mut vocab);
        }
        let mut frequent: Vec<(&String, &usize)> = self
            .counts
            .iter()
            .filter(|(w, &n)| n >= self.min_count && !self.required.contains(*w))
            .collect();
        frequent.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (w, _) in frequent.into_iter().take(self.max_vocab) {
            push(w.clone(), &mut vocab);
        }
        for c in &self.chars {
            push(c.to_string(), &mut vocab);
            push(format!("##{c}"), &mut vocab);
        }
        Tokenizer::from_parts(vocab, self.probe.added.clone(), self.specials)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        let mut b = TokenizerBuilder::new(100, 1, &["[PADW]"]);
        b.require_words(["c++", "node.js", "python", "necessary", "unnecessary"]);
        b.feed("The topic of the request is [MASK]. Reviewing c++ code, node.js too: x = y + 1");
        b.feed("python python");
        b.build()
    }

    #[test]
    fn specials_first_and_masks_verbatim() {
        let t = tok();
        assert_eq!(t.pad_id(), 0);
        assert_eq!(t.mask_id(), 4);
        assert_eq!(t.token_to_id("[PADW]"), Some(5));
        let words = t.pre_tokenize("Is [MASK] [MASK].");
        assert_eq!(words, vec!["is", "[MASK]", "[MASK]", "."]);
    }

    #[test]
    fn added_words_stay_whole() {
        let t = tok();
        assert_eq!(t.pre_tokenize("I like C++, and node.js!"), vec!["i", "like", "c++", ",", "and", "node.js", "!"]);
        assert_eq!(t.pre_tokenize("a c+b"), vec!["a", "c", "+", "b"]);
    }

    #[test]
    fn wordpiece_fallback() {
        let t = tok();
        let ids = t.encode("pythonic");
        assert!(ids.len() > 1);
        assert_eq!(t.id_to_token(ids[0]), "python");
        assert!(t.id_to_token(ids[1]).starts_with("##"));
        assert_eq!(t.encode("\u{2603}"), vec![t.unk_id()]);
    }

    #[test]
    fn save_load_roundtrip() {
        let t = tok();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tok.json");
        t.save(&p).unwrap();
        let back = Tokenizer::load(&p).unwrap();
        assert_eq!(back.encode("c++ python [MASK]"), t.encode("c++ python [MASK]"));
    }
}

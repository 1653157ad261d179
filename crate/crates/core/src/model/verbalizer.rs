//! Label words: each tag fills the topic masks, each necessity class one mask.

use serde::{Deserialize, Serialize};

use crate::answering::LabelSpace;
use crate::corpus::{tag_words, Necessity};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const NECESSARY_WORD: &str = "necessary";
pub const UNNECESSARY_WORD: &str = "unnecessary";

/// Words of a tag cut or padded to `arity`.
pub fn verbal_words(tag: &str, arity: usize, pad_word: &str) -> Vec<String> {
    let mut words: Vec<String> = tag_words(tag).into_iter().take(arity).map(str::to_string).collect();
    words.resize(arity, pad_word.to_string());
    words
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    /// Slot token ids per tag, aligned with the label space order.
    pub tags: Vec<Vec<u32>>,
    pub necessary: u32,
    pub unnecessary: u32,
    pub pad_word: String,
}

impl Verbalizer {
    pub fn new(labels: &LabelSpace, tok: &Tokenizer, arity: usize, pad_word: &str) -> Result<Self> {
        let pad = tok
            .token_to_id(pad_word)
            .ok_or_else(|| Error::Asset(format!("pad word `{pad_word}` is not in the vocabulary")))?;
        let word_id = |w: &str| -> Result<u32> {
            if w == pad_word {
                return Ok(pad);
            }
            let id = tok.first_subtoken(w);
            if id == tok.unk_id() {
                return Err(Error::Asset(format!("label word `{w}` has no vocabulary entry")));
            }
            Ok(id)
        };
        let tags = labels
            .tags()
            .iter()
            .map(|t| verbal_words(t, arity, pad_word).iter().map(|w| word_id(w)).collect())
            .collect::<Result<Vec<Vec<u32>>>>()?;
        let necessary = word_id(NECESSARY_WORD)?;
        let unnecessary = word_id(UNNECESSARY_WORD)?;
        if necessary == unnecessary {
            return Err(Error::Asset("necessity words share a first subtoken".into()));
        }
        Ok(Self { tags, necessary, unnecessary, pad_word: pad_word.to_string() })
    }

    pub fn tag_ids(&self, index: usize) -> &[u32] {
        &self.tags[index]
    }

    pub fn necessity_id(&self, n: Necessity) -> u32 {
        match n {
            Necessity::Necessary => self.necessary,
            Necessity::Unnecessary => self.unnecessary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenizerBuilder;

    #[test]
    fn padding_and_truncation() {
        assert_eq!(verbal_words("c", 3, "[PADW]"), vec!["c", "[PADW]", "[PADW]"]);
        assert_eq!(verbal_words("a-b c_d-e", 3, "[PADW]"), vec!["a", "b", "c"]);
    }

    #[test]
    fn ids_resolve_through_first_subtoken() {
        let labels = LabelSpace::new(vec!["object-oriented design".into(), "c".into(), "c++".into()]);
        let mut b = TokenizerBuilder::new(100, 1, &["[PADW]"]);
        b.require_words(["object", "oriented", "design", "c", "c++", NECESSARY_WORD, UNNECESSARY_WORD]);
        let tok = b.build();
        let v = Verbalizer::new(&labels, &tok, 3, "[PADW]").unwrap();
        let pad = tok.token_to_id("[PADW]").unwrap();
        assert_eq!(v.tags[0], vec![tok.token_to_id("c").unwrap(), pad, pad]);
        assert_eq!(v.tags[1][0], tok.token_to_id("c++").unwrap());
        let ood: Vec<u32> = ["object", "oriented", "design"].iter().map(|w| tok.token_to_id(w).unwrap()).collect();
        assert_eq!(v.tags[2], ood);
        assert_eq!(v.necessity_id(Necessity::Necessary), tok.token_to_id("necessary").unwrap());
    }

    #[test]
    fn missing_pad_word_is_an_asset_error() {
        let labels = LabelSpace::new(vec!["c".into()]);
        let tok = TokenizerBuilder::new(10, 1, &[]).build();
        assert!(matches!(Verbalizer::new(&labels, &tok, 3, "[PADW]"), Err(Error::Asset(_))));
    }
}

//! Whole-word vocabulary and the fixed-length token layout
//! `[CLS] w1 .. wk [SEP] [PAD] ..` of length [`SEQ_LEN`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CgfrError, Result};

pub const SEQ_LEN: usize = 21;
/// Word slots between CLS and SEP.
pub const MAX_WORDS: usize = SEQ_LEN - 2;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

impl Vocabulary {
    /// Reserved tokens first, then words in order of first occurrence.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [CLS, SEP, PAD, UNK] {
            v.push(t);
        }
        for text in texts {
            for w in words(text) {
                v.push(&w);
            }
        }
        v
    }

    fn push(&mut self, tok: &str) {
        if !self.index.contains_key(tok) {
            self.index.insert(tok.to_string(), self.tokens.len());
            self.tokens.push(tok.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn cls_id(&self) -> usize {
        self.index[CLS]
    }

    pub fn sep_id(&self) -> usize {
        self.index[SEP]
    }

    pub fn pad_id(&self) -> usize {
        self.index[PAD]
    }

    pub fn unk_id(&self) -> usize {
        self.index[UNK]
    }

    /// `[CLS] + first 19 words + [SEP] + [PAD]...`; unknown words map to UNK.
    pub fn tokenize(&self, caption: &str) -> Result<TokenSequence> {
        let ws = words(caption);
        if ws.is_empty() {
            return Err(CgfrError::input(format!("empty caption `{caption}`")));
        }
        let mut ids = Vec::with_capacity(SEQ_LEN);
        ids.push(self.cls_id());
        for w in ws.iter().take(MAX_WORDS) {
            ids.push(self.id(w).unwrap_or_else(|| self.unk_id()));
        }
        ids.push(self.sep_id());
        let used = ids.len();
        ids.resize(SEQ_LEN, self.pad_id());
        let mut attention_mask = vec![1u8; used];
        attention_mask.resize(SEQ_LEN, 0);
        Ok(TokenSequence { ids, attention_mask })
    }

    /// Word tokens between CLS and SEP, joined by spaces.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .skip(1)
            .take_while(|&&id| id != self.sep_id())
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// UTF-8 lines `token<TAB>id`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| CgfrError::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|e| CgfrError::Format(format!("vocab line {}: {e}", n + 1)))?;
            pairs.push((id, tok.to_string()));
        }
        pairs.sort();
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (expect, (id, tok)) in pairs.into_iter().enumerate() {
            if id != expect || v.index.contains_key(&tok) {
                return Err(CgfrError::Format(format!("vocab ids must be dense and unique (at `{tok}`)")));
            }
            v.push(&tok);
        }
        for t in [CLS, SEP, PAD, UNK] {
            if v.id(t).is_none() {
                return Err(CgfrError::Format(format!("vocab lacks reserved token {t}")));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_corpus(["she has blond hair", "he has black hair and a hat"])
    }

    #[test]
    fn layout_of_a_short_caption() {
        let v = vocab();
        let s = v.tokenize("She has blond hair.").unwrap();
        let want: Vec<usize> = [CLS, "she", "has", "blond", "hair", SEP]
            .iter()
            .map(|t| v.id(t).unwrap())
            .chain(std::iter::repeat_n(v.pad_id(), 15))
            .collect();
        assert_eq!(s.ids, want);
        assert_eq!(s.attention_mask.iter().filter(|&&m| m == 1).count(), 6);
    }

    #[test]
    fn long_captions_truncate_and_keep_sep_last() {
        let v = vocab();
        let caption = vec!["hair"; 25].join(" ");
        let s = v.tokenize(&caption).unwrap();
        assert_eq!(s.ids.len(), SEQ_LEN);
        assert_eq!(s.ids[20], v.sep_id());
        assert!(s.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn unknown_words_and_empty_captions() {
        let v = vocab();
        let s = v.tokenize("she has purple hair").unwrap();
        assert_eq!(s.ids[3], v.unk_id());
        assert!(v.tokenize(" .,! ").is_err());
    }

    #[test]
    fn ids_are_dense_in_first_occurrence_order() {
        let v = vocab();
        assert_eq!(v.id(CLS), Some(0));
        assert_eq!(v.id("she"), Some(4));
        assert_eq!(v.id("has"), Some(5));
        assert_eq!(v.id("he"), Some(8));
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}

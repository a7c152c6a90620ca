//! Subword tokenizer: greedy longest-match-first wordpiece over a
//! vocabulary built from the corpus, with character-level fallback so
//! no input ever maps to more than a bounded number of [UNK] tokens.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Lowercase word split used everywhere text meets a model: alphanumeric
/// runs become words, everything else is a separator.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    max_word_chars: usize,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.max_word_chars == other.max_word_chars
    }
}

impl Tokenizer {
    /// Build a vocabulary over the given texts: the four specials, every
    /// character seen (word-initial and `##` continuation forms), then
    /// the most frequent whole words until `vocab_budget` is reached.
    pub fn build(texts: &[&str], vocab_budget: usize) -> Tokenizer {
        let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut chars: BTreeMap<char, u64> = BTreeMap::new();
        for text in texts {
            for word in words(text) {
                for ch in word.chars() {
                    *chars.entry(ch).or_default() += 1;
                }
                *word_counts.entry(word).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> =
            vec![PAD.into(), UNK.into(), CLS.into(), SEP.into()];
        for ch in chars.keys() {
            tokens.push(ch.to_string());
        }
        for ch in chars.keys() {
            tokens.push(format!("##{}", ch));
        }
        let mut by_freq: Vec<(&String, &u64)> = word_counts.iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (word, _) in by_freq {
            if tokens.len() >= vocab_budget {
                break;
            }
            if word.chars().count() > 1 {
                tokens.push(word.clone());
            }
        }
        Tokenizer::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Tokenizer {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Tokenizer {
            tokens,
            index,
            max_word_chars: 64,
        }
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
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

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Wordpiece-encode one word: greedy longest prefix from the
    /// vocabulary, continuations carrying the `##` prefix. A word with
    /// any unmatchable character becomes a single [UNK].
    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        if word.chars().count() > self.max_word_chars {
            out.push(self.unk_id());
            return;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let slice: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    slice
                } else {
                    format!("##{}", slice)
                };
                if let Some(id) = self.id(&candidate) {
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
                None => {
                    out.push(self.unk_id());
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Encode running text (no specials added here).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in words(text) {
            self.encode_word(&word, &mut out);
        }
        out
    }

    /// Reassemble text from ids; `##` continuations re-attach to the
    /// previous piece. Lossy (case and punctuation are gone) but enough
    /// to verify segment order and content.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id);
            if let Some(rest) = tok.strip_prefix("##") {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tokenizer> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tok: Tokenizer = serde_json::from_str(&text)?;
        tok.rebuild_index();
        Ok(tok)
    }
}

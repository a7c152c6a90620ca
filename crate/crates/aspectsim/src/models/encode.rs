//! Pair encoding: `[CLS] seed_title: seed_abstract [SEP] target_title:
//! target_abstract [SEP]`, capped at 512 tokens with the longer side
//! truncated first.

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use crate::dataset::Sample;
use crate::error::{Error, Result};

pub const MAX_SEQUENCE_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub token_ids: Vec<u32>,
    /// 0 over [CLS] + seed + interior [SEP], 1 over target + final [SEP].
    pub segment_ids: Vec<u8>,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Count of separator tokens strictly between the two text segments.
    pub fn interior_separators(&self, tokenizer: &Tokenizer) -> usize {
        let sep = tokenizer.sep_id();
        let trailing = usize::from(*self.token_ids.last().unwrap() == sep);
        self.token_ids.iter().filter(|&&t| t == sep).count() - trailing
    }
}

fn side_text(title: &str, abstract_text: &str) -> String {
    format!("{}: {}", title, abstract_text)
}

/// Trim the longer of the two token sequences, one token at a time from
/// its end, until the combined encoded length fits the budget.
fn truncate_pair(seed: &mut Vec<u32>, target: &mut Vec<u32>, budget: usize) {
    while seed.len() + target.len() > budget {
        if seed.len() >= target.len() {
            seed.pop();
        } else {
            target.pop();
        }
    }
}

pub fn encode_pair(
    seed_title: &str,
    seed_abstract: &str,
    target_title: &str,
    target_abstract: &str,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<EncodedPair> {
    if seed_title.trim().is_empty()
        || seed_abstract.trim().is_empty()
        || target_title.trim().is_empty()
        || target_abstract.trim().is_empty()
    {
        return Err(Error::Model(
            "encode_pair requires non-empty titles and abstracts".into(),
        ));
    }
    let max_len = max_len.min(MAX_SEQUENCE_LEN);
    let mut seed_ids = tokenizer.encode(&side_text(seed_title, seed_abstract));
    let mut target_ids = tokenizer.encode(&side_text(target_title, target_abstract));
    if seed_ids.is_empty() || target_ids.is_empty() {
        return Err(Error::Model(
            "encode_pair produced an empty segment".into(),
        ));
    }
    // [CLS], interior [SEP], final [SEP]
    let budget = max_len.saturating_sub(3).max(2);
    truncate_pair(&mut seed_ids, &mut target_ids, budget);

    let mut token_ids = Vec::with_capacity(seed_ids.len() + target_ids.len() + 3);
    let mut segment_ids = Vec::with_capacity(token_ids.capacity());
    token_ids.push(tokenizer.cls_id());
    segment_ids.push(0);
    token_ids.extend(&seed_ids);
    segment_ids.extend(std::iter::repeat(0).take(seed_ids.len()));
    token_ids.push(tokenizer.sep_id());
    segment_ids.push(0);
    token_ids.extend(&target_ids);
    segment_ids.extend(std::iter::repeat(1).take(target_ids.len()));
    token_ids.push(tokenizer.sep_id());
    segment_ids.push(1);
    Ok(EncodedPair {
        token_ids,
        segment_ids,
    })
}

pub fn encode_sample(
    sample: &Sample,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<EncodedPair> {
    encode_pair(
        &sample.seed_title,
        &sample.seed_abstract,
        &sample.target_title,
        &sample.target_abstract,
        tokenizer,
        max_len,
    )
}

/// Word-level pair sequence for the LSTM path: seed words, the literal
/// `[SEP]` marker, target words. Same truncation policy and cap.
pub fn encode_pair_words(
    seed_title: &str,
    seed_abstract: &str,
    target_title: &str,
    target_abstract: &str,
    max_len: usize,
) -> Vec<String> {
    let max_len = max_len.min(MAX_SEQUENCE_LEN);
    let mut seed = super::tokenizer::words(&side_text(seed_title, seed_abstract));
    let mut target = super::tokenizer::words(&side_text(target_title, target_abstract));
    let budget = max_len.saturating_sub(1).max(2);
    while seed.len() + target.len() > budget {
        if seed.len() >= target.len() {
            seed.pop();
        } else {
            target.pop();
        }
    }
    let mut out = seed;
    out.push(super::tokenizer::SEP.to_string());
    out.extend(target);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::build(
            &[
                "neural aspect similarity of research papers",
                "protein structures and viral replication cycles",
            ],
            256,
        )
    }

    #[test]
    fn short_fixture_orders_seed_then_target() {
        let tok = tok();
        let enc = encode_pair(
            "neural aspect",
            "similarity of research papers",
            "protein structures",
            "viral replication cycles",
            &tok,
            512,
        )
        .unwrap();
        assert!(enc.len() < 512);
        assert_eq!(enc.interior_separators(&tok), 1);
        assert_eq!(enc.token_ids[0], tok.cls_id());
        assert_eq!(*enc.token_ids.last().unwrap(), tok.sep_id());
        let decoded = tok.decode(&enc.token_ids);
        let seed_pos = decoded.find("neural aspect").unwrap();
        let target_pos = decoded.find("protein structures").unwrap();
        assert!(seed_pos < target_pos);
        // segments flip exactly at the interior separator
        let sep_ix = enc
            .token_ids
            .iter()
            .position(|&t| t == tok.sep_id())
            .unwrap();
        assert!(enc.segment_ids[..=sep_ix].iter().all(|&s| s == 0));
        assert!(enc.segment_ids[sep_ix + 1..].iter().all(|&s| s == 1));
    }

    #[test]
    fn long_abstracts_cap_at_exactly_512() {
        let tok = tok();
        let long_a = "neural similarity ".repeat(500);
        let long_b = "viral replication ".repeat(500);
        let enc = encode_pair("neural aspect", &long_a, "protein structures", &long_b, &tok, 512)
            .unwrap();
        assert_eq!(enc.len(), 512);
        assert_eq!(enc.interior_separators(&tok), 1);
        // the two sides end up within one token of each other
        let sep_ix = enc.token_ids.iter().position(|&t| t == tok.sep_id()).unwrap();
        let seed_len = sep_ix - 1;
        let target_len = enc.len() - sep_ix - 2;
        assert!(seed_len.abs_diff(target_len) <= 1);
    }

    #[test]
    fn identical_texts_still_form_two_segments() {
        let tok = tok();
        let enc = encode_pair(
            "neural aspect",
            "similarity of research papers",
            "neural aspect",
            "similarity of research papers",
            &tok,
            512,
        )
        .unwrap();
        assert_eq!(enc.interior_separators(&tok), 1);
        assert!(enc.segment_ids.contains(&0));
        assert!(enc.segment_ids.contains(&1));
    }

    #[test]
    fn direction_changes_the_encoding() {
        let tok = tok();
        let a = encode_pair("neural aspect", "similarity of papers", "protein structures", "viral cycles", &tok, 512).unwrap();
        let b = encode_pair("protein structures", "viral cycles", "neural aspect", "similarity of papers", &tok, 512).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_text_is_an_error() {
        let tok = tok();
        assert!(encode_pair("", "a", "b", "c", &tok, 512).is_err());
        assert!(encode_pair("a", "b", "c", "  ", &tok, 512).is_err());
    }

    #[test]
    fn word_encoding_places_single_separator() {
        let seq = encode_pair_words("neural aspect", "similarity", "protein", "viral cycles", 512);
        assert_eq!(
            seq.iter().filter(|t| t.as_str() == super::super::tokenizer::SEP).count(),
            1
        );
        assert_eq!(seq[0], "neural");
        assert_eq!(*seq.last().unwrap(), "cycles");
    }

    #[test]
    fn word_encoding_truncates_longer_side() {
        let long = "alpha beta gamma ".repeat(300);
        let seq = encode_pair_words("t", &long, "u", "short text", 64);
        assert!(seq.len() <= 64);
        let sep_ix = seq.iter().position(|t| t == super::super::tokenizer::SEP).unwrap();
        // the short target survives intact
        assert_eq!(seq.len() - sep_ix - 1, 3);
    }
}

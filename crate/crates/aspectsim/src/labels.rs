//! Section-title normalization, label vocabulary induction, and positive
//! pair construction.
//!
//! Raw section titles from citations are normalized into canonical section
//! names (lowercase, letters only, combined titles split on "and", number
//! variants folded together). The nine most frequent canonical sections
//! become the positive label classes; everything else maps to `Other`, and
//! `None` is reserved for negative pairs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::RecordStore;
use crate::error::{Error, Result};

/// Class name for sections outside the top-k positive classes.
pub const OTHER_CLASS: &str = "Other";
/// Class name for negative (dissimilar) pairs.
pub const NONE_CLASS: &str = "None";

/// A normalized section name: lowercase alphabetic words separated by
/// single spaces. Construction goes through [`normalize_section_title`],
/// which guarantees the invariant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalSection(String);

impl CanonicalSection {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True iff `s` already satisfies the canonical-form invariant.
    pub fn is_canonical(s: &str) -> bool {
        !s.is_empty()
            && !s.starts_with(' ')
            && !s.ends_with(' ')
            && !s.contains("  ")
            && s.chars().all(|c| (c.is_alphabetic() && c.is_lowercase()) || c == ' ')
    }
}

impl fmt::Display for CanonicalSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Variant table plus stop-section list controlling normalization.
///
/// The file format is one mapping per line, `variant -> canonical`.
/// A mapping with an empty right-hand side drops the section entirely
/// (stop-section). Lines starting with `#` are comments.
#[derive(Debug, Clone)]
pub struct NormalizationConfig {
    variants: BTreeMap<String, String>,
    stop: HashSet<String>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        // Number variants fold onto the surface form each class uses in the
        // corpus distribution tables (mixed number: "experiment" singular,
        // "methods" plural).
        let table = [
            ("method", "methods"),
            ("result", "results"),
            ("experiments", "experiment"),
            ("conclusions", "conclusion"),
            ("discussions", "discussion"),
            ("evaluations", "evaluation"),
            ("backgrounds", "background"),
            ("material", "materials"),
            ("related works", "related work"),
            ("future works", "future work"),
            ("introductions", "introduction"),
            ("viruses", "virus"),
        ];
        NormalizationConfig {
            variants: table
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            stop: HashSet::new(),
        }
    }
}

impl NormalizationConfig {
    /// Parse a variant-table file. Unknown syntax is a config error.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_table(&text)
    }

    pub fn from_str_table(text: &str) -> Result<Self> {
        let mut cfg = NormalizationConfig {
            variants: BTreeMap::new(),
            stop: HashSet::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line.split_once("->").ok_or_else(|| {
                Error::Config(format!(
                    "variant table line {}: expected `variant -> canonical`, got {:?}",
                    lineno + 1,
                    line
                ))
            })?;
            let lhs = letters_only(lhs);
            let rhs = letters_only(rhs);
            if lhs.is_empty() {
                return Err(Error::Config(format!(
                    "variant table line {}: empty variant",
                    lineno + 1
                )));
            }
            if rhs.is_empty() {
                cfg.stop.insert(lhs);
            } else {
                cfg.variants.insert(lhs, rhs);
            }
        }
        Ok(cfg)
    }

    /// Serialize back to the plain-text table format.
    pub fn to_table_string(&self) -> String {
        let mut out = String::from("# section-title variant table: one `variant -> canonical` per line\n# an empty right-hand side drops the section\n");
        for (k, v) in &self.variants {
            out.push_str(&format!("{} -> {}\n", k, v));
        }
        let mut stops: Vec<_> = self.stop.iter().collect();
        stops.sort();
        for s in stops {
            out.push_str(&format!("{} ->\n", s));
        }
        out
    }

    fn apply_variant(&self, phrase: &str) -> Option<String> {
        if self.stop.contains(phrase) {
            return None;
        }
        Some(
            self.variants
                .get(phrase)
                .cloned()
                .unwrap_or_else(|| phrase.to_string()),
        )
    }
}

/// Lowercase, keep alphabetic characters only, collapse whitespace.
fn letters_only(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_alphabetic() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Normalize a raw section title into a set of canonical section names.
///
/// Rules, in order: lowercase; `&` becomes the token `and`; every
/// non-alphabetic character becomes whitespace and runs collapse; the
/// standalone token `and` splits the title into multiple sections; each
/// phrase is folded through the variant table. An input with no alphabetic
/// content yields the empty set.
pub fn normalize_section_title(raw: &str, cfg: &NormalizationConfig) -> BTreeSet<CanonicalSection> {
    let with_and = raw.replace('&', " and ");
    let flat = letters_only(&with_and);
    if flat.is_empty() {
        return BTreeSet::new();
    }
    let mut sections = BTreeSet::new();
    for phrase in flat.split(" and ") {
        let phrase = phrase.trim();
        // inner "and" tokens at phrase edges (e.g. "and and x") leave blanks
        let phrase = phrase.strip_prefix("and ").unwrap_or(phrase);
        let phrase = phrase.strip_suffix(" and").unwrap_or(phrase);
        if phrase.is_empty() || phrase == "and" {
            continue;
        }
        if let Some(mapped) = cfg.apply_variant(phrase) {
            debug_assert!(CanonicalSection::is_canonical(&mapped));
            sections.insert(CanonicalSection(mapped));
        }
    }
    sections
}

/// The 11-class label space: nine positive section classes ordered by
/// descending corpus frequency, then `Other`, then `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    positive_classes: Vec<String>,
    other_class: String,
    none_class: String,
}

impl LabelVocabulary {
    /// Build directly from an ordered list of positive class names.
    pub fn from_positive_classes(positive: Vec<String>) -> Self {
        LabelVocabulary {
            positive_classes: positive,
            other_class: OTHER_CLASS.to_string(),
            none_class: NONE_CLASS.to_string(),
        }
    }

    /// All class names in index order: positives, then `Other`, then `None`.
    pub fn classes(&self) -> Vec<&str> {
        let mut all: Vec<&str> = self.positive_classes.iter().map(|s| s.as_str()).collect();
        all.push(&self.other_class);
        all.push(&self.none_class);
        all
    }

    pub fn positive_classes(&self) -> &[String] {
        &self.positive_classes
    }

    pub fn len(&self) -> usize {
        self.positive_classes.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Deterministic class index in `[0, len)`.
    pub fn index_of(&self, class: &str) -> Option<usize> {
        if class == self.other_class {
            return Some(self.positive_classes.len());
        }
        if class == self.none_class {
            return Some(self.positive_classes.len() + 1);
        }
        self.positive_classes.iter().position(|c| c == class)
    }

    pub fn contains(&self, class: &str) -> bool {
        self.index_of(class).is_some()
    }

    /// Map a canonical section onto its label class (`Other` if outside the
    /// positive classes).
    pub fn class_of(&self, section: &CanonicalSection) -> &str {
        self.positive_classes
            .iter()
            .find(|c| c.as_str() == section.as_str())
            .unwrap_or(&self.other_class)
    }

    pub fn other_class(&self) -> &str {
        &self.other_class
    }

    pub fn none_class(&self) -> &str {
        &self.none_class
    }

    /// Sort a label set into class-index order (canonical serialization).
    pub fn sort_labels(&self, labels: &BTreeSet<String>) -> Vec<String> {
        let mut v: Vec<String> = labels.iter().cloned().collect();
        v.sort_by_key(|l| self.index_of(l).unwrap_or(usize::MAX));
        v
    }
}

/// One resolved citation occurrence: seed cites target in a section.
/// Instances are unique per `(seed, target, section)` triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CitationInstance {
    pub seed_id: String,
    pub target_id: String,
    pub section: CanonicalSection,
}

/// Induce the label vocabulary from resolved citation instances: the
/// `top_k` most frequent canonical sections become the positive classes
/// (descending count, ties lexicographic), followed by `Other` and `None`.
pub fn build_vocabulary(instances: &[CitationInstance], top_k: usize) -> Result<LabelVocabulary> {
    if instances.is_empty() {
        return Err(Error::Config(
            "cannot build label vocabulary from zero citation instances".into(),
        ));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for inst in instances {
        *counts.entry(inst.section.as_str()).or_insert(0) += 1;
    }
    if counts.len() < top_k {
        return Err(Error::Config(format!(
            "only {} distinct canonical sections, need at least top_k={}",
            counts.len(),
            top_k
        )));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    // descending count, ties lexicographic (BTreeMap iteration is already sorted)
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let positive = ranked
        .into_iter()
        .take(top_k)
        .map(|(name, _)| name.to_string())
        .collect();
    Ok(LabelVocabulary::from_positive_classes(positive))
}

/// An ordered (seed, target) document pair with its aspect label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentPair {
    pub seed_id: String,
    pub target_id: String,
    pub labels: BTreeSet<String>,
}

impl DocumentPair {
    pub fn is_negative(&self) -> bool {
        self.labels.len() == 1 && self.labels.contains(NONE_CLASS)
    }

    /// Unordered key for collision checks against negatives.
    pub fn unordered_key(&self) -> (String, String) {
        if self.seed_id <= self.target_id {
            (self.seed_id.clone(), self.target_id.clone())
        } else {
            (self.target_id.clone(), self.seed_id.clone())
        }
    }
}

/// Counters from citation resolution; drops are diagnostics, never errors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResolveStats {
    pub resolved_instances: usize,
    pub unresolved_citations: usize,
    pub empty_section_citations: usize,
    pub self_citations: usize,
}

/// Resolve every citation in the store into [`CitationInstance`]s:
/// targets resolved by id, external id, or title; self-citations,
/// unresolvable targets, and citations whose section normalizes to
/// nothing are counted and dropped. Instances are deduplicated per
/// `(seed, target, section)` and returned sorted.
pub fn resolve_instances(
    store: &RecordStore,
    cfg: &NormalizationConfig,
) -> (Vec<CitationInstance>, ResolveStats) {
    let mut stats = ResolveStats::default();
    let mut unique: BTreeSet<CitationInstance> = BTreeSet::new();
    for rec in store.records() {
        for cite in &rec.citations {
            let Some(target) = store.resolve(&cite.target_ref) else {
                stats.unresolved_citations += 1;
                continue;
            };
            if target.paper_id == rec.paper_id {
                stats.self_citations += 1;
                continue;
            }
            let sections = normalize_section_title(&cite.section_title_raw, cfg);
            if sections.is_empty() {
                stats.empty_section_citations += 1;
                continue;
            }
            for section in sections {
                unique.insert(CitationInstance {
                    seed_id: rec.paper_id.clone(),
                    target_id: target.paper_id.clone(),
                    section,
                });
            }
        }
    }
    stats.resolved_instances = unique.len();
    (unique.into_iter().collect(), stats)
}

/// Group resolved citation instances into positive pairs: one pair per
/// ordered (seed, target), labels merged over all of its citing sections
/// via the vocabulary. Output is sorted by (seed_id, target_id).
pub fn pairs_from_instances(
    instances: &[CitationInstance],
    vocab: &LabelVocabulary,
) -> Vec<DocumentPair> {
    let mut grouped: BTreeMap<(&str, &str), BTreeSet<String>> = BTreeMap::new();
    for inst in instances {
        grouped
            .entry((&inst.seed_id, &inst.target_id))
            .or_default()
            .insert(vocab.class_of(&inst.section).to_string());
    }
    grouped
        .into_iter()
        .map(|((seed, target), labels)| DocumentPair {
            seed_id: seed.to_string(),
            target_id: target.to_string(),
            labels,
        })
        .collect()
}

/// Per-class label counts over citation instances, mirroring the corpus
/// distribution table: positive classes in vocabulary order plus `Other`
/// absorbing the remainder exactly.
pub fn label_distribution(
    instances: &[CitationInstance],
    vocab: &LabelVocabulary,
) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for inst in instances {
        *counts.entry(vocab.class_of(&inst.section)).or_insert(0) += 1;
    }
    let mut rows: Vec<(String, u64)> = Vec::new();
    for class in vocab.positive_classes() {
        rows.push((class.clone(), counts.get(class.as_str()).copied().unwrap_or(0)));
    }
    rows.push((
        vocab.other_class().to_string(),
        counts.get(vocab.other_class()).copied().unwrap_or(0),
    ));
    rows
}

/// Write a `class,count` CSV of the label distribution.
pub fn write_label_distribution_csv(
    rows: &[(String, u64)],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        Error::Config(format!("cannot write label distribution {}: {}", path.display(), e))
    })?;
    w.write_record(["class", "count"])
        .and_then(|_| {
            for (class, count) in rows {
                w.write_record([class.as_str(), &count.to_string()])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Config(format!("csv write failed: {}", e)))?;
    Ok(())
}

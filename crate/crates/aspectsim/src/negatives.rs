//! Negative (dissimilar) pair sampling. A valid negative pair must
//! clear four constraints: it is not a positive pair in either
//! direction, the two papers were never co-cited by a third paper,
//! they share no authors, and they appeared in different venues.
//! Sampling is rejection-based over a seeded RNG stream, so a given
//! (records, count, seed) triple always yields the same pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{DocumentPair, NONE_CLASS};
use crate::corpus::PaperRecord;

/// Lowercase + collapse inner whitespace; used for author and venue
/// comparison.
pub fn normalize_name(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Why a candidate pair was rejected, in check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    SelfPair,
    Duplicate,
    PositivePair,
    Cocited,
    SharedAuthor,
    SameVenue,
}

impl Rejection {
    fn as_str(self) -> &'static str {
        match self {
            Rejection::SelfPair => "self_pair",
            Rejection::Duplicate => "duplicate",
            Rejection::PositivePair => "positive_pair",
            Rejection::Cocited => "cocited",
            Rejection::SharedAuthor => "shared_author",
            Rejection::SameVenue => "same_venue",
        }
    }
}

/// Read-only constraint indexes, built once over the full record store.
#[derive(Debug, Default)]
pub struct NegativeConstraintIndex {
    positive_pair_set: HashSet<(String, String)>,
    cocitation_index: HashMap<String, BTreeSet<String>>,
    author_index: HashMap<String, BTreeSet<String>>,
    venue_index: HashMap<String, BTreeSet<String>>,
    paper_authors: HashMap<String, BTreeSet<String>>,
    paper_venue: HashMap<String, String>,
}

fn unordered_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl NegativeConstraintIndex {
    /// Build all four indexes. `citation_edges` are resolved
    /// (citing, cited) paper-key pairs for the whole store — including
    /// citations whose section produced no label — since co-citation is
    /// a property of the citation graph, not of the label space.
    pub fn build(
        records: &[PaperRecord],
        positives: &[DocumentPair],
        citation_edges: &[(String, String)],
    ) -> Self {
        let mut idx = NegativeConstraintIndex::default();

        for pair in positives {
            idx.positive_pair_set
                .insert(unordered_key(&pair.seed_id, &pair.target_id));
        }

        let mut cited_by: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (citing, cited) in citation_edges {
            cited_by.entry(citing).or_default().insert(cited);
        }
        for targets in cited_by.values() {
            for a in targets {
                for b in targets {
                    if a < b {
                        idx.cocitation_index
                            .entry((*a).to_string())
                            .or_default()
                            .insert((*b).to_string());
                        idx.cocitation_index
                            .entry((*b).to_string())
                            .or_default()
                            .insert((*a).to_string());
                    }
                }
            }
        }

        for rec in records {
            let authors: BTreeSet<String> = rec
                .authors
                .iter()
                .map(|a| normalize_name(a))
                .filter(|a| !a.is_empty())
                .collect();
            for author in &authors {
                idx.author_index
                    .entry(author.clone())
                    .or_default()
                    .insert(rec.paper_id.clone());
            }
            let venue = normalize_name(&rec.venue);
            idx.venue_index
                .entry(venue.clone())
                .or_default()
                .insert(rec.paper_id.clone());
            idx.paper_authors.insert(rec.paper_id.clone(), authors);
            idx.paper_venue.insert(rec.paper_id.clone(), venue);
        }

        idx
    }

    pub fn knows(&self, key: &str) -> bool {
        self.paper_venue.contains_key(key)
    }

    fn require(&self, key: &str) -> Result<()> {
        if self.knows(key) {
            Ok(())
        } else {
            Err(Error::UnknownPaper(key.to_string()))
        }
    }

    /// First failing constraint for (a, b), or `None` if the pair is a
    /// valid negative. `a == b` is reported as [`Rejection::SelfPair`].
    pub fn violation(&self, a: &str, b: &str) -> Result<Option<Rejection>> {
        self.require(a)?;
        self.require(b)?;
        if a == b {
            return Ok(Some(Rejection::SelfPair));
        }
        if self.positive_pair_set.contains(&unordered_key(a, b)) {
            return Ok(Some(Rejection::PositivePair));
        }
        if self
            .cocitation_index
            .get(a)
            .map_or(false, |s| s.contains(b))
        {
            return Ok(Some(Rejection::Cocited));
        }
        let authors_a = &self.paper_authors[a];
        let authors_b = &self.paper_authors[b];
        if authors_a.intersection(authors_b).next().is_some() {
            return Ok(Some(Rejection::SharedAuthor));
        }
        if self.paper_venue[a] == self.paper_venue[b] {
            return Ok(Some(Rejection::SameVenue));
        }
        Ok(None)
    }

    pub fn is_valid_negative(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.violation(a, b)?.is_none())
    }

    pub fn positive_pair_count(&self) -> usize {
        self.positive_pair_set.len()
    }
}

/// How many negatives a run should draw for a given positive count.
/// Half-up rounding: the fractional .5 case rounds away from zero.
pub fn negative_count(positive_pairs: usize, ratio: f64) -> usize {
    (positive_pairs as f64 * ratio + 0.5).floor() as usize
}

/// Sampler outcome summary, written alongside the dataset as JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SamplerReport {
    pub requested: usize,
    pub produced: usize,
    pub attempts: u64,
    pub attempt_budget: u64,
    pub seed: u64,
    pub rejections: BTreeMap<String, u64>,
}

impl SamplerReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Draw exactly `count` valid negative pairs by rejection sampling over
/// the records' id universe. Pairs are emitted with `seed_id < target_id`
/// (direction carries no meaning for a None pair) and `labels == {None}`.
/// The attempt budget is 100 × count; exhausting it is an error that
/// reports how far sampling got.
pub fn sample_negatives(
    records: &[PaperRecord],
    idx: &NegativeConstraintIndex,
    count: usize,
    rng_seed: u64,
) -> Result<(Vec<DocumentPair>, SamplerReport)> {
    let mut ids: Vec<&str> = records.iter().map(|r| r.paper_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    for id in &ids {
        idx.require(id)?;
    }

    let budget = 100u64.saturating_mul(count as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut taken: HashSet<(String, String)> = HashSet::with_capacity(count);
    let mut out: Vec<DocumentPair> = Vec::with_capacity(count);
    let mut rejections: BTreeMap<String, u64> = BTreeMap::new();
    let mut attempts = 0u64;

    if count > 0 && ids.len() < 2 {
        return Err(Error::SamplingExhausted {
            requested: count,
            achieved: 0,
            attempts: 0,
        });
    }

    while out.len() < count {
        if attempts >= budget {
            return Err(Error::SamplingExhausted {
                requested: count,
                achieved: out.len(),
                attempts,
            });
        }
        attempts += 1;
        let a = ids[rng.gen_range(0..ids.len())];
        let b = ids[rng.gen_range(0..ids.len())];
        if a == b {
            *rejections.entry(Rejection::SelfPair.as_str().into()).or_default() += 1;
            continue;
        }
        let key = unordered_key(a, b);
        if taken.contains(&key) {
            *rejections.entry(Rejection::Duplicate.as_str().into()).or_default() += 1;
            continue;
        }
        match idx.violation(a, b)? {
            Some(reason) => {
                *rejections.entry(reason.as_str().into()).or_default() += 1;
            }
            None => {
                let mut labels = BTreeSet::new();
                labels.insert(NONE_CLASS.to_string());
                out.push(DocumentPair {
                    seed_id: key.0.clone(),
                    target_id: key.1.clone(),
                    labels,
                });
                taken.insert(key);
            }
        }
    }

    let report = SamplerReport {
        requested: count,
        produced: out.len(),
        attempts,
        attempt_budget: budget,
        seed: rng_seed,
        rejections,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn paper(id: &str, authors: &[&str], venue: &str) -> PaperRecord {
        PaperRecord {
            paper_id: id.into(),
            external_ids: Map::new(),
            title: format!("Paper {}", id),
            abstract_text: format!("Abstract {}", id),
            authors: authors.iter().map(|s| s.to_string()).collect(),
            venue: venue.into(),
            year: Some(2020),
            citations: vec![],
        }
    }

    fn pair(seed: &str, target: &str, label: &str) -> DocumentPair {
        let mut labels = BTreeSet::new();
        labels.insert(label.to_string());
        DocumentPair {
            seed_id: seed.into(),
            target_id: target.into(),
            labels,
        }
    }

    /// Ten papers engineered so that plenty of valid negatives exist:
    /// distinct authors and venues except where a constraint is being
    /// exercised on purpose.
    fn fixture() -> (Vec<PaperRecord>, Vec<DocumentPair>, Vec<(String, String)>) {
        let mut records = vec![
            paper("p0", &["Ada One"], "venue-a"),
            paper("p1", &["Ben Two"], "venue-b"),
            paper("p2", &["Cal Three"], "venue-c"),
            paper("p3", &["Dee Four"], "venue-d"),
            paper("p4", &["Eli Five"], "venue-e"),
            paper("p5", &["Fay Six"], "venue-f"),
            paper("p6", &["Gil Seven"], "venue-g"),
            paper("p7", &["Hal Eight"], "venue-h"),
            paper("p8", &["ada  ONE"], "venue-i"), // shares an author with p0 after normalization
            paper("p9", &["Ira Ten"], "venue-a"),  // shares a venue with p0
        ];
        records[0].citations = vec![]; // citations resolved separately below
        let positives = vec![pair("p0", "p1", "introduction")];
        // p2 cites p3 and p4, so p3/p4 are co-cited
        let edges = vec![
            ("p2".to_string(), "p3".to_string()),
            ("p2".to_string(), "p4".to_string()),
            ("p0".to_string(), "p1".to_string()),
        ];
        (records, positives, edges)
    }

    #[test]
    fn shared_author_pair_is_rejected() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert_eq!(
            idx.violation("p0", "p8").unwrap(),
            Some(Rejection::SharedAuthor)
        );
        assert!(!idx.is_valid_negative("p8", "p0").unwrap());
    }

    #[test]
    fn positive_pair_rejected_in_both_directions() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert_eq!(
            idx.violation("p0", "p1").unwrap(),
            Some(Rejection::PositivePair)
        );
        assert_eq!(
            idx.violation("p1", "p0").unwrap(),
            Some(Rejection::PositivePair)
        );
    }

    #[test]
    fn cocited_and_same_venue_rejected() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert_eq!(idx.violation("p3", "p4").unwrap(), Some(Rejection::Cocited));
        assert_eq!(
            idx.violation("p0", "p9").unwrap(),
            Some(Rejection::SameVenue)
        );
    }

    #[test]
    fn clean_pair_is_valid() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert!(idx.is_valid_negative("p5", "p6").unwrap());
        assert_eq!(idx.violation("p5", "p6").unwrap(), None);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert!(matches!(
            idx.violation("p5", "ghost"),
            Err(Error::UnknownPaper(_))
        ));
    }

    #[test]
    fn self_pair_reports_self_rejection() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        assert_eq!(idx.violation("p5", "p5").unwrap(), Some(Rejection::SelfPair));
    }

    #[test]
    fn count_zero_yields_empty_list() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        let (pairs, report) = sample_negatives(&records, &idx, 0, 7).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(report.attempts, 0);
    }

    #[test]
    fn same_seed_same_pairs_byte_identical() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        let (a, _) = sample_negatives(&records, &idx, 5, 42).unwrap();
        let (b, _) = sample_negatives(&records, &idx, 5, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let (c, _) = sample_negatives(&records, &idx, 5, 43).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn emitted_negatives_satisfy_every_constraint() {
        let (records, positives, edges) = fixture();
        let idx = NegativeConstraintIndex::build(&records, &positives, &edges);
        let (pairs, report) = sample_negatives(&records, &idx, 10, 1).unwrap();
        assert_eq!(pairs.len(), 10);
        let mut seen = HashSet::new();
        for p in &pairs {
            assert!(p.seed_id < p.target_id);
            assert_eq!(p.labels.len(), 1);
            assert!(p.labels.contains(NONE_CLASS));
            assert!(seen.insert(unordered_key(&p.seed_id, &p.target_id)));
            // re-check against raw records, not the index
            let a = records.iter().find(|r| r.paper_id == p.seed_id).unwrap();
            let b = records.iter().find(|r| r.paper_id == p.target_id).unwrap();
            let authors_a: HashSet<String> =
                a.authors.iter().map(|x| normalize_name(x)).collect();
            let authors_b: HashSet<String> =
                b.authors.iter().map(|x| normalize_name(x)).collect();
            assert!(authors_a.is_disjoint(&authors_b));
            assert_ne!(normalize_name(&a.venue), normalize_name(&b.venue));
            for pos in &positives {
                assert_ne!(
                    unordered_key(&pos.seed_id, &pos.target_id),
                    unordered_key(&p.seed_id, &p.target_id)
                );
            }
        }
        assert_eq!(
            report.attempts,
            report.produced as u64 + report.rejections.values().sum::<u64>()
        );
    }

    #[test]
    fn exhaustion_reports_achieved_count() {
        // three papers, all in one venue: no valid negative exists
        let records = vec![
            paper("a", &["A"], "same"),
            paper("b", &["B"], "same"),
            paper("c", &["C"], "same"),
        ];
        let idx = NegativeConstraintIndex::build(&records, &[], &[]);
        match sample_negatives(&records, &idx, 2, 11) {
            Err(Error::SamplingExhausted {
                requested,
                achieved,
                attempts,
            }) => {
                assert_eq!(requested, 2);
                assert_eq!(achieved, 0);
                assert_eq!(attempts, 200);
            }
            other => panic!("expected exhaustion, got {:?}", other.map(|(p, _)| p.len())),
        }
    }

    #[test]
    fn ratio_arithmetic_matches_published_counts() {
        assert_eq!(negative_count(48_550, 0.5), 24_275);
        assert_eq!(negative_count(66_165, 0.5), 33_083);
        assert_eq!(negative_count(0, 0.5), 0);
        assert_eq!(negative_count(7, 1.0), 7);
    }
}

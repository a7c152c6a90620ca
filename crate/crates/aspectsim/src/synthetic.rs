//! Deterministic synthetic corpora for fixtures, demos, and benchmarks.
//!
//! Papers are grouped into topics with disjoint vocabularies and carry a
//! role whose cue words appear in their text. Citations point at
//! same-topic papers and land in the section conventional for the
//! target's role, so the (pair text -> section) mapping is learnable and
//! pairs across topics are reliably dissimilar. Section titles are
//! emitted in varied raw spellings to exercise normalization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::corpus::{PaperRecord, RawCitation};
use crate::error::{Error, Result};

/// Role cue lexicons; one role per row, all rows pairwise disjoint.
pub const ROLE_CUES: [&str; 12] = [
    "survey overview landscape taxonomy panorama compendium",
    "background context history foundations premise rationale",
    "algorithm architecture procedure pipeline optimizer encoder",
    "corpus dataset annotation collection specimens inventory",
    "benchmark protocol trials setup apparatus calibration",
    "results scores gains improvements findings outcomes",
    "discussion interpretation implications caveats limitations critique",
    "comparison predecessors lineage antecedents parallels counterparts",
    "evaluation metrics assessment judges rubric scoring",
    "conclusion summary takeaways closing recapitulation verdict",
    "roadmap extensions directions prospects horizons followup",
    "appendix supplement addendum proofs derivations listings",
];

/// Canonical section where papers of each role are cited.
pub const ROLE_SECTIONS: [&str; 12] = [
    "introduction",
    "background",
    "methods",
    "materials",
    "experiment",
    "results",
    "discussion",
    "related work",
    "evaluation",
    "conclusion",
    "future work",
    "appendix",
];

/// Raw spellings per role, folded back together by normalization.
const SECTION_SPELLINGS: [&[&str]; 12] = [
    &["Introduction", "1. Introduction", "INTRODUCTION", "Introductions"],
    &["Background", "2. Background", "BACKGROUND"],
    &["Methods", "Method", "2. Methods", "METHODS"],
    &["Materials", "Material"],
    &["Experiment", "Experiments", "4. Experiments", "EXPERIMENTS"],
    &["Results", "Result", "3. Results"],
    &["Discussion", "Discussions", "5. Discussion"],
    &["Related Work", "Related Works", "2. Related Work", "RELATED WORK"],
    &["Evaluation", "Evaluations", "4. Evaluation"],
    &["Conclusion", "Conclusions", "6. Conclusion"],
    &["Future Work", "Future Works"],
    &["Appendix", "APPENDIX"],
];

/// Compound spellings that normalize to two sections at once, keyed by
/// the role they can replace.
const COMPOUND_SPELLINGS: [(usize, &str); 4] = [
    (3, "Materials and Methods"),
    (5, "Results and Discussion"),
    (9, "Conclusion and Future Work"),
    (9, "Conclusion & Future Work"),
];

pub const FILLER_WORDS: [&str; 14] = [
    "the", "of", "we", "this", "propose", "show", "that", "with", "for", "our", "new", "using",
    "based", "approach",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub papers: usize,
    pub topics: usize,
    /// Distinct pseudo-words in each topic's vocabulary.
    pub topic_words: usize,
    pub cites_min: usize,
    pub cites_max: usize,
    pub abstract_words: usize,
    /// Zipf exponent over roles; larger skews the section distribution.
    pub role_skew: f64,
    /// Rate of compound section titles carrying two labels.
    pub compound_rate: f64,
    /// Rate of citations referencing the target by title instead of id.
    pub title_ref_rate: f64,
    pub unresolved_rate: f64,
    pub empty_section_rate: f64,
    pub self_cite_rate: f64,
    pub cross_topic_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            papers: 120,
            topics: 6,
            topic_words: 30,
            cites_min: 4,
            cites_max: 8,
            abstract_words: 24,
            role_skew: 1.1,
            compound_rate: 0.08,
            title_ref_rate: 0.1,
            unresolved_rate: 0.0,
            empty_section_rate: 0.0,
            self_cite_rate: 0.0,
            cross_topic_rate: 0.0,
            seed: 13,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.papers == 0 || self.topics == 0 || self.topic_words == 0 {
            return Err(Error::Config(
                "papers, topics, and topic_words must be positive".into(),
            ));
        }
        if self.papers < self.topics * 2 {
            return Err(Error::Config(format!(
                "{} papers cannot cover {} topics with citable peers",
                self.papers, self.topics
            )));
        }
        if self.cites_min > self.cites_max {
            return Err(Error::Config("cites_min exceeds cites_max".into()));
        }
        for rate in [
            self.compound_rate,
            self.title_ref_rate,
            self.unresolved_rate,
            self.empty_section_rate,
            self.self_cite_rate,
            self.cross_topic_rate,
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("rate {rate} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 6] = ["", "", "n", "r", "s", "l"];
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
    w
}

fn reserved_words() -> BTreeSet<String> {
    let mut reserved: BTreeSet<String> = FILLER_WORDS.iter().map(|w| w.to_string()).collect();
    for row in ROLE_CUES {
        reserved.extend(row.split_whitespace().map(|w| w.to_string()));
    }
    for extra in ["study", "journal", "notes", "on", "and", "a"] {
        reserved.insert(extra.to_string());
    }
    reserved
}

fn topic_vocabularies(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let reserved = reserved_words();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut topics = Vec::with_capacity(config.topics);
    for _ in 0..config.topics {
        let mut words = Vec::with_capacity(config.topic_words);
        while words.len() < config.topic_words {
            let w = pseudo_word(rng);
            if reserved.contains(&w) || used.contains(&w) {
                continue;
            }
            used.insert(w.clone());
            words.push(w);
        }
        topics.push(words);
    }
    topics
}

fn zipf_role(rng: &mut ChaCha8Rng, skew: f64) -> usize {
    let weights: Vec<f64> = (0..ROLE_CUES.len())
        .map(|i| 1.0 / ((i + 1) as f64).powf(skew))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    ROLE_CUES.len() - 1
}

fn role_cues(role: usize) -> Vec<&'static str> {
    ROLE_CUES[role].split_whitespace().collect()
}

fn compose_abstract(
    rng: &mut ChaCha8Rng,
    topic_vocab: &[String],
    cues: &[&str],
    n_words: usize,
) -> String {
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let draw = rng.gen::<f64>();
        let w = if draw < 0.55 {
            topic_vocab[rng.gen_range(0..topic_vocab.len())].to_string()
        } else if draw < 0.80 {
            cues[rng.gen_range(0..cues.len())].to_string()
        } else {
            FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())].to_string()
        };
        words.push(w);
    }
    words.join(" ")
}

/// Generate a corpus. The same configuration always yields the same
/// records.
pub fn generate_corpus(config: &SyntheticConfig) -> Result<Vec<PaperRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topics = topic_vocabularies(config, &mut rng);

    let roles: Vec<usize> = (0..config.papers)
        .map(|_| zipf_role(&mut rng, config.role_skew))
        .collect();
    let paper_topics: Vec<usize> = (0..config.papers).map(|i| i % config.topics).collect();

    let mut titles = Vec::with_capacity(config.papers);
    for i in 0..config.papers {
        let vocab = &topics[paper_topics[i]];
        let cues = role_cues(roles[i]);
        let cue = cues[rng.gen_range(0..cues.len())];
        let a = &vocab[rng.gen_range(0..vocab.len())];
        let b = &vocab[rng.gen_range(0..vocab.len())];
        titles.push(format!("a {cue} study of {a} and {b} {i}"));
    }

    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); config.topics];
    for (i, &t) in paper_topics.iter().enumerate() {
        by_topic[t].push(i);
    }

    let mut unresolved_counter = 0usize;
    let mut records = Vec::with_capacity(config.papers);
    for i in 0..config.papers {
        let topic = paper_topics[i];
        let vocab = &topics[topic];
        let cues = role_cues(roles[i]);
        let abstract_text = compose_abstract(&mut rng, vocab, &cues, config.abstract_words);

        let n_cites = rng.gen_range(config.cites_min..=config.cites_max);
        let mut citations = Vec::with_capacity(n_cites);
        for _ in 0..n_cites {
            if rng.gen::<f64>() < config.unresolved_rate {
                unresolved_counter += 1;
                citations.push(RawCitation {
                    target_ref: format!("missing-{unresolved_counter}"),
                    section_title_raw: "Introduction".to_string(),
                });
                continue;
            }
            if rng.gen::<f64>() < config.self_cite_rate {
                citations.push(RawCitation {
                    target_ref: format!("syn-{i:04}"),
                    section_title_raw: "Methods".to_string(),
                });
                continue;
            }
            let pool_topic = if config.topics > 1 && rng.gen::<f64>() < config.cross_topic_rate {
                (topic + 1 + rng.gen_range(0..config.topics - 1)) % config.topics
            } else {
                topic
            };
            let pool = &by_topic[pool_topic];
            let target = loop {
                let cand = pool[rng.gen_range(0..pool.len())];
                if cand != i {
                    break cand;
                }
            };
            let target_role = roles[target];
            let section = if rng.gen::<f64>() < config.empty_section_rate {
                String::new()
            } else if rng.gen::<f64>() < config.compound_rate {
                let matching: Vec<&str> = COMPOUND_SPELLINGS
                    .iter()
                    .filter(|(r, _)| *r == target_role)
                    .map(|(_, s)| *s)
                    .collect();
                if matching.is_empty() {
                    let spellings = SECTION_SPELLINGS[target_role];
                    spellings[rng.gen_range(0..spellings.len())].to_string()
                } else {
                    matching[rng.gen_range(0..matching.len())].to_string()
                }
            } else {
                let spellings = SECTION_SPELLINGS[target_role];
                spellings[rng.gen_range(0..spellings.len())].to_string()
            };
            let target_ref = if rng.gen::<f64>() < config.title_ref_rate {
                titles[target].clone()
            } else {
                format!("syn-{target:04}")
            };
            citations.push(RawCitation {
                target_ref,
                section_title_raw: section,
            });
        }

        let venue_word = &topics[topic][0];
        records.push(PaperRecord {
            paper_id: format!("syn-{i:04}"),
            external_ids: [("doi".to_string(), format!("10.5555/syn.{i:04}"))]
                .into_iter()
                .collect(),
            title: titles[i].clone(),
            abstract_text,
            authors: vec![
                format!("A. {}", capitalize(&topics[topic][1 % topics[topic].len()])),
                format!("B. {}", capitalize(&topics[topic][2 % topics[topic].len()])),
            ],
            venue: format!("journal of {venue_word}"),
            year: Some(2013 + (i as i32 * 7) % 10),
            citations,
        });
    }
    Ok(records)
}

fn capitalize(w: &str) -> String {
    let mut chars = w.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Write records as an archive directory of XML files, `per_file` papers
/// each, readable by the archive parser.
pub fn write_acl_corpus(records: &[PaperRecord], dir: &Path, per_file: usize) -> Result<()> {
    if per_file == 0 {
        return Err(Error::Config("per_file must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (chunk_no, chunk) in records.chunks(per_file).enumerate() {
        let path = dir.join(format!("papers_{chunk_no:03}.xml"));
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
        );
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "<papers>")?;
            for rec in chunk {
                writeln!(out, "  <paper id=\"{}\">", xml_escape(&rec.paper_id))?;
                writeln!(out, "    <title>{}</title>", xml_escape(&rec.title))?;
                writeln!(
                    out,
                    "    <abstract>{}</abstract>",
                    xml_escape(&rec.abstract_text)
                )?;
                if !rec.venue.is_empty() {
                    writeln!(out, "    <venue>{}</venue>", xml_escape(&rec.venue))?;
                }
                if let Some(year) = rec.year {
                    writeln!(out, "    <year>{year}</year>")?;
                }
                if !rec.authors.is_empty() {
                    writeln!(out, "    <authors>")?;
                    for a in &rec.authors {
                        writeln!(out, "      <author>{}</author>", xml_escape(a))?;
                    }
                    writeln!(out, "    </authors>")?;
                }
                if !rec.external_ids.is_empty() {
                    writeln!(out, "    <externalIds>")?;
                    for (scheme, value) in &rec.external_ids {
                        writeln!(
                            out,
                            "      <id scheme=\"{}\">{}</id>",
                            xml_escape(scheme),
                            xml_escape(value)
                        )?;
                    }
                    writeln!(out, "    </externalIds>")?;
                }
                if !rec.citations.is_empty() {
                    writeln!(out, "    <citations>")?;
                    for c in &rec.citations {
                        writeln!(
                            out,
                            "      <cite target=\"{}\" section=\"{}\"/>",
                            xml_escape(&c.target_ref),
                            xml_escape(&c.section_title_raw)
                        )?;
                    }
                    writeln!(out, "    </citations>")?;
                }
                writeln!(out, "  </paper>")?;
            }
            writeln!(out, "</papers>")?;
            out.flush()
        };
        write().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus_vec, CorpusFormat, RecordStore};
    use crate::labels::{
        build_vocabulary, normalize_section_title, pairs_from_instances, resolve_instances,
        NormalizationConfig,
    };
    use tempfile::tempdir;

    #[test]
    fn generation_is_deterministic() {
        let config = SyntheticConfig::default();
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a, b);
        let other = SyntheticConfig {
            seed: 14,
            ..config
        };
        assert_ne!(a, generate_corpus(&other).unwrap());
    }

    #[test]
    fn topics_share_only_reserved_words() {
        let config = SyntheticConfig::default();
        let records = generate_corpus(&config).unwrap();
        let reserved = reserved_words();
        let mut per_topic: Vec<BTreeSet<String>> = vec![BTreeSet::new(); config.topics];
        for (i, rec) in records.iter().enumerate() {
            let words = rec
                .abstract_text
                .split_whitespace()
                .filter(|w| !reserved.contains(*w))
                .map(|w| w.to_string());
            per_topic[i % config.topics].extend(words);
        }
        for a in 0..config.topics {
            for b in (a + 1)..config.topics {
                let shared: Vec<&String> = per_topic[a].intersection(&per_topic[b]).collect();
                assert!(shared.is_empty(), "topics {a} and {b} share {shared:?}");
            }
        }
    }

    #[test]
    fn citations_follow_role_sections() {
        let records = generate_corpus(&SyntheticConfig::default()).unwrap();
        let cfg = NormalizationConfig::default();
        let store = RecordStore::new(records.clone());
        let canonical: BTreeSet<&str> = ROLE_SECTIONS.iter().copied().collect();
        let mut seen_spellings: BTreeSet<String> = BTreeSet::new();
        for rec in &records {
            for cite in &rec.citations {
                seen_spellings.insert(cite.section_title_raw.clone());
                let target = store.resolve(&cite.target_ref).expect("resolvable");
                assert_ne!(target.paper_id, rec.paper_id);
                for section in normalize_section_title(&cite.section_title_raw, &cfg) {
                    assert!(
                        canonical.contains(section.as_str()),
                        "unexpected section {section}"
                    );
                }
            }
        }
        assert!(seen_spellings.iter().any(|s| s.contains("and")));
        assert!(seen_spellings
            .iter()
            .any(|s| s.chars().any(|c| c.is_ascii_digit())));
        assert!(seen_spellings
            .iter()
            .any(|s| s.len() > 3 && s.chars().all(|c| !c.is_lowercase())));
    }

    #[test]
    fn pipeline_builds_vocabulary_and_pairs() {
        let records = generate_corpus(&SyntheticConfig::default()).unwrap();
        let store = RecordStore::new(records);
        let cfg = NormalizationConfig::default();
        let (instances, stats) = resolve_instances(&store, &cfg);
        assert_eq!(stats.unresolved_citations, 0);
        assert_eq!(stats.self_citations, 0);
        assert_eq!(stats.empty_section_citations, 0);
        assert!(instances.len() > 300, "{} instances", instances.len());

        let vocab = build_vocabulary(&instances, 9).unwrap();
        assert_eq!(vocab.positive_classes().len(), 9);
        let pairs = pairs_from_instances(&instances, &vocab);
        assert!(pairs.len() > 200);
        assert!(pairs.iter().any(|p| p.labels.len() > 1));
    }

    #[test]
    fn noise_rates_surface_in_resolution_stats() {
        let config = SyntheticConfig {
            unresolved_rate: 0.15,
            empty_section_rate: 0.15,
            self_cite_rate: 0.15,
            ..SyntheticConfig::default()
        };
        let records = generate_corpus(&config).unwrap();
        let store = RecordStore::new(records);
        let (_, stats) = resolve_instances(&store, &NormalizationConfig::default());
        assert!(stats.unresolved_citations > 0);
        assert!(stats.self_citations > 0);
        assert!(stats.empty_section_citations > 0);
    }

    #[test]
    fn written_archive_parses_back_to_the_same_records() {
        let tmp = tempdir().unwrap();
        let config = SyntheticConfig {
            papers: 30,
            ..SyntheticConfig::default()
        };
        let records = generate_corpus(&config).unwrap();
        let dir = tmp.path().join("corpus");
        write_acl_corpus(&records, &dir, 7).unwrap();
        assert_eq!(dir.read_dir().unwrap().count(), 5);

        let (parsed, warnings) = parse_corpus_vec(&dir, CorpusFormat::AclStyle).unwrap();
        assert_eq!(warnings.malformed_records, 0);
        assert_eq!(parsed, records);
    }

    #[test]
    fn config_validation_rejects_degenerate_setups() {
        let mut config = SyntheticConfig::default();
        config.papers = 4;
        config.topics = 6;
        assert!(generate_corpus(&config).is_err());
        config = SyntheticConfig::default();
        config.compound_rate = 1.5;
        assert!(generate_corpus(&config).is_err());
        config = SyntheticConfig::default();
        config.cites_min = 9;
        config.cites_max = 2;
        assert!(generate_corpus(&config).is_err());
    }
}

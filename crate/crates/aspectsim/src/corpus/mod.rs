//! Corpus ingestion: parse citation-annotated archives into normalized
//! [`PaperRecord`]s, back-fill metadata, and filter invalid or duplicate
//! papers.

mod acl;
mod cord;
pub mod enrich;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One citation occurrence as it appears in the source archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCitation {
    /// Target paper key or unresolved bibliographic string.
    pub target_ref: String,
    /// Section title preserved verbatim from the source; may be empty.
    pub section_title_raw: String,
}

/// A normalized paper with its outbound citations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    #[serde(default)]
    pub external_ids: BTreeMap<String, String>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub citations: Vec<RawCitation>,
}

impl PaperRecord {
    pub fn has_text(&self) -> bool {
        !self.title.trim().is_empty() && !self.abstract_text.trim().is_empty()
    }
}

/// Archive layout of a corpus directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One XML file per paper (or a root element holding several), with
    /// `<cite target=... section=...>` citation annotations.
    AclStyle,
    /// One JSON file per paper with `body_text` passages, `cite_spans`,
    /// and `bib_entries`.
    Cord19Style,
}

/// Counters accumulated while parsing; malformed records are skipped,
/// never fatal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseWarnings {
    pub malformed_records: usize,
    pub duplicate_paper_ids: usize,
}

/// Streaming corpus parser. Yields one record per source paper in sorted
/// file order; the first fatal error (unreadable or structurally broken
/// file) ends the stream.
pub struct CorpusReader {
    files: VecDeque<PathBuf>,
    format: CorpusFormat,
    pending: VecDeque<PaperRecord>,
    warnings: ParseWarnings,
    seen_ids: HashSet<String>,
    fused: bool,
}

impl CorpusReader {
    pub fn warnings(&self) -> &ParseWarnings {
        &self.warnings
    }

    fn load_next_file(&mut self) -> Result<bool> {
        let Some(path) = self.files.pop_front() else {
            return Ok(false);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::CorpusFile {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let parsed = match self.format {
            CorpusFormat::AclStyle => acl::parse_file(&path, &text, &mut self.warnings)?,
            CorpusFormat::Cord19Style => cord::parse_file(&path, &text, &mut self.warnings)?,
        };
        for rec in parsed {
            if rec.paper_id.is_empty() {
                self.warnings.malformed_records += 1;
                continue;
            }
            if !self.seen_ids.insert(rec.paper_id.clone()) {
                self.warnings.duplicate_paper_ids += 1;
                continue;
            }
            self.pending.push_back(rec);
        }
        Ok(true)
    }
}

impl Iterator for CorpusReader {
    type Item = Result<PaperRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        loop {
            if let Some(rec) = self.pending.pop_front() {
                return Some(Ok(rec));
            }
            match self.load_next_file() {
                Ok(true) => continue,
                Ok(false) => return None,
                Err(e) => {
                    self.fused = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Open a corpus directory for streaming. The path must exist; individual
/// malformed records are counted and skipped.
pub fn parse_corpus(corpus_path: &Path, format: CorpusFormat) -> Result<CorpusReader> {
    if !corpus_path.is_dir() {
        return Err(Error::CorpusFile {
            path: corpus_path.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let ext = match format {
        CorpusFormat::AclStyle => "xml",
        CorpusFormat::Cord19Style => "json",
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus_path)
        .map_err(|e| Error::io(corpus_path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == ext).unwrap_or(false))
        .collect();
    files.sort();
    Ok(CorpusReader {
        files: files.into(),
        format,
        pending: VecDeque::new(),
        warnings: ParseWarnings::default(),
        seen_ids: HashSet::new(),
        fused: false,
    })
}

/// Parse an entire corpus into memory, returning records and warnings.
pub fn parse_corpus_vec(
    corpus_path: &Path,
    format: CorpusFormat,
) -> Result<(Vec<PaperRecord>, ParseWarnings)> {
    let mut reader = parse_corpus(corpus_path, format)?;
    let mut records = Vec::new();
    for item in reader.by_ref() {
        records.push(item?);
    }
    Ok((records, reader.warnings().clone()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub kept: usize,
    pub dropped_textless: usize,
    pub dropped_duplicates: usize,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized title key used for deduplication and citation resolution.
pub fn title_key(title: &str) -> String {
    collapse_ws(&title.to_lowercase())
}

/// Drop papers without text and deduplicate. A duplicate shares a
/// normalized title+year key, any external id, or a paper id with an
/// earlier retained record; the first occurrence wins and input order is
/// preserved.
pub fn filter_and_dedup(records: Vec<PaperRecord>) -> (Vec<PaperRecord>, FilterStats) {
    let mut stats = FilterStats::default();
    let mut seen_title_year: HashSet<(String, Option<i32>)> = HashSet::new();
    let mut seen_external: HashSet<(String, String)> = HashSet::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut kept = Vec::with_capacity(records.len());

    for rec in records {
        if !rec.has_text() {
            stats.dropped_textless += 1;
            continue;
        }
        let ty_key = (title_key(&rec.title), rec.year);
        let dup = seen_ids.contains(&rec.paper_id)
            || seen_title_year.contains(&ty_key)
            || rec
                .external_ids
                .iter()
                .any(|(s, v)| seen_external.contains(&(s.clone(), v.clone())));
        if dup {
            stats.dropped_duplicates += 1;
            continue;
        }
        seen_ids.insert(rec.paper_id.clone());
        seen_title_year.insert(ty_key);
        for (s, v) in &rec.external_ids {
            seen_external.insert((s.clone(), v.clone()));
        }
        kept.push(rec);
    }
    stats.kept = kept.len();
    (kept, stats)
}

/// Indexed collection of retained records: lookups by paper id, external
/// id value, and normalized title.
pub struct RecordStore {
    records: Vec<PaperRecord>,
    by_id: HashMap<String, usize>,
    /// external id value -> unique record (None when ambiguous)
    by_external_value: HashMap<String, Option<usize>>,
    /// normalized title -> unique record (None when ambiguous)
    by_title: HashMap<String, Option<usize>>,
}

impl RecordStore {
    pub fn new(records: Vec<PaperRecord>) -> Self {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_external_value: HashMap<String, Option<usize>> = HashMap::new();
        let mut by_title: HashMap<String, Option<usize>> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            by_id.insert(rec.paper_id.clone(), i);
            for v in rec.external_ids.values() {
                by_external_value
                    .entry(v.clone())
                    .and_modify(|e| *e = None)
                    .or_insert(Some(i));
            }
            by_title
                .entry(title_key(&rec.title))
                .and_modify(|e| *e = None)
                .or_insert(Some(i));
        }
        RecordStore {
            records,
            by_id,
            by_external_value,
            by_title,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PaperRecord] {
        &self.records
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.by_id.get(paper_id).map(|&i| &self.records[i])
    }

    /// Resolve a citation target reference: exact paper id, then external
    /// id value, then unique normalized title.
    pub fn resolve(&self, target_ref: &str) -> Option<&PaperRecord> {
        if let Some(&i) = self.by_id.get(target_ref) {
            return Some(&self.records[i]);
        }
        if let Some(Some(i)) = self.by_external_value.get(target_ref) {
            return Some(&self.records[*i]);
        }
        if let Some(Some(i)) = self.by_title.get(&title_key(target_ref)) {
            return Some(&self.records[*i]);
        }
        None
    }

    /// All resolved (citing, cited) edges, independent of section labels;
    /// self-citations and unresolvable targets are omitted. Sorted and
    /// deduplicated.
    pub fn citation_edges(&self) -> Vec<(String, String)> {
        let mut edges = std::collections::BTreeSet::new();
        for rec in &self.records {
            for cite in &rec.citations {
                if let Some(target) = self.resolve(&cite.target_ref) {
                    if target.paper_id != rec.paper_id {
                        edges.insert((rec.paper_id.clone(), target.paper_id.clone()));
                    }
                }
            }
        }
        edges.into_iter().collect()
    }
}

/// Write records as JSONL, one record per line, stable field order.
pub fn save_records(records: &[PaperRecord], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        let line = serde_json::to_string(rec)?;
        writeln!(file, "{}", line).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Load a JSONL record store written by [`save_records`].
pub fn load_records(path: &Path) -> Result<Vec<PaperRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PaperRecord = serde_json::from_str(&line).map_err(|e| Error::DatasetSchema {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

//! CORD-19-style corpus files: one JSON document per paper with
//! `body_text` passages carrying `cite_spans` into `bib_entries`.
//!
//! Citation targets are taken from the bib entry's `link` field when
//! present, otherwise from its title (resolved against the record store
//! later). Venue, year, and external ids may appear at the top level.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{ParseWarnings, PaperRecord, RawCitation};
use crate::error::Result;

#[derive(Deserialize)]
struct CordFile {
    paper_id: String,
    #[serde(default)]
    metadata: CordMetadata,
    #[serde(default)]
    r#abstract: Vec<CordPassage>,
    #[serde(default)]
    body_text: Vec<CordPassage>,
    #[serde(default)]
    bib_entries: BTreeMap<String, CordBibEntry>,
    #[serde(default)]
    venue: String,
    #[serde(default)]
    year: Option<i32>,
    #[serde(default)]
    external_ids: BTreeMap<String, String>,
}

#[derive(Deserialize, Default)]
struct CordMetadata {
    #[serde(default)]
    title: String,
    #[serde(default)]
    authors: Vec<CordAuthor>,
}

#[derive(Deserialize)]
struct CordAuthor {
    #[serde(default)]
    first: String,
    #[serde(default)]
    middle: Vec<String>,
    #[serde(default)]
    last: String,
}

impl CordAuthor {
    fn display_name(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if !self.first.is_empty() {
            parts.push(&self.first);
        }
        for m in &self.middle {
            if !m.is_empty() {
                parts.push(m);
            }
        }
        if !self.last.is_empty() {
            parts.push(&self.last);
        }
        parts.join(" ")
    }
}

#[derive(Deserialize)]
struct CordPassage {
    #[serde(default)]
    text: String,
    #[serde(default)]
    section: String,
    #[serde(default)]
    cite_spans: Vec<CordCiteSpan>,
}

#[derive(Deserialize)]
struct CordCiteSpan {
    #[serde(default)]
    ref_id: Option<String>,
}

#[derive(Deserialize)]
struct CordBibEntry {
    #[serde(default)]
    title: String,
    #[serde(default)]
    link: Option<String>,
}

pub(super) fn parse_file(
    _path: &Path,
    text: &str,
    warnings: &mut ParseWarnings,
) -> Result<Vec<PaperRecord>> {
    // one JSON document per file; a document that does not deserialize is
    // a malformed record, not a fatal error
    let parsed: CordFile = match serde_json::from_str(text) {
        Ok(p) => p,
        Err(_) => {
            warnings.malformed_records += 1;
            return Ok(Vec::new());
        }
    };

    let abstract_text = parsed
        .r#abstract
        .iter()
        .map(|p| p.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ");

    let mut citations = Vec::new();
    for passage in &parsed.body_text {
        for span in &passage.cite_spans {
            let Some(ref_id) = span.ref_id.as_deref() else {
                continue; // unlinked citation marker
            };
            let Some(bib) = parsed.bib_entries.get(ref_id) else {
                warnings.malformed_records += 1;
                continue;
            };
            let target_ref = match bib.link.as_deref() {
                Some(link) if !link.is_empty() => link.to_string(),
                _ => bib.title.trim().to_string(),
            };
            if target_ref.is_empty() {
                continue; // dangling bibliography entry, unresolvable
            }
            citations.push(RawCitation {
                target_ref,
                section_title_raw: passage.section.clone(),
            });
        }
    }

    Ok(vec![PaperRecord {
        paper_id: parsed.paper_id,
        external_ids: parsed.external_ids,
        title: parsed.metadata.title.trim().to_string(),
        abstract_text,
        authors: parsed
            .metadata
            .authors
            .iter()
            .map(|a| a.display_name())
            .filter(|n| !n.is_empty())
            .collect(),
        venue: parsed.venue.trim().to_string(),
        year: parsed.year,
        citations,
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cord_style_document() {
        let json = r#"{
          "paper_id": "c1",
          "metadata": {
            "title": "Viral Dynamics",
            "authors": [{"first": "Ada", "middle": ["B."], "last": "Chen"}]
          },
          "abstract": [{"text": "Part one."}, {"text": "Part two."}],
          "body_text": [
            {"text": "As shown in [1].", "section": "Introduction",
             "cite_spans": [{"ref_id": "BIBREF0"}]},
            {"text": "We follow [2].", "section": "Methods",
             "cite_spans": [{"ref_id": "BIBREF1"}, {"ref_id": null}]}
          ],
          "bib_entries": {
            "BIBREF0": {"title": "Prior Virus Work", "link": "c9"},
            "BIBREF1": {"title": "Assay Techniques"}
          },
          "venue": "medRxiv",
          "year": 2020
        }"#;
        let mut w = ParseWarnings::default();
        let recs = parse_file(Path::new("c1.json"), json, &mut w).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.paper_id, "c1");
        assert_eq!(r.title, "Viral Dynamics");
        assert_eq!(r.abstract_text, "Part one. Part two.");
        assert_eq!(r.authors, vec!["Ada B. Chen"]);
        assert_eq!(r.citations.len(), 2);
        assert_eq!(r.citations[0].target_ref, "c9");
        assert_eq!(r.citations[0].section_title_raw, "Introduction");
        assert_eq!(r.citations[1].target_ref, "Assay Techniques");
        assert_eq!(w.malformed_records, 0);
    }

    #[test]
    fn invalid_json_counts_as_malformed() {
        let mut w = ParseWarnings::default();
        let recs = parse_file(Path::new("bad.json"), "{not json", &mut w).unwrap();
        assert!(recs.is_empty());
        assert_eq!(w.malformed_records, 1);
    }

    #[test]
    fn missing_abstract_is_empty_not_error() {
        let json = r#"{"paper_id": "x", "metadata": {"title": "T", "authors": []}}"#;
        let mut w = ParseWarnings::default();
        let recs = parse_file(Path::new("x.json"), json, &mut w).unwrap();
        assert_eq!(recs[0].abstract_text, "");
        assert_eq!(w.malformed_records, 0);
    }
}

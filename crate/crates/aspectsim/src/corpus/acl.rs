//! ACL-style corpus files: XML with per-paper citation annotations.
//!
//! A file holds a single `<paper>` element or any root element wrapping
//! several. Recognized children: `title`, `abstract`, `venue`, `year`,
//! `authors/author`, `externalIds/id scheme="..."`, and
//! `citations/cite target="..." section="..."`.

use std::collections::BTreeMap;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{ParseWarnings, PaperRecord, RawCitation};
use crate::error::{Error, Result};

#[derive(Default)]
struct PaperBuilder {
    paper_id: String,
    external_ids: BTreeMap<String, String>,
    title: String,
    abstract_text: String,
    authors: Vec<String>,
    venue: String,
    year: Option<i32>,
    citations: Vec<RawCitation>,
    broken: bool,
}

impl PaperBuilder {
    fn finish(self) -> Option<PaperRecord> {
        if self.broken || self.paper_id.is_empty() {
            return None;
        }
        Some(PaperRecord {
            paper_id: self.paper_id,
            external_ids: self.external_ids,
            title: self.title.trim().to_string(),
            abstract_text: self.abstract_text.trim().to_string(),
            authors: self.authors,
            venue: self.venue.trim().to_string(),
            year: self.year,
            citations: self.citations,
        })
    }
}

fn attr(e: &BytesStart, name: &str) -> Option<String> {
    e.attributes().flatten().find_map(|a| {
        if a.key.as_ref() == name.as_bytes() {
            a.unescape_value().ok().map(|v| v.into_owned())
        } else {
            None
        }
    })
}

pub(super) fn parse_file(
    path: &Path,
    text: &str,
    warnings: &mut ParseWarnings,
) -> Result<Vec<PaperRecord>> {
    let mut reader = Reader::from_str(text);
    reader.trim_text(true);

    let mut records = Vec::new();
    let mut current: Option<PaperBuilder> = None;
    // element path inside the current <paper>
    let mut path_stack: Vec<String> = Vec::new();
    let mut id_scheme: Option<String> = None;

    loop {
        match reader.read_event() {
            Err(e) => {
                return Err(Error::CorpusFile {
                    path: path.to_path_buf(),
                    reason: format!("xml error at byte {}: {}", reader.buffer_position(), e),
                })
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if name == "paper" {
                    let mut b = PaperBuilder::default();
                    match attr(&e, "id") {
                        Some(id) if !id.is_empty() => b.paper_id = id,
                        _ => b.broken = true,
                    }
                    current = Some(b);
                    path_stack.clear();
                } else if current.is_some() {
                    if name == "id" {
                        id_scheme = attr(&e, "scheme");
                    }
                    path_stack.push(name);
                }
            }
            Ok(Event::Empty(e)) => {
                let name = e.name();
                if name.as_ref() == b"cite" {
                    if let Some(b) = current.as_mut() {
                        match attr(&e, "target") {
                            Some(target) if !target.is_empty() => b.citations.push(RawCitation {
                                target_ref: target,
                                section_title_raw: attr(&e, "section").unwrap_or_default(),
                            }),
                            _ => b.broken = true,
                        }
                    }
                }
            }
            Ok(Event::Text(t)) => {
                if let Some(b) = current.as_mut() {
                    let content = t.unescape().unwrap_or_default().into_owned();
                    match path_stack.last().map(|s| s.as_str()) {
                        Some("title") => b.title.push_str(&content),
                        Some("abstract") => b.abstract_text.push_str(&content),
                        Some("venue") => b.venue.push_str(&content),
                        Some("year") => match content.trim().parse::<i32>() {
                            Ok(y) => b.year = Some(y),
                            Err(_) => b.year = None,
                        },
                        Some("author") => b.authors.push(content.trim().to_string()),
                        Some("id") => {
                            let scheme = id_scheme.clone().unwrap_or_else(|| "id".to_string());
                            b.external_ids.insert(scheme, content.trim().to_string());
                        }
                        _ => {}
                    }
                }
            }
            Ok(Event::End(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if name == "paper" {
                    if let Some(b) = current.take() {
                        match b.finish() {
                            Some(rec) => records.push(rec),
                            None => warnings.malformed_records += 1,
                        }
                    }
                    path_stack.clear();
                } else if current.is_some() {
                    path_stack.pop();
                }
            }
            Ok(_) => {}
        }
    }
    Ok(records)
}

//! Scholarly-metadata client: back-fills missing abstracts, authors, and
//! venues from an external API, with a persistent query cache, rate
//! limiting, and retry with backoff. An offline mode answers from the
//! cache only, so builds are deterministic without network access.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PaperRecord;
use crate::error::{Error, Result};

/// A metadata lookup key: an external identifier or a title/year probe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetadataQuery {
    ById { scheme: String, id: String },
    ByTitleYear { title: String, year: Option<i32> },
}

impl MetadataQuery {
    /// Canonical string used for cache keys.
    pub fn canonical(&self) -> String {
        match self {
            MetadataQuery::ById { scheme, id } => format!("id/{}/{}", scheme, id),
            MetadataQuery::ByTitleYear { title, year } => format!(
                "title/{}/{}",
                super::title_key(title),
                year.map(|y| y.to_string()).unwrap_or_default()
            ),
        }
    }
}

/// What the metadata service knows about a paper.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataResponse {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: Option<String>,
    #[serde(default)]
    pub resolved_paper_id: Option<String>,
}

/// Transport behind the client. `Ok(None)` means the service definitively
/// does not know the paper; `Err` is a transient failure worth retrying.
pub trait MetadataBackend: Send + Sync {
    fn fetch(&self, query: &MetadataQuery) -> Result<Option<MetadataResponse>>;
}

/// HTTPS backend: `GET {base}/paper/{scheme}/{id}` and
/// `GET {base}/paper/search?title=...&year=...`, JSON responses in the
/// [`MetadataResponse`] schema, 404 meaning unknown.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Self {
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }
}

fn urlencode(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{:02X}", b)),
        }
    }
    out
}

impl MetadataBackend for HttpBackend {
    fn fetch(&self, query: &MetadataQuery) -> Result<Option<MetadataResponse>> {
        let url = match query {
            MetadataQuery::ById { scheme, id } => {
                format!("{}/paper/{}/{}", self.base_url, urlencode(scheme), urlencode(id))
            }
            MetadataQuery::ByTitleYear { title, year } => format!(
                "{}/paper/search?title={}&year={}",
                self.base_url,
                urlencode(title),
                year.map(|y| y.to_string()).unwrap_or_default()
            ),
        };
        match self.agent.get(&url).call() {
            Ok(resp) => {
                let parsed: MetadataResponse = resp
                    .into_json()
                    .map_err(|e| Error::Metadata(format!("bad response body: {}", e)))?;
                Ok(Some(parsed))
            }
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(Error::Metadata(format!("request failed: {}", e))),
        }
    }
}

/// Minimum-interval rate limiter shared across worker threads.
struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(requests_per_second: f64) -> Self {
        let min_interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            min_interval,
            last: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Client tuning knobs; see module docs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub base_url: Option<String>,
    pub requests_per_second: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub offline: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: None,
            requests_per_second: 2.0,
            retries: 3,
            backoff_ms: 500,
            offline: true,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    query: String,
    response: Option<MetadataResponse>,
}

/// Caching metadata client. Every response (hits and definitive misses)
/// is cached in memory and on disk, so a repeated identical query never
/// re-hits the network. Safe for concurrent readers; disk writes are
/// serialized.
pub struct MetadataClient {
    backend: Option<Box<dyn MetadataBackend>>,
    cache_dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Option<MetadataResponse>>>,
    disk_write: Mutex<()>,
    rate: RateLimiter,
    retries: u32,
    backoff: Duration,
    network_hits: AtomicUsize,
}

impl MetadataClient {
    pub fn new(config: &ClientConfig, cache_dir: Option<&Path>) -> Result<Self> {
        let backend: Option<Box<dyn MetadataBackend>> = if config.offline {
            None
        } else {
            let base = config.base_url.as_deref().ok_or_else(|| {
                Error::Config("metadata client: base_url required unless offline".into())
            })?;
            Some(Box::new(HttpBackend::new(base)))
        };
        Self::with_backend(backend, config, cache_dir)
    }

    /// Cache-only client; lookups outside the cache report unresolved.
    pub fn offline(cache_dir: Option<&Path>) -> Result<Self> {
        Self::with_backend(None, &ClientConfig::default(), cache_dir)
    }

    pub fn with_backend(
        backend: Option<Box<dyn MetadataBackend>>,
        config: &ClientConfig,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        if let Some(dir) = cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(MetadataClient {
            backend,
            cache_dir: cache_dir.map(|p| p.to_path_buf()),
            memory: RwLock::new(HashMap::new()),
            disk_write: Mutex::new(()),
            rate: RateLimiter::new(config.requests_per_second),
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
            network_hits: AtomicUsize::new(0),
        })
    }

    /// Number of requests that actually went to the backend.
    pub fn network_hits(&self) -> usize {
        self.network_hits.load(Ordering::Relaxed)
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let hash = Sha256::digest(key.as_bytes());
        let mut name = String::with_capacity(32);
        for b in &hash[..16] {
            name.push_str(&format!("{:02x}", b));
        }
        Some(dir.join(format!("{}.json", name)))
    }

    fn read_disk(&self, key: &str) -> Option<Option<MetadataResponse>> {
        let path = self.cache_path(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        Some(entry.response)
    }

    fn write_disk(&self, key: &str, response: &Option<MetadataResponse>) {
        let Some(path) = self.cache_path(key) else {
            return;
        };
        let _guard = self.disk_write.lock().unwrap();
        let entry = CacheEntry {
            query: key.to_string(),
            response: response.clone(),
        };
        if let Ok(text) = serde_json::to_string_pretty(&entry) {
            let _ = std::fs::write(path, text);
        }
    }

    /// Resolve a query through cache, then network (rate-limited, with
    /// retry and exponential backoff). `Ok(None)` means the paper is
    /// unknown to the service or the client is offline with no cache hit.
    pub fn lookup(&self, query: &MetadataQuery) -> Result<Option<MetadataResponse>> {
        let key = query.canonical();
        if let Some(hit) = self.memory.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        if let Some(hit) = self.read_disk(&key) {
            self.memory.write().unwrap().insert(key, hit.clone());
            return Ok(hit);
        }
        let Some(backend) = self.backend.as_ref() else {
            return Ok(None); // offline, uncached
        };

        let mut attempt = 0u32;
        let response = loop {
            self.rate.acquire();
            self.network_hits.fetch_add(1, Ordering::Relaxed);
            match backend.fetch(query) {
                Ok(resp) => break resp,
                Err(e) if attempt < self.retries => {
                    let delay = self.backoff * 2u32.saturating_pow(attempt);
                    log::warn!("metadata fetch failed (attempt {}): {}", attempt + 1, e);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        self.memory.write().unwrap().insert(key.clone(), response.clone());
        self.write_disk(&key, &response);
        Ok(response)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EnrichStats {
    pub queried: usize,
    pub enriched: usize,
    pub unresolved: usize,
    pub failed: usize,
}

fn query_for(record: &PaperRecord) -> MetadataQuery {
    // prefer a DOI, then any other external id (sorted scheme order),
    // falling back to a title/year probe
    if let Some(id) = record.external_ids.get("doi") {
        return MetadataQuery::ById {
            scheme: "doi".into(),
            id: id.clone(),
        };
    }
    if let Some((scheme, id)) = record.external_ids.iter().next() {
        return MetadataQuery::ById {
            scheme: scheme.clone(),
            id: id.clone(),
        };
    }
    MetadataQuery::ByTitleYear {
        title: record.title.clone(),
        year: record.year,
    }
}

/// Fill empty abstract/authors/venue fields from the metadata service.
/// Records that already have an abstract pass through untouched; lookups
/// that fail after retries leave the record unchanged and are counted.
pub fn enrich_metadata(
    records: Vec<PaperRecord>,
    client: &MetadataClient,
) -> (Vec<PaperRecord>, EnrichStats) {
    use rayon::prelude::*;

    let queried = AtomicUsize::new(0);
    let enriched = AtomicUsize::new(0);
    let unresolved = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);

    let out: Vec<PaperRecord> = records
        .into_par_iter()
        .map(|mut rec| {
            if !rec.abstract_text.trim().is_empty() {
                return rec;
            }
            queried.fetch_add(1, Ordering::Relaxed);
            match client.lookup(&query_for(&rec)) {
                Ok(Some(resp)) => {
                    let mut changed = false;
                    if rec.abstract_text.trim().is_empty() {
                        if let Some(abs) = resp.abstract_text.filter(|a| !a.trim().is_empty()) {
                            rec.abstract_text = abs;
                            changed = true;
                        }
                    }
                    if rec.authors.is_empty() && !resp.authors.is_empty() {
                        rec.authors = resp.authors;
                        changed = true;
                    }
                    if rec.venue.trim().is_empty() {
                        if let Some(venue) = resp.venue.filter(|v| !v.trim().is_empty()) {
                            rec.venue = venue;
                            changed = true;
                        }
                    }
                    if changed {
                        enriched.fetch_add(1, Ordering::Relaxed);
                    } else {
                        unresolved.fetch_add(1, Ordering::Relaxed);
                    }
                    rec
                }
                Ok(None) => {
                    unresolved.fetch_add(1, Ordering::Relaxed);
                    rec
                }
                Err(e) => {
                    log::warn!("enrichment failed for {}: {}", rec.paper_id, e);
                    failed.fetch_add(1, Ordering::Relaxed);
                    rec
                }
            }
        })
        .collect();

    (
        out,
        EnrichStats {
            queried: queried.into_inner(),
            enriched: enriched.into_inner(),
            unresolved: unresolved.into_inner(),
            failed: failed.into_inner(),
        },
    )
}

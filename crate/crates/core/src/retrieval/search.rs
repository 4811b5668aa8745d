//! Web-search and page-fetch backends plus the on-disk page cache.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::traffic::Exchange;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
    pub exchange: Option<Exchange>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchedPage {
    pub body: String,
    pub exchange: Option<Exchange>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("search unavailable: {0}")]
    Unavailable(String),
    #[error("could not fetch {url}: {reason}")]
    Fetch { url: String, reason: String },
}

pub trait SearchBackend: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str) -> Result<SearchResponse, SearchError>;
}

pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchedPage, SearchError>;
}

/// Fetched pages keyed by the SHA-256 of their URL:
/// `<root>/cache/pages/<url-hash>.txt`.
#[derive(Clone, Debug)]
pub struct PageCache {
    dir: PathBuf,
}

impl PageCache {
    pub fn new(root: &Path) -> Self {
        Self { dir: root.join("cache").join("pages") }
    }

    pub fn path_for(&self, url: &str) -> PathBuf {
        let hash = hex::encode(Sha256::digest(url.as_bytes()));
        self.dir.join(format!("{hash}.txt"))
    }

    pub fn get(&self, url: &str) -> Option<String> {
        std::fs::read_to_string(self.path_for(url)).ok()
    }

    pub fn put(&self, url: &str, body: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(url);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(tmp, path)
    }
}

/// Cache-first page fetch.
pub fn fetch_cached(
    fetcher: &dyn PageFetcher,
    cache: Option<&PageCache>,
    url: &str,
) -> Result<FetchedPage, SearchError> {
    if let Some(body) = cache.and_then(|c| c.get(url)) {
        return Ok(FetchedPage { body, exchange: None });
    }
    let page = fetcher.fetch(url)?;
    if let Some(cache) = cache {
        if let Err(error) = cache.put(url, &page.body) {
            tracing::warn!(%url, %error, "could not cache page");
        }
    }
    Ok(page)
}

pub const SEARCH_ENDPOINT_VAR: &str = "SYNTHKIT_SEARCH_ENDPOINT";
pub const SEARCH_API_KEY_VAR: &str = "SYNTHKIT_SEARCH_API_KEY";

fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .user_agent("synthkit/0.1")
        .build()
        .expect("http client")
}

/// JSON search API: `GET <endpoint>?q=<query>` answering either a list of
/// hits or `{"results": [...]}`.
pub struct HttpSearch {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(SEARCH_ENDPOINT_VAR).ok()?;
        Some(Self {
            endpoint,
            api_key: std::env::var(SEARCH_API_KEY_VAR).ok(),
            client: client(Duration::from_secs(30)),
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SearchPayload {
    List(Vec<SearchHit>),
    Wrapped { results: Vec<SearchHit> },
}

impl SearchBackend for HttpSearch {
    fn name(&self) -> &str {
        "search"
    }

    fn search(&self, query: &str) -> Result<SearchResponse, SearchError> {
        let started = Instant::now();
        let mut request = self.client.get(&self.endpoint).query(&[("q", query)]);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let request = request.build().map_err(|e| SearchError::Unavailable(e.to_string()))?;
        let request_bytes = request.url().as_str().len() as u64;
        let body = self
            .client
            .execute(request)
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| SearchError::Unavailable(e.to_string()))?;
        let hits = match serde_json::from_str::<SearchPayload>(&body) {
            Ok(SearchPayload::List(hits)) | Ok(SearchPayload::Wrapped { results: hits }) => hits,
            Err(e) => return Err(SearchError::Unavailable(format!("unexpected search payload: {e}"))),
        };
        Ok(SearchResponse {
            hits,
            exchange: Some(Exchange {
                backend: self.name().into(),
                request_bytes,
                response_bytes: body.len() as u64,
                latency: started.elapsed(),
            }),
        })
    }
}

pub struct HttpFetcher {
    client: reqwest::blocking::Client,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self { client: client(Duration::from_secs(30)) }
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedPage, SearchError> {
        let started = Instant::now();
        let fail = |e: reqwest::Error| SearchError::Fetch { url: url.to_string(), reason: e.to_string() };
        let body = self
            .client
            .get(url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(fail)?;
        Ok(FetchedPage {
            exchange: Some(Exchange {
                backend: "fetch".into(),
                request_bytes: url.len() as u64,
                response_bytes: body.len() as u64,
                latency: started.elapsed(),
            }),
            body,
        })
    }
}

/// Used when no search backend is configured.
pub struct NoSearch;

impl SearchBackend for NoSearch {
    fn name(&self) -> &str {
        "search"
    }

    fn search(&self, _query: &str) -> Result<SearchResponse, SearchError> {
        Err(SearchError::Unavailable(format!("{SEARCH_ENDPOINT_VAR} is not set")))
    }
}

/// Used when no search backend is configured.
pub struct NoFetcher;

impl PageFetcher for NoFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedPage, SearchError> {
        Err(SearchError::Fetch { url: url.to_string(), reason: "fetching disabled".into() })
    }
}

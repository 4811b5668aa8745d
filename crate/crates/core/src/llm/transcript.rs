//! Deterministic scripted backend driven by a transcript file.
//!
//! A transcript is line-delimited JSON. Blank lines and lines starting with
//! `#` are ignored. Each record belongs to the `chat` channel (default) or the
//! `search` channel; each channel is consumed in file order.
//!
//! ```text
//! {"match": "preliminary algorithm outline", "reply": "1. Load: ...\n2. Detect: ..."}
//! {"pattern": "Step \\d+", "tool_call": {"name": "web_search", "arguments": "Pan-Tompkins"}}
//! {"channel": "search", "match": "R-peaks", "results": [{"url": "https://...", "snippet": "...", "page": "<p>...</p>"}]}
//! {"channel": "search", "unavailable": true}
//! {"transport_error": true}
//! ```
//!
//! `match` is a substring and `pattern` a regular expression, both tested
//! against the latest user message (chat) or the query (search). A record with
//! neither matches anything. The response size of an exchange is the byte
//! length of the record's line, the request size that of the serialized
//! [`ChatRequest`].

use std::collections::HashMap;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, ChatBackend, ChatRequest, Message, ToolCall, WireReply};
use crate::retrieval::{FetchedPage, PageFetcher, SearchBackend, SearchError, SearchHit, SearchResponse};
use crate::traffic::Exchange;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("transcript line {line}: {message}")]
pub struct TranscriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Chat,
    Search,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRecordHit {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(default)]
    channel: Channel,
    #[serde(rename = "match")]
    matcher: Option<String>,
    pattern: Option<String>,
    reply: Option<String>,
    tool_call: Option<ToolCall>,
    results: Option<Vec<SearchRecordHit>>,
    #[serde(default)]
    unavailable: bool,
    #[serde(default)]
    transport_error: bool,
}

#[derive(Clone, Debug)]
pub enum Matcher {
    Any,
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(text),
        }
    }

    fn expected(&self) -> String {
        match self {
            Matcher::Any => String::new(),
            Matcher::Substring(s) => s.clone(),
            Matcher::Pattern(re) => re.as_str().to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum RecordKind {
    Reply { content: String, tool_call: Option<ToolCall> },
    TransportError,
    SearchResults(Vec<SearchRecordHit>),
    SearchUnavailable,
}

#[derive(Clone, Debug)]
pub struct TranscriptRecord {
    /// 1-based line number in the transcript file.
    pub line: usize,
    pub raw: String,
    pub channel: Channel,
    pub matcher: Matcher,
    pub kind: RecordKind,
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Self, TranscriptError> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fail = |message: String| TranscriptError { line, message };
            let record: RawRecord = serde_json::from_str(trimmed).map_err(|e| fail(e.to_string()))?;
            let matcher = match (record.matcher, record.pattern) {
                (Some(_), Some(_)) => return Err(fail("`match` and `pattern` are exclusive".into())),
                (Some(s), None) => Matcher::Substring(s),
                (None, Some(p)) => Matcher::Pattern(Regex::new(&p).map_err(|e| fail(e.to_string()))?),
                (None, None) => Matcher::Any,
            };
            let kind = match record.channel {
                Channel::Chat => {
                    if record.results.is_some() || record.unavailable {
                        return Err(fail("search fields on a chat record".into()));
                    }
                    if record.transport_error {
                        if record.reply.is_some() || record.tool_call.is_some() {
                            return Err(fail("transport_error records carry no reply".into()));
                        }
                        RecordKind::TransportError
                    } else if record.reply.is_none() && record.tool_call.is_none() {
                        return Err(fail("chat record needs `reply` or `tool_call`".into()));
                    } else {
                        RecordKind::Reply {
                            content: record.reply.unwrap_or_default(),
                            tool_call: record.tool_call,
                        }
                    }
                }
                Channel::Search => {
                    if record.reply.is_some() || record.tool_call.is_some() || record.transport_error {
                        return Err(fail("chat fields on a search record".into()));
                    }
                    match (record.results, record.unavailable) {
                        (Some(hits), false) => RecordKind::SearchResults(hits),
                        (None, true) => RecordKind::SearchUnavailable,
                        _ => return Err(fail("search record needs exactly one of `results`, `unavailable`".into())),
                    }
                }
            };
            records.push(TranscriptRecord { line, raw: trimmed.to_string(), channel: record.channel, matcher, kind });
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One served exchange, exactly as counted for traffic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireEntry {
    pub channel: Channel,
    pub request: String,
    pub response: String,
}

#[derive(Default)]
struct Cursors {
    chat: usize,
    search: usize,
}

pub struct ScriptedBackend {
    chat: Vec<TranscriptRecord>,
    search: Vec<TranscriptRecord>,
    pages: HashMap<String, String>,
    cursors: Mutex<Cursors>,
    wire: Mutex<Vec<WireEntry>>,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        let mut pages = HashMap::new();
        let (chat, search): (Vec<_>, Vec<_>) =
            transcript.records.into_iter().partition(|r| r.channel == Channel::Chat);
        for record in &search {
            if let RecordKind::SearchResults(hits) = &record.kind {
                for hit in hits {
                    if let Some(page) = &hit.page {
                        pages.entry(hit.url.clone()).or_insert_with(|| page.clone());
                    }
                }
            }
        }
        Self { chat, search, pages, cursors: Mutex::new(Cursors::default()), wire: Mutex::new(Vec::new()) }
    }

    pub fn from_text(text: &str) -> Result<Self, TranscriptError> {
        Ok(Self::new(Transcript::parse(text)?))
    }

    pub fn wire_log(&self) -> Vec<WireEntry> {
        self.wire.lock().unwrap().clone()
    }

    /// (chat, search) records consumed so far.
    pub fn consumed(&self) -> (usize, usize) {
        let cursors = self.cursors.lock().unwrap();
        (cursors.chat, cursors.search)
    }

    /// Skips records a previous process already consumed, so a stored
    /// session can be resumed against the same transcript.
    pub fn resume_at(&self, chat: usize, search: usize) {
        let mut cursors = self.cursors.lock().unwrap();
        cursors.chat = chat.min(self.chat.len());
        cursors.search = search.min(self.search.len());
    }

    pub fn remaining_chat(&self) -> usize {
        self.chat.len() - self.cursors.lock().unwrap().chat
    }
}

fn mismatch_diff(expected: &str, actual: &str) -> String {
    const LIMIT: usize = 4000;
    let diff = similar::TextDiff::from_lines(expected, actual)
        .unified_diff()
        .context_radius(2)
        .header("expected", "actual")
        .to_string();
    if diff.len() > LIMIT {
        let mut end = LIMIT;
        while !diff.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}\n... (diff truncated)", &diff[..end])
    } else {
        diff
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &ChatRequest) -> Result<WireReply, BackendError> {
        let mut cursors = self.cursors.lock().unwrap();
        let record = self
            .chat
            .get(cursors.chat)
            .ok_or(BackendError::TranscriptExhausted { consumed: cursors.chat })?;
        let prompt = request.prompt();
        if !record.matcher.matches(prompt) {
            let expected = record.matcher.expected();
            return Err(BackendError::PromptMismatch {
                line: record.line,
                diff: mismatch_diff(&expected, prompt),
                expected,
            });
        }
        cursors.chat += 1;
        let RecordKind::Reply { content, tool_call } = &record.kind else {
            return Err(BackendError::Transport(format!("scripted transport error (line {})", record.line)));
        };
        let body = serde_json::to_string(request).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let message = match tool_call {
            Some(call) => Message::tool_request(content.clone(), call.clone()),
            None => Message::assistant(content.clone()),
        };
        let reply = WireReply {
            message,
            request_bytes: body.len() as u64,
            response_bytes: record.raw.len() as u64,
        };
        self.wire.lock().unwrap().push(WireEntry { channel: Channel::Chat, request: body, response: record.raw.clone() });
        Ok(reply)
    }
}

impl SearchBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted-search"
    }

    fn search(&self, query: &str) -> Result<SearchResponse, SearchError> {
        let mut cursors = self.cursors.lock().unwrap();
        let Some(record) = self.search.get(cursors.search) else {
            return Err(SearchError::Unavailable(format!(
                "search transcript exhausted after {} queries",
                cursors.search
            )));
        };
        if !record.matcher.matches(query) {
            return Err(SearchError::Unavailable(format!(
                "search transcript line {} expected a query matching {:?}, got {query:?}",
                record.line,
                record.matcher.expected()
            )));
        }
        cursors.search += 1;
        let hits = match &record.kind {
            RecordKind::SearchResults(hits) => hits,
            _ => return Err(SearchError::Unavailable(format!("scripted outage (line {})", record.line))),
        };
        let request = serde_json::json!({ "query": query }).to_string();
        let exchange = Exchange {
            backend: SearchBackend::name(self).to_string(),
            request_bytes: request.len() as u64,
            response_bytes: record.raw.len() as u64,
            latency: std::time::Duration::ZERO,
        };
        self.wire.lock().unwrap().push(WireEntry { channel: Channel::Search, request, response: record.raw.clone() });
        Ok(SearchResponse {
            hits: hits
                .iter()
                .map(|h| SearchHit { url: h.url.clone(), title: h.title.clone(), snippet: h.snippet.clone() })
                .collect(),
            exchange: Some(exchange),
        })
    }
}

impl PageFetcher for ScriptedBackend {
    /// Pages ride along in the search records, so fetching adds no traffic.
    fn fetch(&self, url: &str) -> Result<FetchedPage, SearchError> {
        self.pages
            .get(url)
            .map(|body| FetchedPage { body: body.clone(), exchange: None })
            .ok_or_else(|| SearchError::Fetch { url: url.to_string(), reason: "no page in transcript".into() })
    }
}

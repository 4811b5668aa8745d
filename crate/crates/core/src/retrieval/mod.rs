//! Background knowledge: terminology determination, web search with relevance
//! filtering, and the per-session vector index.

mod chunk;
mod embed;
mod html;
mod index;
mod search;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Llm, LlmError, Message, ToolRegistry};
use crate::problem::UserProblem;
use crate::synthesis::template::{render_prompt, Bindings, PromptTemplate, RenderError, Section};

pub use chunk::{chunk_spans, chunk_text, ChunkingConfig};
pub use embed::{Embedder, HashEmbedder, OpenAiEmbedder, EMBED_DIMENSION_VAR, EMBED_ENDPOINT_VAR, EMBED_MODEL_VAR};
pub use html::{extract_title, html_to_text};
pub use index::{cosine, retrieve_context, KnowledgeChunk, KnowledgeIndex, Retrieved};
pub use search::{
    fetch_cached, FetchedPage, HttpFetcher, HttpSearch, NoFetcher, NoSearch, PageCache, PageFetcher, SearchBackend,
    SearchError, SearchHit, SearchResponse, SEARCH_API_KEY_VAR, SEARCH_ENDPOINT_VAR,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminology {
    pub term: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebDocument {
    pub url: String,
    pub title: String,
    pub body_text: String,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("unparseable {what} response: {reply:?}")]
    UnparseableResponse { what: &'static str, reply: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cannot read {}: {reason}", path.display())]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("embedding dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("embedding backend failed: {0}")]
    Embed(String),
}

const USER_PROBLEM: Section = Section { heading: "User Problem", body: "{{user_problem}}" };

pub static TERMINOLOGY_TEMPLATE: PromptTemplate = PromptTemplate {
    name: "terminology",
    placeholders: &["user_problem"],
    sections: &[
        USER_PROBLEM,
        Section {
            heading: "Target",
            body: "Identify the key terminologies in the user problem whose background knowledge must be \
looked up on the web before the problem can be solved.",
        },
        Section {
            heading: "Rules",
            body: "1. Only list terms that are specific to the sensor data, the dataset, the task or the required algorithms.\n\
2. List at most 8 terms.",
        },
        Section {
            heading: "Response Format",
            body: "TERMINOLOGIES: <term>, <term>, <term>\n\
Then one line per term:\n\
- <term>: <why the term is relevant>",
        },
    ],
};

pub static RELEVANCE_TEMPLATE: PromptTemplate = PromptTemplate {
    name: "relevance",
    placeholders: &["user_problem", "term", "documents"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Terminology", body: "{{term}}" },
        Section { heading: "Documents", body: "{{documents}}" },
        Section {
            heading: "Target",
            body: "The documents above were retrieved while searching for the terminology. \
Decide which of them are relevant to the user problem.",
        },
        Section {
            heading: "Rules",
            body: "1. A document is relevant when it explains the terminology, the dataset or an algorithm that helps solve the user problem.\n\
2. Filter out advertisements, navigation pages and content about other meanings of the terminology.",
        },
        Section {
            heading: "Response Format",
            body: "RELEVANT: <comma-separated document numbers>\n\
or, when no document is relevant:\n\
RELEVANT: none",
        },
    ],
};

const FORMAT_REMINDER: &str = "Your previous reply did not follow the response format. \
Answer again using exactly the requested response format.";

fn strip_decoration(line: &str) -> &str {
    line.trim().trim_start_matches(['*', '#', '>', ' ']).trim()
}

fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = strip_decoration(line);
    let head = line.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = line[label.len()..].trim_start_matches('*');
    rest.strip_prefix(':').map(|r| r.trim_start_matches('*').trim())
}

fn clean_term(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.'))
        .trim()
        .to_string()
}

/// Parses `TERMINOLOGIES: a, b, c` plus optional `- term: rationale` lines.
/// Terms are deduplicated case-insensitively, keeping the first spelling.
pub fn parse_terminologies(reply: &str) -> Option<Vec<Terminology>> {
    let list = reply.lines().find_map(|l| labelled(l, "TERMINOLOGIES"))?;
    let mut seen = HashSet::new();
    let mut terms: Vec<Terminology> = list
        .split([',', ';'])
        .map(clean_term)
        .filter(|t| !t.is_empty())
        .filter(|t| seen.insert(t.to_lowercase()))
        .map(|term| Terminology { term, rationale: String::new() })
        .collect();
    if terms.is_empty() {
        return None;
    }
    for line in reply.lines() {
        let Some(item) = line.trim().strip_prefix(['-', '*']) else { continue };
        let Some((term, rationale)) = item.split_once(':') else { continue };
        let key = clean_term(term).to_lowercase();
        if let Some(t) = terms.iter_mut().find(|t| t.term.to_lowercase() == key && t.rationale.is_empty()) {
            t.rationale = rationale.trim().to_string();
        }
    }
    Some(terms)
}

/// `RELEVANT: 1, 3` or `RELEVANT: none`. Returns 0-based indices below `count`.
pub fn parse_relevance(reply: &str, count: usize) -> Option<BTreeSet<usize>> {
    let list = reply.lines().find_map(|l| labelled(l, "RELEVANT"))?;
    if list.trim_matches('.').eq_ignore_ascii_case("none") {
        return Some(BTreeSet::new());
    }
    let mut picked = BTreeSet::new();
    for item in list.split([',', ' ']).map(|s| s.trim().trim_start_matches('#')).filter(|s| !s.is_empty()) {
        let n: usize = item.trim_end_matches('.').parse().ok()?;
        if n == 0 || n > count {
            return None;
        }
        picked.insert(n - 1);
    }
    Some(picked)
}

/// Asks, parses, and on a parse failure reminds the model of the format once.
pub(crate) fn ask_parsed<T>(
    llm: &Llm,
    prompt: String,
    tools: &ToolRegistry,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Result<T, String>, LlmError> {
    let mut conversation = Llm::conversation(prompt);
    let reply = llm.converse(&mut conversation, tools)?;
    if let Some(parsed) = parse(&reply) {
        return Ok(Ok(parsed));
    }
    conversation.push(Message::user(FORMAT_REMINDER));
    let reply = llm.converse(&mut conversation, tools)?;
    Ok(parse(&reply).ok_or(reply))
}

pub fn determine_terminologies(problem: &UserProblem, llm: &Llm) -> Result<Vec<Terminology>, RetrievalError> {
    let bindings = Bindings::from([("user_problem", problem.render())]);
    let prompt = render_prompt(&TERMINOLOGY_TEMPLATE, &bindings)?;
    ask_parsed(llm, prompt, &ToolRegistry::new(), parse_terminologies)?
        .map_err(|reply| RetrievalError::UnparseableResponse { what: "terminology", reply })
}

/// Documents found for one terminology, plus anything worth a warning event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermSearch {
    pub documents: Vec<WebDocument>,
    pub warnings: Vec<String>,
}

pub struct SearchContext<'a> {
    pub search: &'a dyn SearchBackend,
    pub fetcher: &'a dyn PageFetcher,
    pub cache: Option<&'a PageCache>,
    pub max_results: usize,
}

const EXCERPT_CHARS: usize = 600;

fn excerpt(text: &str) -> String {
    let mut out: String = text.chars().take(EXCERPT_CHARS).collect();
    if text.chars().count() > EXCERPT_CHARS {
        out.push_str(" ...");
    }
    out
}

fn list_documents(documents: &[WebDocument]) -> String {
    documents
        .iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {} ({})\n{}", i + 1, d.title, d.url, excerpt(&d.body_text)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Searches the web for `term`, fetches the result pages and keeps those the
/// model marks relevant. An unavailable search backend degrades to an empty
/// result with a warning.
pub fn search_terminology(
    term: &Terminology,
    problem: &UserProblem,
    ctx: &SearchContext<'_>,
    llm: &Llm,
) -> Result<TermSearch, RetrievalError> {
    let mut out = TermSearch::default();
    let response = match ctx.search.search(&term.term) {
        Ok(response) => response,
        Err(e) => {
            out.warnings.push(format!("search for {:?} skipped: {e}", term.term));
            return Ok(out);
        }
    };
    if let Some(exchange) = response.exchange {
        llm.meter().push(exchange);
    }

    let mut candidates = Vec::new();
    for hit in response.hits.into_iter().take(ctx.max_results) {
        let (body, title) = match fetch_cached(ctx.fetcher, ctx.cache, &hit.url) {
            Ok(page) => {
                if let Some(exchange) = page.exchange {
                    llm.meter().push(exchange);
                }
                let title = extract_title(&page.body).unwrap_or_else(|| hit.title.clone());
                (html_to_text(&page.body), title)
            }
            Err(e) => {
                out.warnings.push(format!("{e}; using the search snippet"));
                (html_to_text(&hit.snippet), hit.title.clone())
            }
        };
        if body.trim().is_empty() {
            continue;
        }
        let title = if title.is_empty() { hit.url.clone() } else { title };
        candidates.push(WebDocument { url: hit.url, title, body_text: body, fetched_at: Utc::now() });
    }
    if candidates.is_empty() {
        return Ok(out);
    }

    let bindings = Bindings::from([
        ("user_problem", problem.render()),
        ("term", term.term.clone()),
        ("documents", list_documents(&candidates)),
    ]);
    let prompt = render_prompt(&RELEVANCE_TEMPLATE, &bindings)?;
    let count = candidates.len();
    match ask_parsed(llm, prompt, &ToolRegistry::new(), |r| parse_relevance(r, count))? {
        Ok(keep) => {
            out.documents = candidates.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, d)| d).collect();
        }
        Err(_) => {
            out.warnings.push(format!(
                "relevance reply for {:?} was unparseable; keeping all {count} documents",
                term.term
            ));
            out.documents = candidates;
        }
    }
    Ok(out)
}

/// Chunks, embeds and appends `documents`. Nothing is appended on error.
/// Returns the number of chunks added per document.
pub fn ingest_documents(
    documents: &[WebDocument],
    index: &mut KnowledgeIndex,
    embedder: &dyn Embedder,
    chunking: ChunkingConfig,
) -> Result<Vec<usize>, RetrievalError> {
    if let Some(expected) = index.dimension() {
        if expected != embedder.dimension() {
            return Err(RetrievalError::DimensionMismatch { expected, got: embedder.dimension() });
        }
    }
    let mut pending = Vec::new();
    let mut counts = Vec::with_capacity(documents.len());
    for document in documents {
        let pieces = chunk_text(&document.body_text, chunking);
        let texts: Vec<String> = pieces.iter().map(|(_, t)| t.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(RetrievalError::Embed(format!("expected {} vectors, got {}", texts.len(), vectors.len())));
        }
        counts.push(pieces.len());
        for ((span, text), embedding) in pieces.into_iter().zip(vectors) {
            if embedding.len() != embedder.dimension() {
                return Err(RetrievalError::DimensionMismatch { expected: embedder.dimension(), got: embedding.len() });
            }
            pending.push(KnowledgeChunk { doc_ref: document.url.clone(), span, text, embedding });
        }
    }
    for chunk in pending {
        index.push(chunk)?;
    }
    Ok(counts)
}

/// Reads user-supplied plain-text or markup files. Markup is recognised by
/// extension (`.html`, `.htm`, `.xhtml`).
pub fn read_user_documents(paths: &[PathBuf]) -> Result<Vec<WebDocument>, RetrievalError> {
    paths.iter().map(|p| read_user_document(p)).collect()
}

fn read_user_document(path: &Path) -> Result<WebDocument, RetrievalError> {
    let raw = std::fs::read(path)
        .map_err(|e| RetrievalError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?;
    let text = String::from_utf8(raw).map_err(|_| RetrievalError::UnreadableFile {
        path: path.to_path_buf(),
        reason: "not UTF-8 text (convert PDFs and other binary formats to text first)".into(),
    })?;
    let is_markup = matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("html" | "htm" | "xhtml")
    );
    let (body_text, title) = if is_markup {
        (html_to_text(&text), extract_title(&text))
    } else {
        (text, None)
    };
    let url = path.display().to_string();
    Ok(WebDocument {
        title: title.unwrap_or_else(|| {
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| url.clone())
        }),
        url,
        body_text,
        fetched_at: Utc::now(),
    })
}

/// Reads and indexes user-supplied documents. Empty documents are skipped.
pub fn ingest_user_documents(
    paths: &[PathBuf],
    index: &mut KnowledgeIndex,
    embedder: &dyn Embedder,
    chunking: ChunkingConfig,
) -> Result<Vec<WebDocument>, RetrievalError> {
    let documents: Vec<WebDocument> =
        read_user_documents(paths)?.into_iter().filter(|d| !d.body_text.trim().is_empty()).collect();
    ingest_documents(&documents, index, embedder, chunking)?;
    Ok(documents)
}

/// Renders retrieved chunks for a prompt's background-knowledge section.
pub fn format_context(hits: &[Retrieved]) -> String {
    if hits.is_empty() {
        return "(no background knowledge retrieved)".to_string();
    }
    hits.iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] (source: {})\n{}", i + 1, r.chunk.doc_ref, r.chunk.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

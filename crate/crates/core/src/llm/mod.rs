//! Chat-completion backends and the tool-invocation loop.
//!
//! A completion sends the conversation together with the registered tool
//! descriptions. While the assistant answers with a tool call, the tool runs,
//! its result is appended as a [`Role::ToolResult`] message, and the
//! conversation is sent again.

mod openai;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::Exchange;

pub use openai::{OpenAiChat, OpenAiConfig};
pub use transcript::{
    Channel,
    ScriptedBackend, SearchRecordHit, Transcript, TranscriptError, TranscriptRecord, WireEntry,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    ToolResult,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), tool_call: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), tool_call: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), tool_call: None }
    }

    pub fn tool_request(content: impl Into<String>, call: ToolCall) -> Self {
        Self { role: Role::Assistant, content: content.into(), tool_call: Some(call) }
    }

    pub fn tool_result(content: impl Into<String>) -> Self {
        Self { role: Role::ToolResult, content: content.into(), tool_call: None }
    }
}

/// Checks the message-ordering invariants: tool calls only on assistant
/// messages, and every tool result directly answers an assistant tool call.
pub fn validate_conversation(messages: &[Message]) -> Result<(), String> {
    for (i, message) in messages.iter().enumerate() {
        if message.tool_call.is_some() && message.role != Role::Assistant {
            return Err(format!("message {i}: tool call on a {:?} message", message.role));
        }
        if message.role == Role::ToolResult {
            let answers_call = i > 0
                && messages[i - 1].role == Role::Assistant
                && messages[i - 1].tool_call.is_some();
            if !answers_call {
                return Err(format!("message {i}: tool result without a preceding tool call"));
            }
        }
        if message.tool_call.is_some() {
            if let Some(next) = messages.get(i + 1) {
                if next.role != Role::ToolResult {
                    return Err(format!("message {i}: tool call not followed by its result"));
                }
            }
        }
    }
    Ok(())
}

type Executor = Arc<dyn Fn(&str) -> Result<String, String> + Send + Sync>;

#[derive(Clone)]
pub struct Tool {
    pub description: String,
    executor: Executor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("tool {0} is already registered")]
    Duplicate(String),
    #[error("tool {0} needs a non-empty description")]
    EmptyDescription(String),
}

/// Named tools the model may invoke. Arguments travel as opaque text and each
/// tool parses its own.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Tool>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, description: &str, executor: F) -> Result<(), ToolError>
    where
        F: Fn(&str) -> Result<String, String> + Send + Sync + 'static,
    {
        if description.trim().is_empty() {
            return Err(ToolError::EmptyDescription(name.to_string()));
        }
        if self.tools.contains_key(name) {
            return Err(ToolError::Duplicate(name.to_string()));
        }
        self.tools.insert(
            name.to_string(),
            Tool { description: description.to_string(), executor: Arc::new(executor) },
        );
        Ok(())
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools
            .iter()
            .map(|(name, tool)| ToolSpec { name: name.clone(), description: tool.description.clone() })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    fn run(&self, call: &ToolCall) -> Result<String, LlmError> {
        let tool = self
            .tools
            .get(&call.name)
            .ok_or_else(|| LlmError::UnknownTool { name: call.name.clone() })?;
        Ok(match (tool.executor)(&call.arguments) {
            Ok(output) => output,
            Err(error) => format!("tool error: {error}"),
        })
    }
}

/// What goes over the wire for one completion round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<ToolSpec>,
}

impl ChatRequest {
    /// The rendered prompt: the most recent user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireReply {
    pub message: Message,
    pub request_bytes: u64,
    pub response_bytes: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection-level failure; the only retryable kind.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("transcript exhausted after {consumed} replies")]
    TranscriptExhausted { consumed: usize },
    #[error("prompt mismatch at transcript line {line}: expected {expected:?}\n{diff}")]
    PromptMismatch { line: usize, expected: String, diff: String },
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<WireReply, BackendError>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("backend {backend} unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { backend: String, attempts: u32, last: String },
    #[error("tool rounds exceeded ({rounds})")]
    ToolRoundsExceeded { rounds: u32 },
    #[error("assistant requested unknown tool {name:?}")]
    UnknownTool { name: String },
    #[error(transparent)]
    Backend(BackendError),
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionLimits {
    pub max_tool_rounds: u32,
}

impl Default for CompletionLimits {
    fn default() -> Self {
        Self { max_tool_rounds: 8 }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Exponential backoff for transport errors only.
#[derive(Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base: Duration,
    pub factor: u32,
    sleep: Sleeper,
}

impl fmt::Debug for RetryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RetryPolicy")
            .field("attempts", &self.attempts)
            .field("base", &self.base)
            .field("factor", &self.factor)
            .finish()
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base: Duration::from_secs(1),
            factor: 2,
            sleep: Arc::new(std::thread::sleep),
        }
    }
}

impl RetryPolicy {
    pub fn with_sleeper<F: Fn(Duration) + Send + Sync + 'static>(mut self, sleep: F) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry)
    }

    pub fn send(&self, backend: &dyn ChatBackend, request: &ChatRequest) -> Result<WireReply, LlmError> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                (self.sleep)(self.delay(attempt - 1));
            }
            match backend.send(request) {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Transport(error)) => {
                    tracing::warn!(backend = backend.name(), attempt, %error, "transport error");
                    last = error;
                }
                Err(other) => return Err(LlmError::Backend(other)),
            }
        }
        Err(LlmError::BackendUnavailable { backend: backend.name().to_string(), attempts, last })
    }
}

/// Shared accumulator of every exchange made on behalf of a session,
/// including the ones from completions that ended in an error.
#[derive(Clone, Default, Debug)]
pub struct TrafficMeter(Arc<Mutex<Vec<Exchange>>>);

impl TrafficMeter {
    pub fn push(&self, exchange: Exchange) {
        self.0.lock().unwrap().push(exchange);
    }

    pub fn drain(&self) -> Vec<Exchange> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub reply: Message,
    /// The input conversation followed by every message produced by this completion.
    pub transcript: Vec<Message>,
    pub exchanges: Vec<Exchange>,
}

pub fn complete(
    backend: &dyn ChatBackend,
    conversation: &[Message],
    tools: &ToolRegistry,
    limits: CompletionLimits,
    retry: &RetryPolicy,
) -> Result<Completion, LlmError> {
    complete_metered(backend, conversation, tools, limits, retry, None)
}

pub fn complete_metered(
    backend: &dyn ChatBackend,
    conversation: &[Message],
    tools: &ToolRegistry,
    limits: CompletionLimits,
    retry: &RetryPolicy,
    meter: Option<&TrafficMeter>,
) -> Result<Completion, LlmError> {
    if conversation.is_empty() {
        return Err(LlmError::InvalidConversation("conversation is empty".into()));
    }
    validate_conversation(conversation).map_err(LlmError::InvalidConversation)?;

    let mut transcript = conversation.to_vec();
    let mut exchanges = Vec::new();
    let mut rounds = 0;
    let specs = tools.specs();
    loop {
        let request = ChatRequest { messages: transcript.clone(), tools: specs.clone() };
        let started = Instant::now();
        let reply = retry.send(backend, &request)?;
        let exchange = Exchange {
            backend: backend.name().to_string(),
            request_bytes: reply.request_bytes,
            response_bytes: reply.response_bytes,
            latency: started.elapsed(),
        };
        if let Some(meter) = meter {
            meter.push(exchange.clone());
        }
        exchanges.push(exchange);

        let mut message = reply.message;
        message.role = Role::Assistant;
        let Some(call) = message.tool_call.clone() else {
            transcript.push(message.clone());
            return Ok(Completion { reply: message, transcript, exchanges });
        };
        if rounds == limits.max_tool_rounds {
            return Err(LlmError::ToolRoundsExceeded { rounds });
        }
        let output = tools.run(&call)?;
        rounds += 1;
        transcript.push(message);
        transcript.push(Message::tool_result(output));
    }
}

pub const SYSTEM_PROMPT: &str = "You are an experienced software engineer who develops programs that \
process IoT sensor data. Answer exactly in the requested response format.";

/// A backend bundled with the session's limits, retry policy and audit sinks.
pub struct Llm {
    backend: Arc<dyn ChatBackend>,
    limits: CompletionLimits,
    retry: RetryPolicy,
    meter: TrafficMeter,
    audit: Mutex<Vec<Message>>,
}

impl Llm {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            limits: CompletionLimits::default(),
            retry: RetryPolicy::default(),
            meter: TrafficMeter::default(),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn with_limits(mut self, limits: CompletionLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_meter(mut self, meter: TrafficMeter) -> Self {
        self.meter = meter;
        self
    }

    pub fn meter(&self) -> &TrafficMeter {
        &self.meter
    }

    /// Starts a fresh conversation with `prompt` and returns the reply text.
    pub fn ask(&self, prompt: impl Into<String>, tools: &ToolRegistry) -> Result<String, LlmError> {
        let mut conversation = Self::conversation(prompt);
        self.converse(&mut conversation, tools)
    }

    pub fn conversation(prompt: impl Into<String>) -> Vec<Message> {
        vec![Message::system(SYSTEM_PROMPT), Message::user(prompt)]
    }

    /// Completes `conversation` in place and returns the final reply text.
    pub fn converse(&self, conversation: &mut Vec<Message>, tools: &ToolRegistry) -> Result<String, LlmError> {
        let fresh_from = conversation
            .iter()
            .rposition(|m| matches!(m.role, Role::Assistant | Role::ToolResult))
            .map_or(0, |i| i + 1);
        self.audit.lock().unwrap().extend_from_slice(&conversation[fresh_from..]);

        let completion = complete_metered(
            self.backend.as_ref(),
            conversation,
            tools,
            self.limits,
            &self.retry,
            Some(&self.meter),
        )?;
        let produced = &completion.transcript[conversation.len()..];
        self.audit.lock().unwrap().extend_from_slice(produced);
        *conversation = completion.transcript;
        Ok(completion.reply.content)
    }

    /// Messages exchanged since the last drain, in order.
    pub fn drain_messages(&self) -> Vec<Message> {
        std::mem::take(&mut *self.audit.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned {
        replies: Mutex<Vec<Result<Message, BackendError>>>,
        calls: AtomicUsize,
    }

    impl Canned {
        fn new(mut replies: Vec<Result<Message, BackendError>>) -> Self {
            replies.reverse();
            Self { replies: Mutex::new(replies), calls: AtomicUsize::new(0) }
        }
    }

    impl ChatBackend for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn send(&self, request: &ChatRequest) -> Result<WireReply, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let message = self.replies.lock().unwrap().pop().unwrap_or_else(|| {
                Ok(Message::tool_request("", ToolCall { name: "web_search".into(), arguments: "again".into() }))
            })?;
            Ok(WireReply { message, request_bytes: request.messages.len() as u64, response_bytes: 7 })
        }
    }

    fn no_sleep() -> RetryPolicy {
        RetryPolicy::default().with_sleeper(|_| {})
    }

    fn tools() -> ToolRegistry {
        let mut tools = ToolRegistry::new();
        tools
            .register("web_search", "Search the web for a query.", |q| Ok(format!("results for {q}")))
            .unwrap();
        tools
    }

    fn prompt() -> Vec<Message> {
        vec![Message::system("sys"), Message::user("design an outline")]
    }

    #[test]
    fn plain_reply_is_one_exchange() {
        let backend = Canned::new(vec![Ok(Message::assistant("done"))]);
        let out = complete(&backend, &prompt(), &tools(), CompletionLimits::default(), &no_sleep()).unwrap();
        assert_eq!(out.reply.content, "done");
        assert_eq!(out.exchanges.len(), 1);
        assert_eq!(out.transcript.len(), 3);
    }

    #[test]
    fn tool_round_inserts_result() {
        let call = ToolCall { name: "web_search".into(), arguments: "R-peaks".into() };
        let backend = Canned::new(vec![
            Ok(Message::tool_request("", call.clone())),
            Ok(Message::assistant("outline")),
        ]);
        let input = prompt();
        let out = complete(&backend, &input, &tools(), CompletionLimits::default(), &no_sleep()).unwrap();
        let expected = vec![
            Message::system("sys"),
            Message::user("design an outline"),
            Message::tool_request("", call),
            Message::tool_result("results for R-peaks"),
            Message::assistant("outline"),
        ];
        assert_eq!(out.transcript, expected);
        assert_eq!(out.exchanges.len(), 2);
        assert_eq!(input, prompt(), "input conversation untouched");
        validate_conversation(&out.transcript).unwrap();
    }

    #[test]
    fn tool_rounds_are_bounded() {
        let executed = Arc::new(AtomicUsize::new(0));
        let counter = executed.clone();
        let mut tools = ToolRegistry::new();
        tools
            .register("web_search", "Search.", move |_| {
                counter.fetch_add(1, Ordering::SeqCst);
                Ok(String::new())
            })
            .unwrap();
        let backend = Canned::new(vec![]);
        let err = complete(&backend, &prompt(), &tools, CompletionLimits { max_tool_rounds: 3 }, &no_sleep())
            .unwrap_err();
        assert_eq!(err, LlmError::ToolRoundsExceeded { rounds: 3 });
        assert_eq!(executed.load(Ordering::SeqCst), 3);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn unknown_tool_is_an_error() {
        let backend = Canned::new(vec![Ok(Message::tool_request(
            "",
            ToolCall { name: "shell".into(), arguments: String::new() },
        ))]);
        let err = complete(&backend, &prompt(), &tools(), CompletionLimits::default(), &no_sleep()).unwrap_err();
        assert_eq!(err, LlmError::UnknownTool { name: "shell".into() });
    }

    #[test]
    fn transport_errors_retry_with_backoff() {
        let delays = Arc::new(Mutex::new(Vec::new()));
        let seen = delays.clone();
        let retry = RetryPolicy::default().with_sleeper(move |d| seen.lock().unwrap().push(d));
        let backend = Canned::new(vec![
            Err(BackendError::Transport("reset".into())),
            Err(BackendError::Transport("reset".into())),
            Ok(Message::assistant("ok")),
        ]);
        let out = complete(&backend, &prompt(), &tools(), CompletionLimits::default(), &retry).unwrap();
        assert_eq!(out.reply.content, "ok");
        assert_eq!(*delays.lock().unwrap(), vec![Duration::from_secs(1), Duration::from_secs(2)]);

        let backend = Canned::new(vec![
            Err(BackendError::Transport("a".into())),
            Err(BackendError::Transport("b".into())),
            Err(BackendError::Transport("c".into())),
        ]);
        let err = complete(&backend, &prompt(), &tools(), CompletionLimits::default(), &no_sleep()).unwrap_err();
        assert_eq!(
            err,
            LlmError::BackendUnavailable { backend: "canned".into(), attempts: 3, last: "c".into() }
        );
    }

    #[test]
    fn content_errors_are_not_retried() {
        let backend = Canned::new(vec![Err(BackendError::Rejected("bad request".into()))]);
        let err = complete(&backend, &prompt(), &tools(), CompletionLimits::default(), &no_sleep()).unwrap_err();
        assert!(matches!(err, LlmError::Backend(BackendError::Rejected(_))));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn registry_rejects_duplicates_and_empty_descriptions() {
        let mut tools = tools();
        assert_eq!(
            tools.register("web_search", "again", |_| Ok(String::new())),
            Err(ToolError::Duplicate("web_search".into()))
        );
        assert_eq!(
            tools.register("x", " ", |_| Ok(String::new())),
            Err(ToolError::EmptyDescription("x".into()))
        );
    }

    #[test]
    fn conversation_validation() {
        assert!(validate_conversation(&[Message::user("a"), Message::tool_result("r")]).is_err());
        let mut bad = Message::user("a");
        bad.tool_call = Some(ToolCall { name: "t".into(), arguments: String::new() });
        assert!(validate_conversation(&[bad]).is_err());
    }

    #[test]
    fn llm_audit_records_inputs_and_outputs() {
        let backend = Arc::new(Canned::new(vec![Ok(Message::assistant("one")), Ok(Message::assistant("two"))]));
        let llm = Llm::new(backend).with_retry(no_sleep());
        let mut conversation = Llm::conversation("first");
        llm.converse(&mut conversation, &ToolRegistry::new()).unwrap();
        conversation.push(Message::user("reminder"));
        llm.converse(&mut conversation, &ToolRegistry::new()).unwrap();
        let audit = llm.drain_messages();
        let contents: Vec<_> = audit.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents, vec![SYSTEM_PROMPT, "first", "one", "reminder", "two"]);
        assert_eq!(llm.meter().drain().len(), 2);
    }
}

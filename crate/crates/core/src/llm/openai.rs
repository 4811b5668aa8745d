//! Live chat backend speaking the OpenAI-compatible chat-completions API.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, Message, Role, ToolCall, WireReply};

pub const ENDPOINT_VAR: &str = "SYNTHKIT_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "SYNTHKIT_LLM_API_KEY";
pub const MODEL_VAR: &str = "SYNTHKIT_LLM_MODEL";

const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenAiConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl OpenAiConfig {
    pub fn from_env() -> Result<Self, String> {
        let api_key = std::env::var(API_KEY_VAR).map_err(|_| format!("{API_KEY_VAR} is not set"))?;
        Ok(Self {
            endpoint: std::env::var(ENDPOINT_VAR).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string()),
            api_key,
            model: std::env::var(MODEL_VAR).unwrap_or_else(|_| DEFAULT_MODEL.to_string()),
            timeout: Duration::from_secs(300),
        })
    }
}

pub struct OpenAiChat {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiChat {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    /// Serializes a request into the wire body. Tools take a single string
    /// argument named `input`; tool-call ids are derived from message positions.
    pub fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| match (m.role, &m.tool_call) {
                (Role::Assistant, Some(call)) => json!({
                    "role": "assistant",
                    "content": m.content,
                    "tool_calls": [{
                        "id": format!("call_{i}"),
                        "type": "function",
                        "function": {
                            "name": call.name,
                            "arguments": json!({ "input": call.arguments }).to_string(),
                        },
                    }],
                }),
                (Role::ToolResult, _) => json!({
                    "role": "tool",
                    "tool_call_id": format!("call_{}", i.saturating_sub(1)),
                    "content": m.content,
                }),
                (role, _) => json!({
                    "role": match role {
                        Role::System => "system",
                        Role::User => "user",
                        _ => "assistant",
                    },
                    "content": m.content,
                }),
            })
            .collect();
        let mut body = json!({ "model": self.config.model, "messages": messages });
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": {
                                "type": "object",
                                "properties": { "input": { "type": "string" } },
                                "required": ["input"],
                            },
                        },
                    })
                })
                .collect();
        }
        body
    }
}

pub(crate) fn parse_reply(body: &str) -> Result<Message, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let message = &value["choices"][0]["message"];
    if message.is_null() {
        return Err(BackendError::Malformed("response has no choices[0].message".into()));
    }
    let content = message["content"].as_str().unwrap_or_default().to_string();
    if let Some(call) = message["tool_calls"].get(0) {
        let name = call["function"]["name"]
            .as_str()
            .ok_or_else(|| BackendError::Malformed("tool call without a name".into()))?;
        let raw = call["function"]["arguments"].as_str().unwrap_or_default();
        let arguments = serde_json::from_str::<Value>(raw)
            .ok()
            .and_then(|v| v["input"].as_str().map(str::to_string))
            .unwrap_or_else(|| raw.to_string());
        return Ok(Message::tool_request(content, ToolCall { name: name.to_string(), arguments }));
    }
    Ok(Message::assistant(content))
}

impl ChatBackend for OpenAiChat {
    fn name(&self) -> &str {
        "openai"
    }

    fn send(&self, request: &ChatRequest) -> Result<WireReply, BackendError> {
        let body = self.body(request).to_string();
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.clone())
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Rejected(format!("HTTP {status}: {text}")));
        }
        Ok(WireReply {
            message: parse_reply(&text)?,
            request_bytes: body.len() as u64,
            response_bytes: text.len() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ToolSpec;

    fn chat() -> OpenAiChat {
        OpenAiChat::new(OpenAiConfig {
            endpoint: "http://127.0.0.1:9/none".into(),
            api_key: "k".into(),
            model: "m".into(),
            timeout: Duration::from_secs(1),
        })
        .unwrap()
    }

    #[test]
    fn body_maps_tool_rounds() {
        let request = ChatRequest {
            messages: vec![
                Message::user("q"),
                Message::tool_request("", ToolCall { name: "web_search".into(), arguments: "ecg".into() }),
                Message::tool_result("r"),
            ],
            tools: vec![ToolSpec { name: "web_search".into(), description: "search".into() }],
        };
        let body = chat().body(&request);
        assert_eq!(body["messages"][1]["tool_calls"][0]["id"], "call_1");
        assert_eq!(body["messages"][2]["tool_call_id"], "call_1");
        assert_eq!(body["messages"][2]["role"], "tool");
        assert_eq!(body["tools"][0]["function"]["name"], "web_search");
    }

    #[test]
    fn parses_plain_and_tool_replies() {
        let plain = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(parse_reply(plain).unwrap(), Message::assistant("hi"));
        let tool = r#"{"choices":[{"message":{"role":"assistant","content":null,
            "tool_calls":[{"id":"c","type":"function","function":{"name":"web_search","arguments":"{\"input\":\"ecg\"}"}}]}}]}"#;
        let message = parse_reply(tool).unwrap();
        assert_eq!(message.tool_call.unwrap().arguments, "ecg");
        assert!(parse_reply("{}").is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let err = chat().send(&ChatRequest { messages: vec![Message::user("q")], tools: vec![] }).unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
    }
}

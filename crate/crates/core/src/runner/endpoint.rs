//! Chat-completion endpoints: a real HTTP client and a canned-response
//! replay used for offline pipelines and tests.

use crate::prompts::{ContentPart, Message, Role};
use serde_json::{json, Value};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("auth environment variable '{0}' is not set")]
    AuthMissing(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("replay endpoint exhausted after {0} responses")]
    Exhausted(usize),
}

impl EndpointError {
    /// Worth retrying with backoff?
    pub fn is_transient(&self) -> bool {
        match self {
            EndpointError::Network(_) => true,
            EndpointError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Which JSON field carries the completion budget; providers disagree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenField {
    MaxTokens,
    MaxCompletionTokens,
}

impl TokenField {
    fn as_str(&self) -> &'static str {
        match self {
            TokenField::MaxTokens => "max_tokens",
            TokenField::MaxCompletionTokens => "max_completion_tokens",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    pub token_field: TokenField,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub content: String,
    /// Set when the endpoint rejected sampling parameters and the request
    /// was retried with provider defaults.
    pub sampling_fallback: bool,
}

pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError>;
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

fn message_to_wire(message: &Message) -> Value {
    let text_only = message
        .content
        .iter()
        .all(|p| matches!(p, ContentPart::Text { .. }));
    let content = if text_only {
        json!(message.text_content())
    } else {
        let parts: Vec<Value> = message
            .content
            .iter()
            .map(|part| match part {
                ContentPart::Text { text } => json!({"type": "text", "text": text}),
                ContentPart::Image { media_type, data } => json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{media_type};base64,{data}")}
                }),
            })
            .collect();
        json!(parts)
    };
    json!({"role": role_str(message.role), "content": content})
}

pub fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages.iter().map(message_to_wire).collect::<Vec<_>>(),
    });
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    body[request.token_field.as_str()] = json!(request.max_tokens);
    body
}

/// OpenAI-style chat-completions client over blocking HTTP.
pub struct HttpEndpoint {
    url: String,
    auth_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, auth_env: Option<String>) -> HttpEndpoint {
        HttpEndpoint {
            url: url.into(),
            auth_env,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn post(&self, body: &Value) -> Result<String, EndpointError> {
        let mut builder = self.client.post(&self.url).json(body);
        if let Some(var) = &self.auth_env {
            let token =
                std::env::var(var).map_err(|_| EndpointError::AuthMissing(var.clone()))?;
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| EndpointError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| EndpointError::Network(e.to_string()))?;
        if status >= 400 {
            return Err(EndpointError::Http { status, body: text });
        }
        Ok(text)
    }
}

fn extract_content(raw: &str) -> Result<String, EndpointError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| EndpointError::BadResponse(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            EndpointError::BadResponse("choices[0].message.content missing".to_string())
        })
}

fn rejects_sampling(body: &str) -> bool {
    let lower = body.to_lowercase();
    ["temperature", "top_p", "sampling"]
        .iter()
        .any(|t| lower.contains(t))
        && ["unsupported", "not supported", "does not support", "invalid"]
            .iter()
            .any(|t| lower.contains(t))
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        match self.post(&request_body(request)) {
            Ok(raw) => Ok(ChatResponse {
                content: extract_content(&raw)?,
                sampling_fallback: false,
            }),
            Err(EndpointError::Http { status: 400, body })
                if request.temperature.is_some() && rejects_sampling(&body) =>
            {
                // Provider rejects non-default sampling controls: fall back
                // to defaults and record that behavior.
                let mut bare = request.clone();
                bare.temperature = None;
                let raw = self.post(&request_body(&bare))?;
                Ok(ChatResponse {
                    content: extract_content(&raw)?,
                    sampling_fallback: true,
                })
            }
            Err(err) => Err(err),
        }
    }
}

/// Replays canned completions in order. Downstream pipeline stages must not
/// contact the endpoint again; the call counter makes that checkable.
pub struct ReplayEndpoint {
    responses: Vec<String>,
    cursor: AtomicUsize,
    calls: AtomicUsize,
    cycle: bool,
}

impl ReplayEndpoint {
    pub fn new(responses: Vec<String>) -> ReplayEndpoint {
        ReplayEndpoint {
            responses,
            cursor: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            cycle: false,
        }
    }

    /// Cycle through the canned responses instead of exhausting them.
    pub fn cycling(responses: Vec<String>) -> ReplayEndpoint {
        ReplayEndpoint {
            responses,
            cursor: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            cycle: true,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatEndpoint for ReplayEndpoint {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
        let idx = if self.cycle {
            idx % self.responses.len().max(1)
        } else {
            idx
        };
        match self.responses.get(idx) {
            Some(content) => Ok(ChatResponse {
                content: content.clone(),
                sampling_fallback: false,
            }),
            None => Err(EndpointError::Exhausted(self.responses.len())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{Message, Role};

    #[test]
    fn request_body_uses_the_configured_token_field() {
        let request = ChatRequest {
            model: "m".to_string(),
            messages: vec![Message::text(Role::User, "hi")],
            temperature: Some(0.0),
            max_tokens: 2048,
            token_field: TokenField::MaxCompletionTokens,
        };
        let body = request_body(&request);
        assert_eq!(body["max_completion_tokens"], 2048);
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn image_parts_become_data_urls() {
        let message = Message {
            role: Role::User,
            content: vec![
                ContentPart::Text { text: "look".to_string() },
                ContentPart::Image {
                    media_type: "image/png".to_string(),
                    data: "QUJD".to_string(),
                },
            ],
        };
        let wire = message_to_wire(&message);
        assert_eq!(wire["content"][1]["image_url"]["url"], "data:image/png;base64,QUJD");
    }

    #[test]
    fn replay_endpoint_counts_calls_and_exhausts() {
        let endpoint = ReplayEndpoint::new(vec!["one".to_string()]);
        let request = ChatRequest {
            model: "m".to_string(),
            messages: vec![],
            temperature: None,
            max_tokens: 16,
            token_field: TokenField::MaxTokens,
        };
        assert_eq!(endpoint.complete(&request).unwrap().content, "one");
        assert!(matches!(
            endpoint.complete(&request),
            Err(EndpointError::Exhausted(1))
        ));
        assert_eq!(endpoint.calls(), 2);
    }

    #[test]
    fn transient_classification() {
        assert!(EndpointError::Network("reset".to_string()).is_transient());
        assert!(EndpointError::Http { status: 503, body: String::new() }.is_transient());
        assert!(!EndpointError::Http { status: 401, body: String::new() }.is_transient());
    }

    #[test]
    fn sampling_rejection_detection() {
        assert!(rejects_sampling("{\"error\": \"temperature is not supported\"}"));
        assert!(!rejects_sampling("{\"error\": \"model overloaded\"}"));
    }
}

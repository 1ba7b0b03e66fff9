//! Chat-completion transport and the metered session wrapper every call goes
//! through.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result, TransportError};
use crate::ledger::{Purpose, SharedLedger};

pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";
pub const BASE_URL_ENV: &str = "LLM_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Content of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
}

/// A chat-completion endpoint.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Rough token count used by offline clients: one token per four bytes.
pub fn approx_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Connection settings for an OpenAI-compatible endpoint. Holds the name of
/// the environment variable carrying the key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Ledger and price-table key.
    pub provider: String,
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        Self {
            base_url: base_url.into(),
            provider: model.clone(),
            model,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_ms: 60_000,
            max_retries: 2,
        }
    }

    /// Base URL from `LLM_BASE_URL`, falling back to the OpenAI API.
    pub fn from_env(model: impl Into<String>) -> Self {
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        Self::new(base, model)
    }
}

pub struct HttpChatClient {
    config: LlmEndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: LlmEndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self { config, agent, api_key }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut call = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(request).map_err(|e| TransportError::protocol(e.to_string()))?;
        let response: Value = call
            .send_json(body)?
            .into_json()
            .map_err(|e| TransportError::protocol(format!("response is not JSON: {e}")))?;
        parse_chat_response(&response)
    }
}

/// Reads content and token usage from an OpenAI-style completion body.
pub fn parse_chat_response(body: &Value) -> Result<ChatResponse, TransportError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .or_else(|| body.get("content").and_then(Value::as_str))
        .ok_or_else(|| TransportError::protocol("response has no message content"))?
        .to_string();
    let usage = body.get("usage");
    let count = |keys: &[&str]| -> u64 {
        usage
            .and_then(|u| keys.iter().find_map(|k| u.get(*k).and_then(Value::as_u64)))
            .unwrap_or(0)
    };
    Ok(ChatResponse {
        content,
        usage: TokenUsage {
            input_tokens: count(&["prompt_tokens", "input_tokens"]),
            output_tokens: count(&["completion_tokens", "output_tokens"]),
        },
    })
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

/// In-memory chat model driven by a reply function. Token usage is estimated
/// with [`approx_tokens`]. Every request is kept for inspection.
pub struct ScriptedChat {
    reply: Box<ReplyFn>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn from_fn(reply: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        Self {
            reply: Box::new(reply),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Always replies with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_| Ok(text.clone()))
    }

    /// Replies with each item in turn, then repeats the last one.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queue: Mutex<VecDeque<String>> = Mutex::new(replies.into_iter().map(Into::into).collect());
        Self::from_fn(move |_| {
            let mut q = queue.lock().expect("scripted queue");
            let next = if q.len() > 1 { q.pop_front() } else { q.front().cloned() };
            next.ok_or_else(|| TransportError::protocol("scripted chat has no replies"))
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("scripted log").clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().expect("scripted log").len()
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        self.log.lock().expect("scripted log").push(request.clone());
        let content = (self.reply)(request)?;
        let input: u64 = request.messages.iter().map(|m| approx_tokens(&m.content)).sum();
        Ok(ChatResponse {
            usage: TokenUsage {
                input_tokens: input,
                output_tokens: approx_tokens(&content),
            },
            content,
        })
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (**self).complete(request)
    }
}

/// A chat client bound to a model, a ledger account and a transport retry
/// policy. Every issued request, including retries and failures, is recorded
/// in the ledger.
#[derive(Clone)]
pub struct LlmSession {
    client: Arc<dyn ChatClient>,
    model: String,
    provider: String,
    ledger: SharedLedger,
    max_retries: u32,
    backoff: Duration,
}

impl LlmSession {
    pub fn new(client: Arc<dyn ChatClient>, model: impl Into<String>, provider: impl Into<String>, ledger: SharedLedger) -> Self {
        Self {
            client,
            model: model.into(),
            provider: provider.into(),
            ledger,
            max_retries: 2,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn ledger(&self) -> &SharedLedger {
        &self.ledger
    }

    /// Sends one chat at temperature 0, retrying transient transport errors.
    pub fn chat(&self, purpose: Purpose, messages: Vec<ChatMessage>) -> Result<ChatResponse> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: 0.0,
        };
        let mut attempt = 0;
        loop {
            let result = self.client.complete(&request);
            {
                let mut ledger = self.ledger.lock().expect("ledger lock");
                let usage = result.as_ref().map(|r| r.usage).unwrap_or_default();
                ledger.record(&self.provider, purpose, usage.input_tokens, usage.output_tokens);
            }
            match result {
                Ok(response) => return Ok(response),
                Err(err) if err.is_retriable() && attempt < self.max_retries => {
                    tracing::warn!(provider = %self.provider, attempt, error = %err, "LLM request failed, retrying");
                    if !self.backoff.is_zero() {
                        std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt));
                    }
                    attempt += 1;
                }
                Err(err) => return Err(Error::LlmUnavailable(err)),
            }
        }
    }
}

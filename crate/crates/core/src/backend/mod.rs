//! Reasoning backends: the chat-completion abstraction behind the
//! chain-of-thought, an HTTP client for remote endpoints and a scripted
//! fixture backend for offline runs.

mod remote;
mod scripted;
pub mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{Band, Family, OctantLabel};
use crate::metaphor::{SceneContext, StepId};

pub use remote::RemoteReasoner;
pub use scripted::{make_scripted, FixtureKey, ScriptedBackend, ScriptedFixture};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no fixture for key {key}")]
    FixtureMiss { key: String },
    #[error("invalid fixture: {0}")]
    Fixture(String),
}

/// Connection settings for a remote chat-completions endpoint.
///
/// The credential itself is never stored here; `api_key_env` names the
/// environment variable it is read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub api_key_env: String,
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(format!("{}: {m}", self.backend_id)));
        if self.backend_id.trim().is_empty() {
            return Err(BackendError::Config("backend_id is empty".into()));
        }
        if self.endpoint_url.trim().is_empty() {
            return bad("endpoint_url is empty");
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        if self.api_key_env.trim().is_empty() {
            return bad("api_key_env is empty");
        }
        Ok(())
    }

    /// Chat-completions endpoint for GPT-4o at temperature 1.
    pub fn gpt4o() -> Self {
        Self {
            backend_id: "gpt-4o".into(),
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            temperature: 1.0,
            max_tokens: 2048,
            timeout_ms: 120_000,
            max_retries: 3,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }

    /// Chat-completions endpoint for DeepSeek-Chat at temperature 1.3.
    pub fn deepseek_chat() -> Self {
        Self {
            backend_id: "deepseek-chat".into(),
            endpoint_url: "https://api.deepseek.com/chat/completions".into(),
            model_name: "deepseek-chat".into(),
            temperature: 1.3,
            max_tokens: 2048,
            timeout_ms: 120_000,
            max_retries: 3,
            api_key_env: "DEEPSEEK_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Routing metadata for deterministic backends. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTag {
    pub step: StepId,
    /// Nearest rim octant of the input, used as the fixture bucket.
    pub octant: OctantLabel,
    pub family: Family,
    pub intensity: Band,
    pub scene: SceneContext,
}

/// One chat-completion call: a system prompt and alternating turns ending in a user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteTag>,
}

impl ChatRequest {
    pub fn new(
        system_text: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, BackendError> {
        let req = Self {
            system_text: system_text.into(),
            messages,
            temperature,
            max_tokens,
            route: None,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn with_route(mut self, route: RouteTag) -> Self {
        self.route = Some(route);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::InvalidRequest("no user turn".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(BackendError::InvalidRequest(
                "last turn must be a user turn".into(),
            ));
        }
        let total: usize = self.system_text.trim().len()
            + self
                .messages
                .iter()
                .map(|m| m.content.trim().len())
                .sum::<usize>();
        if total == 0 {
            return Err(BackendError::InvalidRequest("request text is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The final user turn.
    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// All text in the request, system prompt first.
    pub fn full_text(&self) -> String {
        let mut out = self.system_text.clone();
        for m in &self.messages {
            out.push_str("\n\n");
            out.push_str(&m.content);
        }
        out
    }
}

/// A chat-completion backend.
pub trait Reasoner: Send + Sync {
    fn backend_id(&self) -> &str;
    fn model_name(&self) -> &str;
    fn temperature(&self) -> f64;
    fn max_tokens(&self) -> u32 {
        2048
    }
    /// Identifies everything that can change this backend's answers; part of
    /// pipeline cache keys.
    fn fingerprint(&self) -> String {
        format!("{}|{}", self.backend_id(), self.model_name())
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<R: Reasoner + ?Sized> Reasoner for std::sync::Arc<R> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn temperature(&self) -> f64 {
        (**self).temperature()
    }
    fn max_tokens(&self) -> u32 {
        (**self).max_tokens()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::transport::{excerpt, post_with_retries, Backoff, Exchange, HttpRequest, HttpTransport};
use super::{BackendConfig, BackendError, ChatRequest, Reasoner};

const EXCERPT_CHARS: usize = 300;

/// Chat-completions client (`messages` array, bearer auth).
pub struct RemoteReasoner {
    config: BackendConfig,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
    backoff: Backoff,
}

impl fmt::Debug for RemoteReasoner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteReasoner")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl RemoteReasoner {
    /// Resolves the credential from `config.api_key_env`.
    pub fn new(
        config: BackendConfig,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            BackendError::Config(format!(
                "environment variable {} is not set for backend {}",
                config.api_key_env, config.backend_id
            ))
        })?;
        if api_key.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "environment variable {} is empty",
                config.api_key_env
            )));
        }
        Ok(Self::with_key(config, api_key, transport))
    }

    pub fn with_key(
        config: BackendConfig,
        api_key: String,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            config,
            api_key,
            transport,
            backoff: Backoff::default(),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// JSON body sent for `request`.
    pub fn wire_payload(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_text})];
        messages.extend(
            request
                .messages
                .iter()
                .map(|m| json!({"role": m.role, "content": m.content})),
        );
        json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
    }

    fn redact(&self, text: String) -> String {
        text.replace(&self.api_key, "[redacted]")
    }
}

impl Reasoner for RemoteReasoner {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn max_tokens(&self) -> u32 {
        self.config.max_tokens
    }

    fn fingerprint(&self) -> String {
        format!(
            "{}|{}|{}",
            self.config.backend_id, self.config.model_name, self.config.endpoint_url
        )
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut http = HttpRequest::json(
            &self.config.endpoint_url,
            &self.wire_payload(request),
            Duration::from_millis(self.config.timeout_ms),
        );
        http.headers
            .push(("Authorization".into(), format!("Bearer {}", self.api_key)));
        match post_with_retries(
            self.transport.as_ref(),
            &http,
            self.config.max_retries,
            &self.backoff,
        ) {
            Exchange::Failed { error, attempts } => Err(BackendError::Transport {
                attempts,
                message: self.redact(error.to_string()),
            }),
            Exchange::Response { response, .. } if !response.is_success() => {
                Err(BackendError::Status {
                    status: response.status,
                    excerpt: self.redact(excerpt(&response.body, EXCERPT_CHARS)),
                })
            }
            Exchange::Response { response, .. } => {
                let body: Value = serde_json::from_slice(&response.body).map_err(|e| {
                    BackendError::MalformedResponse(format!("body is not JSON: {e}"))
                })?;
                body.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| {
                        BackendError::MalformedResponse(self.redact(format!(
                            "missing choices[0].message.content in {}",
                            excerpt(&response.body, EXCERPT_CHARS)
                        )))
                    })
            }
        }
    }
}

//! Blocking HTTP transport shared by the remote reasoning and image clients.
//!
//! Clients talk to an [`HttpTransport`] rather than to an HTTP library, so
//! tests can record outgoing payloads or simulate failures, and so the
//! in-flight cap can be layered on top of any transport.

use std::fmt;
use std::io::Read;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use thiserror::Error;

#[derive(Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub timeout: Duration,
    /// Responses larger than this many bytes are rejected.
    pub max_response_bytes: usize,
}

impl HttpRequest {
    pub fn json(url: &str, body: &serde_json::Value, timeout: Duration) -> Self {
        Self {
            url: url.to_string(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: serde_json::to_vec(body).expect("json value serializes"),
            timeout,
            max_response_bytes: 64 * 1024 * 1024,
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn body_json(&self) -> Option<serde_json::Value> {
        serde_json::from_slice(&self.body).ok()
    }
}

// Header values may carry credentials.
impl fmt::Debug for HttpRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers: Vec<&str> = self.headers.iter().map(|(k, _)| k.as_str()).collect();
        f.debug_struct("HttpRequest")
            .field("url", &self.url)
            .field("headers", &headers)
            .field("body_len", &self.body.len())
            .field("timeout", &self.timeout)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        self.status == 429 || self.status >= 500
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("response exceeds {limit} bytes")]
    TooLarge { limit: usize },
    #[error("transport error: {0}")]
    Other(String),
}

pub trait HttpTransport: Send + Sync {
    /// POST the request. Non-2xx statuses are returned as responses, not errors.
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
        }
    }
}

impl UreqTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl HttpTransport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.post(&request.url).timeout(request.timeout);
        for (k, v) in &request.headers {
            req = req.set(k, v);
        }
        let response = match req.send_bytes(&request.body) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => {
                return Err(match t.kind() {
                    ureq::ErrorKind::Io if t.to_string().contains("timed out") => {
                        TransportError::Timeout
                    }
                    ureq::ErrorKind::Dns | ureq::ErrorKind::ConnectionFailed => {
                        TransportError::Connect(t.to_string())
                    }
                    _ => TransportError::Other(t.to_string()),
                })
            }
        };
        let status = response.status();
        let limit = request.max_response_bytes;
        let mut body = Vec::new();
        response
            .into_reader()
            .take(limit as u64 + 1)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Other(e.to_string()))?;
        if body.len() > limit {
            return Err(TransportError::TooLarge { limit });
        }
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore used to cap concurrent requests.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap_or_else(|e| e.into_inner());
        }
        *permits -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Wraps a transport so at most `cap` requests are in flight at once.
pub struct InflightLimit {
    inner: Arc<dyn HttpTransport>,
    semaphore: Semaphore,
}

impl InflightLimit {
    pub fn new(inner: Arc<dyn HttpTransport>, cap: usize) -> Self {
        Self {
            inner,
            semaphore: Semaphore {
                permits: Mutex::new(cap.max(1)),
                cv: Condvar::new(),
            },
        }
    }
}

impl HttpTransport for InflightLimit {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let _permit = self.semaphore.acquire();
        self.inner.post(request)
    }
}

/// Records every request; forwards to an inner transport or fails with
/// a connection error when there is none.
#[derive(Default)]
pub struct RecordingTransport {
    inner: Option<Arc<dyn HttpTransport>>,
    requests: Mutex<Vec<HttpRequest>>,
}

impl RecordingTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrapping(inner: Arc<dyn HttpTransport>) -> Self {
        Self {
            inner: Some(inner),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn count(&self) -> usize {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }
}

impl HttpTransport for RecordingTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        match &self.inner {
            Some(inner) => inner.post(request),
            None => Err(TransportError::Connect("no network in recorder".into())),
        }
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(250),
            factor: 2,
        }
    }
}

impl Backoff {
    /// Upper bound of the sleep before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let mult = (self.factor as u64).saturating_pow(retry).min(1 << 20);
        self.base.saturating_mul(mult as u32)
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let ceiling = self.ceiling(retry).as_millis() as u64;
        if ceiling == 0 {
            return Duration::ZERO;
        }
        Duration::from_millis(rand::thread_rng().gen_range(0..=ceiling))
    }
}

/// Outcome of a retried exchange.
#[derive(Debug)]
pub enum Exchange {
    Response {
        response: HttpResponse,
        attempts: u32,
    },
    Failed {
        error: TransportError,
        attempts: u32,
    },
}

/// Posts `request`, retrying transport failures and transient statuses up to
/// `max_retries` times. A non-transient status is returned immediately.
pub fn post_with_retries(
    transport: &dyn HttpTransport,
    request: &HttpRequest,
    max_retries: u32,
    backoff: &Backoff,
) -> Exchange {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let result = transport.post(request);
        let retry = attempts <= max_retries;
        match result {
            Ok(response) if response.is_success() || !response.is_transient() || !retry => {
                return Exchange::Response { response, attempts }
            }
            Err(error @ TransportError::TooLarge { .. }) => {
                return Exchange::Failed { error, attempts }
            }
            Err(error) if !retry => return Exchange::Failed { error, attempts },
            Ok(response) => {
                log::debug!(
                    "transient status {} from {}, retrying",
                    response.status,
                    request.url
                );
            }
            Err(error) => log::debug!("transport error from {}: {error}, retrying", request.url),
        }
        std::thread::sleep(backoff.delay(attempts - 1));
    }
}

/// First `max` characters of a body, for error messages.
pub fn excerpt(body: &[u8], max: usize) -> String {
    let text = String::from_utf8_lossy(body);
    let mut out: String = text.chars().take(max).collect();
    if text.chars().count() > max {
        out.push('…');
    }
    out
}

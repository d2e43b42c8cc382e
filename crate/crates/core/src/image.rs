//! Text-to-panorama generation.
//!
//! Panoramas are equirectangular, so every panorama request must be exactly
//! 2:1; the check runs before any transport is touched. The stub backend
//! renders a hash-derived pattern so offline runs are reproducible.

use std::fmt;
use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::{ImageFormat as CodecFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::transport::{
    excerpt, post_with_retries, Backoff, Exchange, HttpRequest, HttpTransport,
};

/// Default panorama width; height is half of it.
pub const DEFAULT_WIDTH: u32 = 2048;
pub const DEFAULT_HEIGHT: u32 = 1024;

/// Strength used by [`anchor_chain`] when none is given.
pub const DEFAULT_INIT_STRENGTH: f64 = 0.55;

/// Largest accepted response body from a remote image service.
pub const DEFAULT_MAX_RESPONSE_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("panorama must be 2:1, got {width}x{height}")]
    Aspect { width: u32, height: u32 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("image service returned status {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("response exceeds the {limit}-byte limit")]
    SizeLimit { limit: usize },
    #[error("malformed image response: {0}")]
    MalformedResponse(String),
    #[error("image payload invalid: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }

    fn codec(self) -> CodecFormat {
        match self {
            ImageFormat::Png => CodecFormat::Png,
            ImageFormat::Jpeg => CodecFormat::Jpeg,
        }
    }

    /// Sniffs the format from magic bytes.
    pub fn detect(bytes: &[u8]) -> Option<ImageFormat> {
        match image::guess_format(bytes).ok()? {
            CodecFormat::Png => Some(ImageFormat::Png),
            CodecFormat::Jpeg => Some(ImageFormat::Jpeg),
            _ => None,
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpeg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub panorama: bool,
    /// Base64 image to start from (image-to-image).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_strength: Option<f64>,
}

impl GenerationRequest {
    /// A default-size panorama request.
    pub fn panorama(prompt_text: impl Into<String>, seed: u64) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            seed,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            panorama: true,
            init_image: None,
            init_strength: None,
        }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if self.prompt_text.trim().is_empty() {
            return Err(ImageError::InvalidRequest("prompt is empty".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ImageError::InvalidRequest(format!(
                "dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.panorama && u64::from(self.width) != 2 * u64::from(self.height) {
            return Err(ImageError::Aspect {
                width: self.width,
                height: self.height,
            });
        }
        match (&self.init_image, self.init_strength) {
            (Some(_), Some(s)) if !(0.0..=1.0).contains(&s) => Err(ImageError::InvalidRequest(
                format!("init_strength must be in [0, 1], got {s}"),
            )),
            (Some(_), None) | (None, Some(_)) => Err(ImageError::InvalidRequest(
                "init_image and init_strength must be given together".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub payload_b64: String,
    pub format: ImageFormat,
    pub width: u32,
    pub height: u32,
    pub seed_used: u64,
    pub backend_id: String,
}

impl ImageResult {
    /// Decodes the payload and checks it against the declared format and size.
    pub fn verify(&self) -> Result<Vec<u8>, ImageError> {
        let bytes = STANDARD
            .decode(&self.payload_b64)
            .map_err(|e| ImageError::Payload(e.to_string()))?;
        let detected = ImageFormat::detect(&bytes)
            .ok_or_else(|| ImageError::Payload("not a PNG or JPEG image".into()))?;
        if detected != self.format {
            return Err(ImageError::Payload(format!(
                "declared {} but payload is {detected}",
                self.format
            )));
        }
        let (w, h) = image::ImageReader::with_format(Cursor::new(&bytes), detected.codec())
            .into_dimensions()
            .map_err(|e| ImageError::Payload(e.to_string()))?;
        if (w, h) != (self.width, self.height) {
            return Err(ImageError::Payload(format!(
                "declared {}x{} but payload is {w}x{h}",
                self.width, self.height
            )));
        }
        Ok(bytes)
    }
}

pub trait ImageBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<ImageResult, ImageError>;
}

impl<B: ImageBackend + ?Sized> ImageBackend for Arc<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn generate(&self, request: &GenerationRequest) -> Result<ImageResult, ImageError> {
        (**self).generate(request)
    }
}

/// SHA-256 over the prompt, seed and dimensions: the stub's only input.
pub fn stub_digest(prompt_text: &str, seed: u64, width: u32, height: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((prompt_text.len() as u64).to_le_bytes());
    h.update(prompt_text.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    h.finalize().into()
}

/// Renders a deterministic PNG for `request`.
///
/// The pattern is two gradients and a checker whose colors come from
/// [`stub_digest`]; the first pixel is exactly the first three digest bytes.
pub fn stub_generate(request: &GenerationRequest) -> Result<ImageResult, ImageError> {
    request.validate()?;
    let d = stub_digest(
        &request.prompt_text,
        request.seed,
        request.width,
        request.height,
    );
    let (w, h) = (request.width, request.height);
    let cell = 1 + u32::from(d[3]) % 64;
    let img = RgbImage::from_fn(w, h, |x, y| {
        let gx = ((u64::from(x) * 256) / u64::from(w)) as u8;
        let gy = ((u64::from(y) * 256) / u64::from(h)) as u8;
        let checker = if (x / cell + y / cell) % 2 == 0 {
            0
        } else {
            d[4]
        };
        image::Rgb([d[0].wrapping_add(gx), d[1].wrapping_add(gy), d[2] ^ checker])
    });
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), CodecFormat::Png)
        .map_err(|e| ImageError::Payload(e.to_string()))?;
    Ok(ImageResult {
        payload_b64: STANDARD.encode(&png),
        format: ImageFormat::Png,
        width: w,
        height: h,
        seed_used: request.seed,
        backend_id: "stub".into(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct StubImageBackend;

impl ImageBackend for StubImageBackend {
    fn backend_id(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<ImageResult, ImageError> {
        stub_generate(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBackendConfig {
    pub backend_id: String,
    pub endpoint_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Environment variable holding a bearer token, if the service needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_bytes")]
    pub max_response_bytes: usize,
}

fn default_timeout_ms() -> u64 {
    300_000
}
fn default_retries() -> u32 {
    2
}
fn default_max_bytes() -> usize {
    DEFAULT_MAX_RESPONSE_BYTES
}

impl ImageBackendConfig {
    pub fn new(backend_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            endpoint_url: endpoint_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            api_key_env: None,
            max_response_bytes: DEFAULT_MAX_RESPONSE_BYTES,
        }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if self.backend_id.trim().is_empty() {
            return Err(ImageError::Config("backend_id is empty".into()));
        }
        if self.endpoint_url.trim().is_empty() {
            return Err(ImageError::Config(format!(
                "{}: endpoint_url is empty",
                self.backend_id
            )));
        }
        if self.timeout_ms == 0 || self.max_response_bytes == 0 {
            return Err(ImageError::Config(format!(
                "{}: timeout and size limit must be positive",
                self.backend_id
            )));
        }
        Ok(())
    }
}

/// Client for a diffusion HTTP service taking
/// `{prompt, seed, width, height, init_image?, strength?}` and returning
/// `{image, seed}`.
pub struct RemoteImageBackend {
    config: ImageBackendConfig,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    backoff: Backoff,
}

impl fmt::Debug for RemoteImageBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteImageBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "[redacted]"))
            .finish()
    }
}

impl RemoteImageBackend {
    pub fn new(
        config: ImageBackendConfig,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, ImageError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ImageError::Config(format!(
                    "{}: environment variable {var} is not set",
                    config.backend_id
                ))
            })?),
            None => None,
        };
        Ok(Self {
            config,
            api_key,
            transport,
            backoff: Backoff::default(),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn wire_payload(request: &GenerationRequest) -> Value {
        let mut body = json!({
            "prompt": request.prompt_text,
            "seed": request.seed,
            "width": request.width,
            "height": request.height,
        });
        if let (Some(init), Some(strength)) = (&request.init_image, request.init_strength) {
            body["init_image"] = json!(init);
            body["strength"] = json!(strength);
        }
        body
    }

    fn redact(&self, text: String) -> String {
        match &self.api_key {
            Some(k) if !k.is_empty() => text.replace(k.as_str(), "[redacted]"),
            _ => text,
        }
    }
}

impl ImageBackend for RemoteImageBackend {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<ImageResult, ImageError> {
        request.validate()?;
        let mut http = HttpRequest::json(
            &self.config.endpoint_url,
            &Self::wire_payload(request),
            Duration::from_millis(self.config.timeout_ms),
        );
        http.max_response_bytes = self.config.max_response_bytes;
        if let Some(key) = &self.api_key {
            http.headers
                .push(("Authorization".into(), format!("Bearer {key}")));
        }
        let response = match post_with_retries(
            self.transport.as_ref(),
            &http,
            self.config.max_retries,
            &self.backoff,
        ) {
            Exchange::Failed { error, attempts } => {
                if let crate::backend::transport::TransportError::TooLarge { limit } = error {
                    return Err(ImageError::SizeLimit { limit });
                }
                return Err(ImageError::Transport {
                    attempts,
                    message: self.redact(error.to_string()),
                });
            }
            Exchange::Response { response, .. } => response,
        };
        if !response.is_success() {
            return Err(ImageError::Status {
                status: response.status,
                excerpt: self.redact(excerpt(&response.body, 200)),
            });
        }
        if response.body.len() > self.config.max_response_bytes {
            return Err(ImageError::SizeLimit {
                limit: self.config.max_response_bytes,
            });
        }
        let body: Value = serde_json::from_slice(&response.body)
            .map_err(|e| ImageError::MalformedResponse(format!("body is not JSON: {e}")))?;
        let payload = body
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| ImageError::MalformedResponse("missing `image`".into()))?;
        let seed_used = body
            .get("seed")
            .and_then(Value::as_u64)
            .unwrap_or(request.seed);
        if seed_used != request.seed {
            return Err(ImageError::MalformedResponse(format!(
                "service used seed {seed_used}, requested {}",
                request.seed
            )));
        }
        let bytes = STANDARD
            .decode(payload)
            .map_err(|e| ImageError::Payload(e.to_string()))?;
        let format = ImageFormat::detect(&bytes)
            .ok_or_else(|| ImageError::Payload("not a PNG or JPEG image".into()))?;
        let (width, height) = image::ImageReader::with_format(Cursor::new(&bytes), format.codec())
            .into_dimensions()
            .map_err(|e| ImageError::Payload(e.to_string()))?;
        if (width, height) != (request.width, request.height) {
            return Err(ImageError::Payload(format!(
                "requested {}x{}, service returned {width}x{height}",
                request.width, request.height
            )));
        }
        Ok(ImageResult {
            payload_b64: payload.to_string(),
            format,
            width,
            height,
            seed_used,
            backend_id: self.config.backend_id.clone(),
        })
    }
}

/// Turns `request` into an image-to-image request anchored on `base`.
/// `strength` defaults to [`DEFAULT_INIT_STRENGTH`].
pub fn anchor_chain(
    base: &ImageResult,
    request: &GenerationRequest,
    strength: Option<f64>,
) -> GenerationRequest {
    GenerationRequest {
        init_image: Some(base.payload_b64.clone()),
        init_strength: Some(strength.unwrap_or(DEFAULT_INIT_STRENGTH)),
        ..request.clone()
    }
}

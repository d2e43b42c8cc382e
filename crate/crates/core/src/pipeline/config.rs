//! Pipeline configuration: one JSON document, overridable from the
//! environment and then from command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::affect::{prototypical_va_pairs, CircumplexGeometry, VaPair};
use crate::backend::BackendConfig;
use crate::image::{ImageBackendConfig, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::metaphor::{builtin_scenes, ChainMode, SceneContext};
use crate::prompt::DEFAULT_MAX_CHARS;

pub const ENV_OUTPUT_DIR: &str = "BIOMETAPHOR_OUTPUT_DIR";
pub const ENV_CACHE_DIR: &str = "BIOMETAPHOR_CACHE_DIR";
pub const ENV_SEED: &str = "BIOMETAPHOR_SEED";

/// A reasoning backend: a remote endpoint or a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReasonerConfig {
    Remote(BackendConfig),
    Scripted {
        backend_id: String,
        /// `scripted-a`, `scripted-b` or a path to a fixture file.
        fixture: String,
        #[serde(default = "one")]
        temperature: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ReasonerConfig {
    pub fn backend_id(&self) -> &str {
        match self {
            ReasonerConfig::Remote(c) => &c.backend_id,
            ReasonerConfig::Scripted { backend_id, .. } => backend_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageBackendKind {
    Stub,
    Remote(ImageBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSettings {
    pub backend: ImageBackendKind,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_width() -> u32 {
    DEFAULT_WIDTH
}
fn default_height() -> u32 {
    DEFAULT_HEIGHT
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self {
            backend: ImageBackendKind::Remote(ImageBackendConfig::new(
                "sdxl-panorama",
                "http://127.0.0.1:7860/generate",
            )),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

/// Either `{"count": n}` (evenly spaced rim points) or `{"pairs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    #[serde(rename = "count")]
    Count(usize),
    #[serde(rename = "pairs")]
    Pairs(Vec<VaPair>),
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::Count(8)
    }
}

impl Dataset {
    pub fn pairs(&self, geometry: &CircumplexGeometry) -> Result<Vec<VaPair>, PipelineError> {
        match self {
            Dataset::Count(n) => prototypical_va_pairs(*n, geometry)
                .map_err(|e| PipelineError::Config(format!("dataset: {e}"))),
            Dataset::Pairs(p) if p.is_empty() => {
                Err(PipelineError::Config("dataset is empty".into()))
            }
            Dataset::Pairs(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub reasoning: Vec<ReasonerConfig>,
    /// Adds the rule-table backend as one more reasoning backend.
    pub use_rule_engine: bool,
    pub chain_mode: ChainMode,
    pub max_repairs: u32,
    pub image: ImageSettings,
    pub geometry: CircumplexGeometry,
    pub scenes: Vec<SceneContext>,
    pub dataset: Dataset,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub concurrency: usize,
    pub max_prompt_chars: usize,
    pub reasoning_inflight: usize,
    pub image_inflight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reasoning: vec![
                ReasonerConfig::Remote(BackendConfig::gpt4o()),
                ReasonerConfig::Remote(BackendConfig::deepseek_chat()),
            ],
            use_rule_engine: false,
            chain_mode: ChainMode::Conversational,
            max_repairs: 2,
            image: ImageSettings::default(),
            geometry: CircumplexGeometry::default(),
            scenes: builtin_scenes(),
            dataset: Dataset::default(),
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            seed: 0,
            concurrency: 2,
            max_prompt_chars: DEFAULT_MAX_CHARS,
            reasoning_inflight: 4,
            image_inflight: 2,
        }
    }
}

impl PipelineConfig {
    /// Offline configuration: both scripted fixtures and the stub image backend.
    pub fn mock() -> Self {
        Self {
            reasoning: vec![
                ReasonerConfig::Scripted {
                    backend_id: "scripted-a".into(),
                    fixture: "scripted-a".into(),
                    temperature: 1.0,
                },
                ReasonerConfig::Scripted {
                    backend_id: "scripted-b".into(),
                    fixture: "scripted-b".into(),
                    temperature: 1.3,
                },
            ],
            image: ImageSettings {
                backend: ImageBackendKind::Stub,
                ..ImageSettings::default()
            },
            ..Self::default()
        }
    }

    /// Replaces every backend with its offline counterpart, keeping the rest.
    pub fn into_mock(self) -> Self {
        let mock = Self::mock();
        Self {
            reasoning: mock.reasoning,
            image: ImageSettings {
                backend: ImageBackendKind::Stub,
                ..self.image
            },
            ..self
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `BIOMETAPHOR_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), PipelineError> {
        if let Some(dir) = var(ENV_OUTPUT_DIR).filter(|v| !v.is_empty()) {
            self.output_dir = dir.into();
        }
        if let Some(dir) = var(ENV_CACHE_DIR).filter(|v| !v.is_empty()) {
            self.cache_dir = Some(dir.into());
        }
        if let Some(seed) = var(ENV_SEED).filter(|v| !v.is_empty()) {
            self.seed = seed.parse().map_err(|_| {
                PipelineError::Config(format!("{ENV_SEED}={seed:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.reasoning.is_empty() && !self.use_rule_engine {
            return bad("at least one reasoning backend or use_rule_engine is required".into());
        }
        let mut ids = BTreeSet::new();
        for r in &self.reasoning {
            if !ids.insert(r.backend_id()) {
                return bad(format!("duplicate backend id {}", r.backend_id()));
            }
            match r {
                ReasonerConfig::Remote(c) => c
                    .validate()
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
                ReasonerConfig::Scripted {
                    backend_id,
                    fixture,
                    temperature,
                } => {
                    if backend_id.trim().is_empty() || fixture.trim().is_empty() {
                        return bad("scripted backend needs backend_id and fixture".into());
                    }
                    if !(temperature.is_finite() && *temperature >= 0.0) {
                        return bad(format!("{backend_id}: temperature must be >= 0"));
                    }
                }
            }
        }
        if self.use_rule_engine && ids.contains("rule-engine") {
            return bad("backend id rule-engine is reserved".into());
        }
        if self.scenes.is_empty() {
            return bad("at least one scene is required".into());
        }
        let mut scene_ids = BTreeSet::new();
        for s in &self.scenes {
            s.validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            if !scene_ids.insert(s.scene_id.as_str()) {
                return bad(format!("duplicate scene id {}", s.scene_id));
            }
        }
        self.dataset.pairs(&self.geometry)?;
        if self.concurrency == 0 || self.reasoning_inflight == 0 || self.image_inflight == 0 {
            return bad("concurrency limits must be positive".into());
        }
        if self.image.width == 0 || self.image.height == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.image.width != 2 * self.image.height {
            return bad(format!(
                "panorama must be 2:1, got {}x{}",
                self.image.width, self.image.height
            ));
        }
        if let ImageBackendKind::Remote(c) = &self.image.backend {
            c.validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_mock_validate() {
        PipelineConfig::default().validate().unwrap();
        let mock = PipelineConfig::mock();
        mock.validate().unwrap();
        assert_eq!(mock.reasoning.len(), 2);
        assert_eq!(mock.scenes.len(), 3);
        assert_eq!(mock.dataset.pairs(&mock.geometry).unwrap().len(), 8);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_json(
            r#"{"seed": 9, "dataset": {"pairs": [{"valence": 0.2, "arousal": 0.3}]},
                "reasoning": [{"kind": "scripted", "backend_id": "a", "fixture": "scripted-a"}]}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.concurrency, 2);
        assert_eq!(c.dataset.pairs(&c.geometry).unwrap().len(), 1);
        c.validate().unwrap();
    }

    #[test]
    fn env_overrides_file_values() {
        let mut c = PipelineConfig::mock();
        c.apply_env(|k| match k {
            ENV_SEED => Some("42".into()),
            ENV_OUTPUT_DIR => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.cache_dir(), PathBuf::from("/tmp/x/cache"));
        assert!(c
            .apply_env(|k| (k == ENV_SEED).then(|| "nope".into()))
            .is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = PipelineConfig::mock();
        c.reasoning.clear();
        assert!(c.validate().is_err());
        c.use_rule_engine = true;
        c.validate().unwrap();
        c.scenes.clear();
        assert!(c.validate().is_err());

        let mut c = PipelineConfig::mock();
        c.dataset = Dataset::Count(0);
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::mock();
        c.image.height = c.image.width;
        assert!(c.validate().is_err());
    }
}

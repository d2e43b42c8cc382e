//! End-to-end orchestration: every (backend × V-A pair × scene) cell runs
//! the chain, flattens the prompt, renders a panorama and writes a package.
//!
//! Cells are independent: a failure (or panic) in one is recorded in the
//! report and never affects the others. Completed cells are cached by a
//! content hash of everything that determines their output.

mod cache;
mod config;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{Cache, CacheEntry};
pub use config::{
    Dataset, ImageBackendKind, ImageSettings, PipelineConfig, ReasonerConfig, ENV_CACHE_DIR,
    ENV_OUTPUT_DIR, ENV_SEED,
};

use crate::affect::{polar_of, VaPair};
use crate::backend::transport::{HttpTransport, InflightLimit, UreqTransport};
use crate::backend::{make_scripted, BackendError, Reasoner, RemoteReasoner, ScriptedFixture};
use crate::hashing::{digest_json, digest_parts};
use crate::image::{
    GenerationRequest, ImageBackend, ImageError, RemoteImageBackend, StubImageBackend,
};
use crate::metaphor::{
    run_cot, CoTTrace, CotEngine, CotPolicy, RuleEngineBackend, SceneContext, StepId,
};
use crate::package::{package, validate_package};
use crate::prompt::flatten;

pub const REPORT_FILE: &str = "report.json";
pub const RUNS_FILE: &str = "runs.jsonl";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// One unit of batch work.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub backend_index: usize,
    pub backend_id: String,
    pub va: VaPair,
    pub angle_deg: f64,
    pub scene: SceneContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Cached,
    Failed,
}

/// Where a failed cell stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Chain,
    Prompt,
    Image,
    Package,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub backend_id: String,
    pub va: VaPair,
    pub angle_deg: f64,
    pub scene_id: String,
    pub status: CellStatus,
    pub cache_key: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<StepId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub ok: usize,
    pub cached: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_ms: u64,
    pub seed: u64,
    pub counts: Counts,
    pub cells: Vec<CellReport>,
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub recorded_at: String,
    pub cell: CellReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CoTTrace>,
}

/// Reads every record of a `runs.jsonl` file.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Seed for one cell, derived from the global seed and the cell identity.
pub fn cell_seed(global: u64, backend_id: &str, va: &VaPair, scene_id: &str) -> u64 {
    let digest = digest_parts([
        &global.to_le_bytes()[..],
        backend_id.as_bytes(),
        &va.valence().to_bits().to_le_bytes(),
        &va.arousal().to_bits().to_le_bytes(),
        scene_id.as_bytes(),
    ]);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Everything that determines a cell's output.
#[derive(Debug, Serialize)]
pub struct CacheKeyParts<'a> {
    pub backend_fingerprint: String,
    pub backend_id: &'a str,
    pub model: &'a str,
    pub temperature: f64,
    pub valence: f64,
    pub arousal: f64,
    pub scene: &'a SceneContext,
    pub template_version: &'a str,
    pub chain_mode: crate::metaphor::ChainMode,
    pub max_repairs: u32,
    pub geometry: &'a crate::affect::CircumplexGeometry,
    pub max_prompt_chars: usize,
    pub image_backend: &'a str,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl CacheKeyParts<'_> {
    pub fn key(&self) -> String {
        digest_json(self)
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    reasoners: Vec<Arc<dyn Reasoner>>,
    image: Arc<dyn ImageBackend>,
    engine: CotEngine,
}

fn load_fixture(name: &str) -> Result<ScriptedFixture, BackendError> {
    match name {
        "scripted-a" | "scripted-b" => ScriptedFixture::builtin(name),
        path => ScriptedFixture::load(Path::new(path)),
    }
}

impl Pipeline {
    /// Builds backends from the configuration. Remote clients share
    /// `transport`, each side behind its own in-flight cap.
    pub fn new(
        config: PipelineConfig,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let reasoning_transport: Arc<dyn HttpTransport> = Arc::new(InflightLimit::new(
            transport.clone(),
            config.reasoning_inflight,
        ));
        let mut reasoners: Vec<Arc<dyn Reasoner>> = Vec::new();
        for r in &config.reasoning {
            reasoners.push(match r {
                ReasonerConfig::Remote(c) => {
                    Arc::new(RemoteReasoner::new(c.clone(), reasoning_transport.clone())?)
                }
                ReasonerConfig::Scripted {
                    backend_id,
                    fixture,
                    temperature,
                } => Arc::new(
                    make_scripted(load_fixture(fixture)?)
                        .with_id(backend_id.clone())
                        .with_temperature(*temperature),
                ),
            });
        }
        if config.use_rule_engine {
            reasoners.push(Arc::new(RuleEngineBackend::default()));
        }
        let image: Arc<dyn ImageBackend> = match &config.image.backend {
            ImageBackendKind::Stub => Arc::new(StubImageBackend),
            ImageBackendKind::Remote(c) => Arc::new(RemoteImageBackend::new(
                c.clone(),
                Arc::new(InflightLimit::new(transport, config.image_inflight)),
            )?),
        };
        Self::with_backends(config, reasoners, image)
    }

    /// Uses the given backends instead of those named in the configuration.
    pub fn with_backends(
        config: PipelineConfig,
        reasoners: Vec<Arc<dyn Reasoner>>,
        image: Arc<dyn ImageBackend>,
    ) -> Result<Self, PipelineError> {
        if reasoners.is_empty() {
            return Err(PipelineError::Config("no reasoning backends".into()));
        }
        let check = PipelineConfig {
            reasoning: Vec::new(),
            use_rule_engine: true,
            ..config.clone()
        };
        check.validate()?;
        let engine = CotEngine {
            geometry: config.geometry,
            ..CotEngine::default()
        };
        Ok(Self {
            config,
            reasoners,
            image,
            engine,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn engine(&self) -> &CotEngine {
        &self.engine
    }

    pub fn reasoners(&self) -> &[Arc<dyn Reasoner>] {
        &self.reasoners
    }

    pub fn backend_index(&self, backend_id: &str) -> Option<usize> {
        self.reasoners
            .iter()
            .position(|r| r.backend_id() == backend_id)
    }

    pub fn cell(&self, backend_index: usize, va: VaPair, scene: SceneContext) -> Cell {
        Cell {
            backend_index,
            backend_id: self.reasoners[backend_index].backend_id().to_string(),
            angle_deg: polar_of(&va, &self.config.geometry).angle_deg,
            va,
            scene,
        }
    }

    /// All cells, ordered by (backend, angle, scene).
    pub fn cells(&self) -> Result<Vec<Cell>, PipelineError> {
        let pairs = self.config.dataset.pairs(&self.config.geometry)?;
        let mut cells = Vec::new();
        for b in 0..self.reasoners.len() {
            for va in &pairs {
                for scene in &self.config.scenes {
                    cells.push(self.cell(b, *va, scene.clone()));
                }
            }
        }
        cells.sort_by(|x, y| {
            x.backend_id
                .cmp(&y.backend_id)
                .then(x.angle_deg.total_cmp(&y.angle_deg))
                .then(x.scene.scene_id.cmp(&y.scene.scene_id))
        });
        Ok(cells)
    }

    pub fn cell_seed(&self, cell: &Cell) -> u64 {
        cell_seed(
            self.config.seed,
            &cell.backend_id,
            &cell.va,
            &cell.scene.scene_id,
        )
    }

    pub fn cache_key(&self, cell: &Cell) -> String {
        let r = &self.reasoners[cell.backend_index];
        CacheKeyParts {
            backend_fingerprint: r.fingerprint(),
            backend_id: r.backend_id(),
            model: r.model_name(),
            temperature: r.temperature(),
            valence: cell.va.valence(),
            arousal: cell.va.arousal(),
            scene: &cell.scene,
            template_version: &self.engine.templates.version,
            chain_mode: self.config.chain_mode,
            max_repairs: self.config.max_repairs,
            geometry: &self.config.geometry,
            max_prompt_chars: self.config.max_prompt_chars,
            image_backend: self.image.backend_id(),
            width: self.config.image.width,
            height: self.config.image.height,
            seed: self.cell_seed(cell),
        }
        .key()
    }

    fn policy(&self) -> CotPolicy {
        CotPolicy {
            max_repairs: self.config.max_repairs,
            chain_mode: self.config.chain_mode,
        }
    }

    fn execute(&self, cell: &Cell, cache: &Cache) -> (CellReport, Option<CoTTrace>) {
        let seed = self.cell_seed(cell);
        let key = self.cache_key(cell);
        let mut report = CellReport {
            backend_id: cell.backend_id.clone(),
            va: cell.va,
            angle_deg: cell.angle_deg,
            scene_id: cell.scene.scene_id.clone(),
            status: CellStatus::Failed,
            cache_key: key.clone(),
            seed,
            package_id: None,
            package_dir: None,
            trace_id: None,
            failed_stage: None,
            failed_step: None,
            error: None,
        };
        if let Some(hit) = cache.get(&key) {
            if validate_package(&hit.package_dir).is_ok() {
                report.status = CellStatus::Cached;
                report.package_id = Some(hit.package_id);
                report.package_dir = Some(hit.package_dir);
                report.trace_id = Some(hit.trace_id);
                return (report, None);
            }
        }
        let fail = |mut report: CellReport, stage: Stage, error: String| {
            report.failed_stage = Some(stage);
            report.error = Some(error);
            report
        };

        let backend = self.reasoners[cell.backend_index].as_ref();
        let trace = match run_cot(&cell.va, &cell.scene, backend, &self.engine, &self.policy()) {
            Ok(t) => t,
            Err(e) => {
                report.failed_step = e.step();
                report.trace_id = Some(e.trace.trace_id.clone());
                let message = e.to_string();
                return (fail(report, Stage::Chain, message), Some(*e.trace));
            }
        };
        report.trace_id = Some(trace.trace_id.clone());
        let prompt = trace
            .prompt
            .as_ref()
            .expect("successful trace has a prompt");
        let text = match flatten(prompt, self.config.max_prompt_chars) {
            Ok(t) => t,
            Err(e) => return (fail(report, Stage::Prompt, e.to_string()), Some(trace)),
        };
        let request = GenerationRequest {
            width: self.config.image.width,
            height: self.config.image.height,
            ..GenerationRequest::panorama(text, seed)
        };
        let image = match self.image.generate(&request) {
            Ok(i) => i,
            Err(e) => return (fail(report, Stage::Image, e.to_string()), Some(trace)),
        };
        let pkg = match package(&image, &trace, &cell.scene, &self.config.output_dir) {
            Ok(p) => p,
            Err(e) => return (fail(report, Stage::Package, e.to_string()), Some(trace)),
        };
        let entry = CacheEntry {
            key,
            package_id: pkg.package_id.clone(),
            package_dir: pkg.dir.clone(),
            trace_id: trace.trace_id.clone(),
        };
        if let Err(e) = cache.put(&entry) {
            log::warn!("could not write cache entry: {e}");
        }
        report.status = CellStatus::Ok;
        report.package_id = Some(pkg.package_id);
        report.package_dir = Some(pkg.dir);
        (report, Some(trace))
    }

    /// Runs `cells` on up to `concurrency` worker threads and appends one
    /// record per cell to `runs.jsonl`. Reports keep the order of `cells`.
    pub fn run_cells(&self, cells: &[Cell]) -> Result<RunReport, PipelineError> {
        let started = Instant::now();
        let started_at = Utc::now().to_rfc3339();
        let out = &self.config.output_dir;
        fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
        let cache = Cache::open(&self.config.cache_dir())?;
        let runs_path = out.join(RUNS_FILE);
        let runs: Mutex<File> = Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&runs_path)
                .map_err(|e| PipelineError::io(&runs_path, e))?,
        );

        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<CellReport>>> = Mutex::new(vec![None; cells.len()]);
        let workers = self.config.concurrency.min(cells.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = cells.get(i) else { break };
                    let (report, trace) =
                        catch_unwind(AssertUnwindSafe(|| self.execute(cell, &cache)))
                            .unwrap_or_else(|panic| {
                                let message = panic
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_else(|| "worker panicked".into());
                                (self.panicked(cell, message), None)
                            });
                    log::info!(
                        "{} {} ({:.3}, {:.3}) -> {:?}",
                        report.backend_id,
                        report.scene_id,
                        report.va.valence(),
                        report.va.arousal(),
                        report.status
                    );
                    let record = RunRecord {
                        recorded_at: Utc::now().to_rfc3339(),
                        cell: report.clone(),
                        trace,
                    };
                    let mut line = serde_json::to_string(&record).expect("record serializes");
                    line.push('\n');
                    {
                        let mut f = runs.lock().unwrap_or_else(|p| p.into_inner());
                        if let Err(e) = f.write_all(line.as_bytes()) {
                            log::error!("{}: {e}", runs_path.display());
                        }
                    }
                    results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(report);
                });
            }
        });

        let cells: Vec<CellReport> = results
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .map(|r| r.expect("every cell is processed"))
            .collect();
        let mut counts = Counts {
            total: cells.len(),
            ..Counts::default()
        };
        for c in &cells {
            match c.status {
                CellStatus::Ok => counts.ok += 1,
                CellStatus::Cached => counts.cached += 1,
                CellStatus::Failed => counts.failed += 1,
            }
        }
        Ok(RunReport {
            started_at,
            finished_at: Utc::now().to_rfc3339(),
            wall_time_ms: started.elapsed().as_millis() as u64,
            seed: self.config.seed,
            counts,
            cells,
        })
    }

    fn panicked(&self, cell: &Cell, message: String) -> CellReport {
        CellReport {
            backend_id: cell.backend_id.clone(),
            va: cell.va,
            angle_deg: cell.angle_deg,
            scene_id: cell.scene.scene_id.clone(),
            status: CellStatus::Failed,
            cache_key: self.cache_key(cell),
            seed: self.cell_seed(cell),
            package_id: None,
            package_dir: None,
            trace_id: None,
            failed_stage: Some(Stage::Internal),
            failed_step: None,
            error: Some(message),
        }
    }

    /// Runs every cell and writes `report.json`.
    pub fn run_batch(&self) -> Result<RunReport, PipelineError> {
        let cells = self.cells()?;
        let report = self.run_cells(&cells)?;
        let path = self.config.output_dir.join(REPORT_FILE);
        let tmp = self.config.output_dir.join(format!(".{REPORT_FILE}.tmp"));
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(&report).expect("report serializes"),
        )
        .map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))?;
        Ok(report)
    }
}

/// Runs a batch against live HTTP backends.
pub fn run_batch(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    Pipeline::new(config.clone(), Arc::new(UreqTransport::new()))?.run_batch()
}

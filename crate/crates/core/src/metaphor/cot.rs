//! The four-step chain: inner state, metaphor, event adaptation, prompt.
//!
//! Every attempt (request and raw response) is kept in the [`CoTTrace`], so a
//! failed run still shows exactly what the backend said.

use std::fmt;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::templates::{repair_text, step_text};
use super::{
    check_nonintrusion, validate_step_output, AdaptedScene, MetaphorError, MetaphorPlan,
    SceneContext, StateClaim, StepContext, StepId, StepOutput, Taxonomy, Templates, Violation,
    ViolationReport,
};
use crate::affect::{infer_state, CircumplexGeometry, InferredState, OctantTable, VaPair};
use crate::backend::{BackendError, ChatMessage, ChatRequest, Reasoner, RouteTag};
use crate::hashing::digest_json;
use crate::prompt::LayeredPrompt;

/// How the four steps share context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainMode {
    /// One conversation; each step sees the earlier turns.
    #[default]
    Conversational,
    /// Each step is a standalone request carrying only the parsed prior outputs.
    Isolated,
}

impl std::str::FromStr for ChainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversational" => Ok(ChainMode::Conversational),
            "isolated" => Ok(ChainMode::Isolated),
            other => Err(format!("unknown chain mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotPolicy {
    /// Repair prompts sent per step before giving up.
    pub max_repairs: u32,
    pub chain_mode: ChainMode,
}

impl Default for CotPolicy {
    fn default() -> Self {
        Self {
            max_repairs: 2,
            chain_mode: ChainMode::Conversational,
        }
    }
}

/// Static resources for running chains.
#[derive(Debug, Clone, PartialEq)]
pub struct CotEngine {
    pub templates: Templates,
    pub taxonomy: Taxonomy,
    pub geometry: CircumplexGeometry,
    pub octants: OctantTable,
}

impl Default for CotEngine {
    fn default() -> Self {
        Self {
            templates: Templates::builtin(),
            taxonomy: Taxonomy::builtin(),
            geometry: CircumplexGeometry::default(),
            octants: OctantTable::default(),
        }
    }
}

/// One request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub request: ChatRequest,
    /// Raw response text; absent when the backend call itself failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: StepId,
    pub attempts: Vec<Attempt>,
    pub repair_count: u32,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<StepOutput>,
    pub started_at: String,
    pub finished_at: String,
}

impl StepRecord {
    /// Raw text of the last attempt.
    pub fn last_raw(&self) -> Option<&str> {
        self.attempts.last().and_then(|a| a.raw.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceStatus {
    Ok,
    Failed,
}

/// Full record of one chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTTrace {
    /// Content hash over everything except timestamps.
    pub trace_id: String,
    pub template_version: String,
    pub va: VaPair,
    pub scene: SceneContext,
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub chain_mode: ChainMode,
    /// State computed from the V-A pair; embedded in Step 1 as an anchor.
    pub local_state: InferredState,
    /// State as read by the backend in Step 1; drives later steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_state: Option<StateClaim>,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<LayeredPrompt>,
    pub status: TraceStatus,
    pub started_at: String,
    pub finished_at: String,
}

impl CoTTrace {
    fn parsed(&self, step: StepId) -> Option<&StepOutput> {
        self.steps
            .iter()
            .find(|s| s.step == step)
            .and_then(|s| s.parsed.as_ref())
    }

    pub fn plan(&self) -> Option<&MetaphorPlan> {
        match self.parsed(StepId::Metaphor) {
            Some(StepOutput::Plan(p)) => Some(p),
            _ => None,
        }
    }

    pub fn adapted(&self) -> Option<&AdaptedScene> {
        match self.parsed(StepId::Adaptation) {
            Some(StepOutput::Scene(s)) => Some(s),
            _ => None,
        }
    }

    /// Whether the backend's Step-1 family differs from the local one.
    pub fn family_diverges(&self) -> Option<bool> {
        self.claimed_state
            .as_ref()
            .map(|c| c.family != self.local_state.family)
    }

    /// Recomputes the content hash (timestamps excluded).
    pub fn content_id(&self) -> String {
        let mut copy = self.clone();
        copy.trace_id.clear();
        copy.started_at.clear();
        copy.finished_at.clear();
        for s in &mut copy.steps {
            s.started_at.clear();
            s.finished_at.clear();
        }
        digest_json(&copy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CotErrorKind {
    /// The step's output stayed invalid after all repairs.
    Validation {
        step: StepId,
        report: ViolationReport,
    },
    Backend {
        step: StepId,
        error: BackendError,
    },
    Invalid(MetaphorError),
}

/// A failed chain, carrying the partial trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CotError {
    pub kind: CotErrorKind,
    pub trace: Box<CoTTrace>,
}

impl CotError {
    pub fn step(&self) -> Option<StepId> {
        match &self.kind {
            CotErrorKind::Validation { step, .. } | CotErrorKind::Backend { step, .. } => {
                Some(*step)
            }
            CotErrorKind::Invalid(_) => None,
        }
    }
}

impl fmt::Display for CotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CotErrorKind::Validation { step, report } => {
                write!(f, "step {step} output invalid after repairs: {report}")
            }
            CotErrorKind::Backend { step, error } => write!(f, "step {step}: {error}"),
            CotErrorKind::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CotError {}

fn now() -> String {
    Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Extra semantic checks beyond the step schema.
fn semantic_violations(output: &StepOutput, scene: &SceneContext) -> Vec<Violation> {
    match output {
        StepOutput::Plan(plan) => plan.violations(),
        StepOutput::Scene(adapted) => check_nonintrusion(adapted, scene).into_iter().collect(),
        _ => Vec::new(),
    }
}

fn validate(step: StepId, raw: &str, scene: &SceneContext) -> Result<StepOutput, Vec<Violation>> {
    let output = validate_step_output(step, raw).map_err(|r| r.0)?;
    let extra = semantic_violations(&output, scene);
    if extra.is_empty() {
        Ok(output)
    } else {
        Err(extra)
    }
}

/// Runs the four steps against `backend`.
///
/// Step 1 embeds the locally inferred state; Steps 2-4 follow the
/// backend's own Step-1 reading. Invalid outputs get up to
/// `policy.max_repairs` repair prompts quoting the violations.
pub fn run_cot(
    va: &VaPair,
    scene: &SceneContext,
    backend: &dyn Reasoner,
    engine: &CotEngine,
    policy: &CotPolicy,
) -> Result<CoTTrace, CotError> {
    let local = infer_state(va, &engine.geometry, &engine.octants);
    let bucket = local.rim_octant(&engine.octants);
    let mut trace = CoTTrace {
        trace_id: String::new(),
        template_version: engine.templates.version.clone(),
        va: *va,
        scene: scene.clone(),
        backend_id: backend.backend_id().to_string(),
        model_name: backend.model_name().to_string(),
        temperature: backend.temperature(),
        chain_mode: policy.chain_mode,
        local_state: local.clone(),
        claimed_state: None,
        steps: Vec::with_capacity(4),
        prompt: None,
        status: TraceStatus::Failed,
        started_at: now(),
        finished_at: String::new(),
    };
    let fail = |mut trace: CoTTrace, kind: CotErrorKind| {
        trace.finished_at = now();
        trace.trace_id = trace.content_id();
        Err(CotError {
            kind,
            trace: Box::new(trace),
        })
    };
    if let Err(e) = scene.validate() {
        return fail(trace, CotErrorKind::Invalid(e));
    }

    let mut ctx = StepContext::new(
        *va,
        local.clone(),
        scene.clone(),
        backend.temperature(),
        backend.max_tokens(),
    );
    let mut history: Vec<ChatMessage> = Vec::new();

    for step in StepId::ALL {
        let text = match step_text(step, &ctx, &engine.templates, &engine.taxonomy) {
            Ok(t) => t,
            Err(e) => return fail(trace, CotErrorKind::Invalid(e)),
        };
        let (family, intensity) = match &ctx.claim {
            Some(c) if step != StepId::InnerState => (c.family, c.emotional_intensity),
            _ => (local.family, local.intensity_label),
        };
        let route = RouteTag {
            step,
            octant: bucket,
            family,
            intensity,
            scene: scene.clone(),
        };
        let mut messages = match policy.chain_mode {
            ChainMode::Conversational => history.clone(),
            ChainMode::Isolated => Vec::new(),
        };
        messages.push(ChatMessage::user(text.clone()));

        let mut record = StepRecord {
            step,
            attempts: Vec::new(),
            repair_count: 0,
            status: StepStatus::Failed,
            parsed: None,
            started_at: now(),
            finished_at: String::new(),
        };
        let accepted = loop {
            let request = match ChatRequest::new(
                engine.templates.system.clone(),
                messages.clone(),
                ctx.temperature,
                ctx.max_tokens,
            ) {
                Ok(r) => r.with_route(route.clone()),
                Err(error) => {
                    record.finished_at = now();
                    trace.steps.push(record);
                    return fail(trace, CotErrorKind::Backend { step, error });
                }
            };
            let raw = match backend.complete(&request) {
                Ok(raw) => raw,
                Err(error) => {
                    record.attempts.push(Attempt {
                        request,
                        raw: None,
                        violations: Vec::new(),
                        backend_error: Some(error.to_string()),
                    });
                    record.finished_at = now();
                    trace.steps.push(record);
                    return fail(trace, CotErrorKind::Backend { step, error });
                }
            };
            match validate(step, &raw, scene) {
                Ok(output) => {
                    record.attempts.push(Attempt {
                        request,
                        raw: Some(raw.clone()),
                        violations: Vec::new(),
                        backend_error: None,
                    });
                    break (output, raw);
                }
                Err(violations) => {
                    let report = ViolationReport(violations.clone());
                    record.attempts.push(Attempt {
                        request,
                        raw: Some(raw.clone()),
                        violations,
                        backend_error: None,
                    });
                    if record.repair_count >= policy.max_repairs {
                        record.finished_at = now();
                        trace.steps.push(record);
                        return fail(trace, CotErrorKind::Validation { step, report });
                    }
                    log::debug!("step {step}: repairing ({report})");
                    record.repair_count += 1;
                    messages.push(ChatMessage::assistant(raw));
                    messages.push(ChatMessage::user(repair_text(
                        &engine.templates,
                        step,
                        &report.to_string(),
                    )));
                }
            }
        };

        let (output, raw) = accepted;
        match &output {
            StepOutput::State(claim) => {
                trace.claimed_state = Some(claim.clone());
                ctx.claim = Some(claim.clone());
            }
            StepOutput::Plan(plan) => ctx.plan = Some(plan.clone()),
            StepOutput::Scene(adapted) => ctx.adapted = Some(adapted.clone()),
            StepOutput::Prompt(prompt) => trace.prompt = Some(prompt.clone()),
        }
        history.push(ChatMessage::user(text));
        history.push(ChatMessage::assistant(raw));
        record.status = StepStatus::Ok;
        record.parsed = Some(output);
        record.finished_at = now();
        trace.steps.push(record);
    }

    trace.status = TraceStatus::Ok;
    trace.finished_at = now();
    trace.trace_id = trace.content_id();
    Ok(trace)
}

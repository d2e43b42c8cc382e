//! Versioned prompt templates for the four steps.
//!
//! Templates are data (`data/templates.json`); `{{name}}` placeholders are
//! substituted from the [`StepContext`]. Rendering is deterministic, so
//! identical inputs produce byte-identical requests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{
    AdaptedScene, MetaphorError, MetaphorPlan, SceneContext, StateClaim, StepId, Taxonomy,
};
use crate::affect::{InferredState, VaPair};
use crate::backend::{ChatMessage, ChatRequest};

/// Version of the shipped templates; part of every cache key.
pub const TEMPLATE_VERSION: &str = "cot-v1";

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Templates {
    pub version: String,
    pub system: String,
    steps: BTreeMap<String, String>,
    pub repair: String,
}

const PLACEHOLDERS: &[&str] = &[
    "valence",
    "arousal",
    "local_state",
    "state_claim",
    "scene_id",
    "scene_description",
    "primary_activity",
    "style_notes",
    "taxonomy",
    "plan",
    "adapted_scene",
    "step",
    "violations",
];

impl Templates {
    pub fn from_json(text: &str) -> Result<Self, MetaphorError> {
        let t: Templates =
            serde_json::from_str(text).map_err(|e| MetaphorError::Templates(e.to_string()))?;
        for step in StepId::ALL {
            if !t.steps.contains_key(&step.number().to_string()) {
                return Err(MetaphorError::Templates(format!(
                    "no template for step {step}"
                )));
            }
        }
        for (name, body) in t
            .steps
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain([("system", &t.system), ("repair", &t.repair)])
        {
            if let Some(unknown) = placeholders_in(body).find(|p| !PLACEHOLDERS.contains(p)) {
                return Err(MetaphorError::Templates(format!(
                    "template {name} uses unknown placeholder {{{{{unknown}}}}}"
                )));
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, MetaphorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetaphorError::Templates(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/templates.json"))
            .expect("shipped templates are valid")
    }

    pub fn step(&self, step: StepId) -> &str {
        &self.steps[&step.number().to_string()]
    }
}

fn placeholders_in(body: &str) -> impl Iterator<Item = &str> {
    body.split("{{")
        .skip(1)
        .filter_map(|chunk| chunk.split_once("}}").map(|(name, _)| name.trim()))
}

fn render(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.split_once("}}") {
            Some((name, tail)) => {
                match values.get(name.trim()) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = tail;
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Everything known to the chain before a step runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    pub va: VaPair,
    pub local_state: InferredState,
    pub scene: SceneContext,
    pub claim: Option<StateClaim>,
    pub plan: Option<MetaphorPlan>,
    pub adapted: Option<AdaptedScene>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl StepContext {
    pub fn new(
        va: VaPair,
        local_state: InferredState,
        scene: SceneContext,
        temperature: f64,
        max_tokens: u32,
    ) -> Self {
        Self {
            va,
            local_state,
            scene,
            claim: None,
            plan: None,
            adapted: None,
            temperature,
            max_tokens,
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn describe_state(s: &InferredState) -> String {
    format!(
        "- angle: {:.1} degrees\n- extremity (distance from center, 0..1): {:.3}\n- valence band: {}\n- arousal band: {}\n- nearest circumplex label: {}\n- quadrant family: {}",
        s.angle_deg, s.extremity, s.valence_band, s.arousal_band, s.octant_label, s.family
    )
}

fn describe_taxonomy(t: &Taxonomy) -> String {
    t.iter()
        .map(|(ty, def)| format!("- {ty}: {def}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// User text for one step. Fails if an earlier step's output is missing.
pub(crate) fn step_text(
    step: StepId,
    ctx: &StepContext,
    templates: &Templates,
    taxonomy: &Taxonomy,
) -> Result<String, MetaphorError> {
    let missing = |m: StepId| MetaphorError::Sequencing {
        step: step.number(),
        missing: m.number(),
    };
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    values.insert("valence", ctx.va.valence().to_string());
    values.insert("arousal", ctx.va.arousal().to_string());
    values.insert("scene_id", ctx.scene.scene_id.clone());
    values.insert("scene_description", ctx.scene.description.clone());
    values.insert("primary_activity", ctx.scene.primary_activity.clone());
    values.insert(
        "style_notes",
        ctx.scene
            .style_notes
            .clone()
            .unwrap_or_else(|| "none".into()),
    );
    match step {
        StepId::InnerState => {
            values.insert("local_state", describe_state(&ctx.local_state));
        }
        StepId::Metaphor => {
            let claim = ctx
                .claim
                .as_ref()
                .ok_or_else(|| missing(StepId::InnerState))?;
            values.insert("state_claim", pretty(claim));
            values.insert("taxonomy", describe_taxonomy(taxonomy));
        }
        StepId::Adaptation => {
            ctx.claim
                .as_ref()
                .ok_or_else(|| missing(StepId::InnerState))?;
            let plan = ctx.plan.as_ref().ok_or_else(|| missing(StepId::Metaphor))?;
            values.insert("plan", pretty(plan));
        }
        StepId::Prompt => {
            ctx.claim
                .as_ref()
                .ok_or_else(|| missing(StepId::InnerState))?;
            let plan = ctx.plan.as_ref().ok_or_else(|| missing(StepId::Metaphor))?;
            let adapted = ctx
                .adapted
                .as_ref()
                .ok_or_else(|| missing(StepId::Adaptation))?;
            values.insert("plan", pretty(plan));
            values.insert("adapted_scene", pretty(adapted));
        }
    }
    Ok(render(templates.step(step), &values))
}

pub(crate) fn repair_text(templates: &Templates, step: StepId, violations: &str) -> String {
    let mut values = BTreeMap::new();
    values.insert("step", step.number().to_string());
    values.insert("violations", violations.to_string());
    render(&templates.repair, &values)
}

/// Single-turn request for `step`. The chain runner adds conversation
/// history and routing metadata.
pub fn build_step_prompt(
    step: StepId,
    ctx: &StepContext,
    templates: &Templates,
    taxonomy: &Taxonomy,
) -> Result<ChatRequest, MetaphorError> {
    let text = step_text(step, ctx, templates, taxonomy)?;
    ChatRequest::new(
        templates.system.clone(),
        vec![ChatMessage::user(text)],
        ctx.temperature,
        ctx.max_tokens,
    )
    .map_err(|e| MetaphorError::Templates(e.to_string()))
}

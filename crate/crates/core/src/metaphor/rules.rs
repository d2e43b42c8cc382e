//! Deterministic rule-based planner.
//!
//! The table (`data/rules.json`) is keyed `family|intensity|scene`; a `*`
//! scene entry covers custom scenes. It encodes the observed regularities:
//! upward motion and warm tones for lively positive states, sinking motion
//! and cool tones for subdued negative ones. The planner also acts as an
//! offline [`Reasoner`] that answers each chain step from the table.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{
    AdaptedScene, CueMapping, MetaphorError, MetaphorPlan, MetaphorType, SceneContext, StateClaim,
    StepId, TypeChoice, VisualCue,
};
use crate::affect::{Band, Family, InferredState};
use crate::backend::{BackendError, ChatRequest, Reasoner};
use crate::prompt::{assemble, LayeredPrompt, PromptSections};

/// Scene id of the entries used for scenes without their own rules.
pub const WILDCARD_SCENE: &str = "*";

/// Built-in scene ids that must each have a complete set of rules.
const BUILTIN_SCENES: [&str; 3] = ["gallery", "sports", "concert"];

/// One plan template. `{{scene_description}}` in text fields is replaced by
/// the scene's description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub emotional_range: String,
    /// Color temperature the entry encodes: `warm`, `cool` or `neutral`.
    pub tone: String,
    pub metaphor_types: Vec<TypeChoice>,
    pub visual_cues: Vec<VisualCue>,
    pub mapping: Vec<CueMapping>,
    pub overall_description: String,
    pub emotional_atmosphere: String,
    pub details: Vec<String>,
    pub main_scene: String,
    pub metaphorical_elements: Vec<String>,
    #[serde(default)]
    pub detailed_modifiers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub version: String,
    entries: BTreeMap<String, RuleEntry>,
}

fn rule_key(family: Family, intensity: Band, scene_id: &str) -> String {
    format!("{family}|{intensity}|{scene_id}")
}

impl RuleTable {
    /// Parses and checks the table: every family × intensity must be covered
    /// for each built-in scene and the wildcard, every plan must be valid,
    /// contain an entity/substance cue and never use structural metaphors.
    pub fn from_json(text: &str) -> Result<Self, MetaphorError> {
        let table: RuleTable =
            serde_json::from_str(text).map_err(|e| MetaphorError::RuleTable(e.to_string()))?;
        for key in table.entries.keys() {
            let mut parts = key.split('|');
            let (Some(f), Some(i), Some(s), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(MetaphorError::RuleTable(format!("malformed key {key:?}")));
            };
            f.parse::<Family>()
                .map_err(|_| MetaphorError::RuleTable(format!("{key}: unknown family")))?;
            i.parse::<Band>()
                .map_err(|_| MetaphorError::RuleTable(format!("{key}: unknown intensity")))?;
            if s.is_empty() {
                return Err(MetaphorError::RuleTable(format!("{key}: empty scene")));
            }
        }
        for scene in BUILTIN_SCENES.iter().chain([&WILDCARD_SCENE]) {
            for family in Family::ALL {
                for intensity in [Band::Low, Band::Medium, Band::High] {
                    let key = rule_key(family, intensity, scene);
                    if !table.entries.contains_key(&key) {
                        return Err(MetaphorError::RuleTable(format!("no rule for {key}")));
                    }
                }
            }
        }
        for (key, entry) in &table.entries {
            let plan = entry.plan();
            if let Some(v) = plan.violations().first() {
                return Err(MetaphorError::RuleTable(format!("{key}: {v}")));
            }
            if !plan
                .types()
                .any(|t| t == MetaphorType::OntologicalEntitySubstance)
            {
                return Err(MetaphorError::RuleTable(format!(
                    "{key}: no Ontological_EntitySubstance cue"
                )));
            }
            if plan.types().any(|t| t == MetaphorType::Structural) {
                return Err(MetaphorError::RuleTable(format!(
                    "{key}: structural metaphors are not emitted by rules"
                )));
            }
            assemble(&entry.sections("x"))
                .map_err(|e| MetaphorError::RuleTable(format!("{key}: {e}")))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MetaphorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetaphorError::RuleTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/rules.json")).expect("shipped rules are valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry for a scene, falling back to the wildcard rules.
    pub fn entry(&self, family: Family, intensity: Band, scene_id: &str) -> &RuleEntry {
        self.entries
            .get(&rule_key(family, intensity, scene_id))
            .or_else(|| {
                self.entries
                    .get(&rule_key(family, intensity, WILDCARD_SCENE))
            })
            .expect("rule table is total over the wildcard scene")
    }

    pub fn plan(
        &self,
        state: &InferredState,
        scene: &SceneContext,
    ) -> (MetaphorPlan, AdaptedScene) {
        let entry = self.entry(state.family, state.intensity_label, &scene.scene_id);
        (entry.plan(), entry.adapted(scene))
    }

    pub fn prompt(&self, state: &InferredState, scene: &SceneContext) -> LayeredPrompt {
        let entry = self.entry(state.family, state.intensity_label, &scene.scene_id);
        assemble(&entry.sections(&scene.description)).expect("rule prompts are checked at load")
    }
}

fn fill(text: &str, scene_description: &str) -> String {
    text.replace("{{scene_description}}", scene_description)
}

impl RuleEntry {
    pub fn plan(&self) -> MetaphorPlan {
        MetaphorPlan {
            metaphor_types: self.metaphor_types.clone(),
            visual_cues: self.visual_cues.clone(),
            mapping: self.mapping.clone(),
        }
    }

    pub fn claim(&self, family: Family, intensity: Band) -> StateClaim {
        StateClaim {
            emotional_range: self.emotional_range.clone(),
            emotional_intensity: intensity,
            family,
        }
    }

    pub fn adapted(&self, scene: &SceneContext) -> AdaptedScene {
        let cues = self
            .visual_cues
            .iter()
            .map(|c| c.description.as_str())
            .collect::<Vec<_>>()
            .join(" and ");
        AdaptedScene {
            overall_description: fill(&self.overall_description, &scene.description),
            emotional_atmosphere: self.emotional_atmosphere.clone(),
            details: self.details.iter().map(|d| fill(d, &scene.description)).collect(),
            nonintrusion_statement: format!(
                "The {cues} stay at the edges of the scene and never cross the focal area, so they do not affect the main activity: {}.",
                scene.primary_activity
            ),
        }
    }

    fn sections(&self, scene_description: &str) -> PromptSections {
        PromptSections {
            main_scene: fill(&self.main_scene, scene_description),
            metaphorical_elements: self
                .metaphorical_elements
                .iter()
                .map(|e| fill(e, scene_description))
                .collect(),
            detailed_modifiers: self
                .detailed_modifiers
                .iter()
                .map(|m| fill(m, scene_description))
                .collect(),
        }
    }
}

fn builtin_table() -> &'static RuleTable {
    static TABLE: OnceLock<RuleTable> = OnceLock::new();
    TABLE.get_or_init(RuleTable::builtin)
}

/// Plan and adapted scene from the shipped rule table.
pub fn rule_based_plan(
    state: &InferredState,
    scene: &SceneContext,
) -> (MetaphorPlan, AdaptedScene) {
    builtin_table().plan(state, scene)
}

/// Layered prompt from the shipped rule table.
pub fn rule_based_prompt(state: &InferredState, scene: &SceneContext) -> LayeredPrompt {
    builtin_table().prompt(state, scene)
}

/// Offline backend that answers every chain step from a [`RuleTable`],
/// keyed by the request's routing tag.
#[derive(Debug, Clone)]
pub struct RuleEngineBackend {
    backend_id: String,
    table: RuleTable,
}

impl RuleEngineBackend {
    pub fn new(table: RuleTable) -> Self {
        Self {
            backend_id: "rule-engine".into(),
            table,
        }
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }
}

impl Default for RuleEngineBackend {
    fn default() -> Self {
        Self::new(builtin_table().clone())
    }
}

impl Reasoner for RuleEngineBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn model_name(&self) -> &str {
        "rule-table"
    }

    fn temperature(&self) -> f64 {
        0.0
    }

    fn fingerprint(&self) -> String {
        format!(
            "{}|{}",
            self.backend_id,
            crate::hashing::digest_json(&self.table)
        )
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let route = request.route.as_ref().ok_or_else(|| {
            BackendError::InvalidRequest("rule engine needs a routing tag".into())
        })?;
        let entry = self
            .table
            .entry(route.family, route.intensity, &route.scene.scene_id);
        let body = match route.step {
            StepId::InnerState => to_json(&entry.claim(route.family, route.intensity)),
            StepId::Metaphor => to_json(&entry.plan()),
            StepId::Adaptation => to_json(&entry.adapted(&route.scene)),
            StepId::Prompt => to_json(&entry.sections(&route.scene.description)),
        };
        Ok(format!(
            "Rule {}|{}|{} (table {}).\n\n```json\n{body}\n```",
            route.family, route.intensity, route.scene.scene_id, self.table.version
        ))
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

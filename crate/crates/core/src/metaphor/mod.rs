//! Metaphor building: the four-step chain-of-thought, its step schemas and
//! validators, and a rule-based planner that doubles as an offline backend.

mod cot;
mod rules;
mod templates;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{Band, Family};

pub use cot::{
    run_cot, Attempt, ChainMode, CoTTrace, CotEngine, CotError, CotErrorKind, CotPolicy,
    StepRecord, StepStatus, TraceStatus,
};
pub use rules::{rule_based_plan, rule_based_prompt, RuleEngineBackend, RuleEntry, RuleTable};
pub use templates::{build_step_prompt, StepContext, Templates, TEMPLATE_VERSION};
pub use validate::{
    check_nonintrusion, extract_block, validate_step_output, StepOutput, Violation, ViolationReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaphorError {
    #[error("unknown metaphor type {0:?}")]
    UnknownType(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid rule table: {0}")]
    RuleTable(String),
    #[error("invalid templates: {0}")]
    Templates(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("step {step} requires the output of step {missing}")]
    Sequencing { step: u8, missing: u8 },
}

/// The four chain-of-thought steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum StepId {
    InnerState,
    Metaphor,
    Adaptation,
    Prompt,
}

impl StepId {
    pub const ALL: [StepId; 4] = [
        StepId::InnerState,
        StepId::Metaphor,
        StepId::Adaptation,
        StepId::Prompt,
    ];

    pub fn number(self) -> u8 {
        match self {
            StepId::InnerState => 1,
            StepId::Metaphor => 2,
            StepId::Adaptation => 3,
            StepId::Prompt => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<StepId> {
        StepId::ALL.get((n as usize).wrapping_sub(1)).copied()
    }

    /// `step1` .. `step4`.
    pub fn key(self) -> String {
        format!("step{}", self.number())
    }

    pub fn from_key(s: &str) -> Option<StepId> {
        s.strip_prefix("step")?
            .parse()
            .ok()
            .and_then(StepId::from_number)
    }
}

impl From<StepId> for u8 {
    fn from(s: StepId) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for StepId {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, Self::Error> {
        StepId::from_number(n).ok_or_else(|| format!("step id must be 1..=4, got {n}"))
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Closed metaphor taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetaphorType {
    Orientational,
    #[serde(rename = "Ontological_EntitySubstance")]
    OntologicalEntitySubstance,
    #[serde(rename = "Ontological_Container")]
    OntologicalContainer,
    #[serde(rename = "Ontological_Personification")]
    OntologicalPersonification,
    #[serde(rename = "Ontological_Metonymy")]
    OntologicalMetonymy,
    Structural,
}

impl MetaphorType {
    pub const ALL: [MetaphorType; 6] = [
        MetaphorType::Orientational,
        MetaphorType::OntologicalEntitySubstance,
        MetaphorType::OntologicalContainer,
        MetaphorType::OntologicalPersonification,
        MetaphorType::OntologicalMetonymy,
        MetaphorType::Structural,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetaphorType::Orientational => "Orientational",
            MetaphorType::OntologicalEntitySubstance => "Ontological_EntitySubstance",
            MetaphorType::OntologicalContainer => "Ontological_Container",
            MetaphorType::OntologicalPersonification => "Ontological_Personification",
            MetaphorType::OntologicalMetonymy => "Ontological_Metonymy",
            MetaphorType::Structural => "Structural",
        }
    }
}

impl fmt::Display for MetaphorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaphorType {
    type Err = MetaphorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetaphorType::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| MetaphorError::UnknownType(s.to_string()))
    }
}

/// Definition text for each metaphor type.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    definitions: BTreeMap<MetaphorType, String>,
}

impl Taxonomy {
    pub fn from_json(text: &str) -> Result<Self, MetaphorError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| MetaphorError::Taxonomy(e.to_string()))?;
        let mut definitions = BTreeMap::new();
        for (name, def) in raw {
            let ty: MetaphorType = name.parse()?;
            if def.trim().is_empty() {
                return Err(MetaphorError::Taxonomy(format!("{name} has no definition")));
            }
            definitions.insert(ty, def);
        }
        if let Some(missing) = MetaphorType::ALL
            .iter()
            .find(|t| !definitions.contains_key(t))
        {
            return Err(MetaphorError::Taxonomy(format!("{missing} is not defined")));
        }
        Ok(Self { definitions })
    }

    pub fn load(path: &Path) -> Result<Self, MetaphorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetaphorError::Taxonomy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/taxonomy.json"))
            .expect("shipped taxonomy is valid")
    }

    pub fn definition(&self, ty: MetaphorType) -> &str {
        &self.definitions[&ty]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MetaphorType, &str)> {
        self.definitions.iter().map(|(t, d)| (*t, d.as_str()))
    }
}

/// Which affect dimension a cue stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Valence,
    Arousal,
    Both,
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valence" => Ok(Dimension::Valence),
            "arousal" => Ok(Dimension::Arousal),
            "both" => Ok(Dimension::Both),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisualCue {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<String>,
    pub mapped_dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeChoice {
    #[serde(rename = "type")]
    pub metaphor_type: MetaphorType,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueMapping {
    pub state_aspect: String,
    pub cue_index: usize,
}

/// Chosen metaphor types, the visual cues they produce and the
/// state-to-cue mapping.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaphorPlan {
    pub metaphor_types: Vec<TypeChoice>,
    pub visual_cues: Vec<VisualCue>,
    pub mapping: Vec<CueMapping>,
}

impl MetaphorPlan {
    /// Structural problems; empty when the plan is acceptable.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.metaphor_types.is_empty() {
            out.push(Violation::EmptyField {
                field: "metaphor_types".into(),
            });
        }
        for (i, t) in self.metaphor_types.iter().enumerate() {
            if t.rationale.trim().is_empty() {
                out.push(Violation::EmptyField {
                    field: format!("metaphor_types[{i}].rationale"),
                });
            }
        }
        if self.visual_cues.is_empty() {
            out.push(Violation::EmptyField {
                field: "visual_cues".into(),
            });
        }
        for (i, c) in self.visual_cues.iter().enumerate() {
            if c.description.trim().is_empty() {
                out.push(Violation::EmptyField {
                    field: format!("visual_cues[{i}].description"),
                });
            }
        }
        for (i, m) in self.mapping.iter().enumerate() {
            if m.cue_index >= self.visual_cues.len() {
                out.push(Violation::CueIndexOutOfRange {
                    entry: i,
                    index: m.cue_index,
                });
            }
            if m.state_aspect.trim().is_empty() {
                out.push(Violation::EmptyField {
                    field: format!("mapping[{i}].state_aspect"),
                });
            }
        }
        for i in 0..self.visual_cues.len() {
            if !self.mapping.iter().any(|m| m.cue_index == i) {
                out.push(Violation::UnmappedCue { index: i });
            }
        }
        out
    }

    pub fn types(&self) -> impl Iterator<Item = MetaphorType> + '_ {
        self.metaphor_types.iter().map(|t| t.metaphor_type)
    }
}

/// The co-present event a representation is situated in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneContext {
    pub scene_id: String,
    pub description: String,
    /// What the representation must not disrupt.
    pub primary_activity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_notes: Option<String>,
}

impl SceneContext {
    pub fn validate(&self) -> Result<(), MetaphorError> {
        if self.scene_id.trim().is_empty() {
            return Err(MetaphorError::Scene("scene_id is empty".into()));
        }
        if self.scene_id.contains(['|', '/', '\\']) || self.scene_id.contains("..") {
            return Err(MetaphorError::Scene(format!(
                "scene_id {:?} contains reserved characters",
                self.scene_id
            )));
        }
        if self.primary_activity.trim().is_empty() {
            return Err(MetaphorError::Scene(format!(
                "{}: primary_activity is empty",
                self.scene_id
            )));
        }
        Ok(())
    }

    pub fn builtin(scene_id: &str) -> Option<SceneContext> {
        builtin_scenes()
            .into_iter()
            .find(|s| s.scene_id == scene_id)
    }

    /// Reads one scene or a list of scenes from a JSON file.
    pub fn load_all(path: &Path) -> Result<Vec<SceneContext>, MetaphorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetaphorError::Scene(format!("{}: {e}", path.display())))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(SceneContext),
            Many(Vec<SceneContext>),
        }
        let scenes = match serde_json::from_str(&text)
            .map_err(|e| MetaphorError::Scene(format!("{}: {e}", path.display())))?
        {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        };
        for s in &scenes {
            s.validate()?;
        }
        Ok(scenes)
    }
}

/// Gallery, sports and concert scenes, in that order.
pub fn builtin_scenes() -> Vec<SceneContext> {
    serde_json::from_str(include_str!("../../data/scenes.json")).expect("shipped scenes are valid")
}

/// The metaphorical cues situated in the target event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdaptedScene {
    pub overall_description: String,
    pub emotional_atmosphere: String,
    pub details: Vec<String>,
    pub nonintrusion_statement: String,
}

/// The backend's own reading of the inner state in Step 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateClaim {
    pub emotional_range: String,
    pub emotional_intensity: Band,
    pub family: Family,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_ids_round_trip() {
        for s in StepId::ALL {
            assert_eq!(StepId::from_key(&s.key()), Some(s));
            assert_eq!(StepId::from_number(s.number()), Some(s));
        }
        assert_eq!(StepId::from_number(0), None);
        assert_eq!(StepId::from_number(5), None);
        assert_eq!(serde_json::to_string(&StepId::Adaptation).unwrap(), "3");
    }

    #[test]
    fn metaphor_type_is_closed() {
        for t in MetaphorType::ALL {
            assert_eq!(t.as_str().parse::<MetaphorType>().unwrap(), t);
            assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
        }
        assert!("Synesthetic".parse::<MetaphorType>().is_err());
        assert!(serde_json::from_str::<MetaphorType>("\"Synesthetic\"").is_err());
    }

    #[test]
    fn builtin_taxonomy_defines_all_six() {
        let t = Taxonomy::builtin();
        assert_eq!(t.iter().count(), 6);
        assert!(t
            .definition(MetaphorType::Orientational)
            .contains("up-down"));
    }

    #[test]
    fn taxonomy_rejects_unknown_and_missing() {
        assert!(Taxonomy::from_json(r#"{"Synesthetic": "x"}"#).is_err());
        assert!(Taxonomy::from_json(r#"{"Orientational": "x"}"#).is_err());
    }

    #[test]
    fn builtin_scenes_match_shipped_activities() {
        let scenes = builtin_scenes();
        let ids: Vec<&str> = scenes.iter().map(|s| s.scene_id.as_str()).collect();
        assert_eq!(ids, ["gallery", "sports", "concert"]);
        assert_eq!(scenes[0].primary_activity, "viewing artworks");
        assert_eq!(
            scenes[1].primary_activity,
            "watching the table tennis match"
        );
        assert_eq!(scenes[2].primary_activity, "watching the live performance");
        for s in &scenes {
            s.validate().unwrap();
        }
    }

    #[test]
    fn scene_validation() {
        let mut s = SceneContext::builtin("gallery").unwrap();
        s.primary_activity = " ".into();
        assert!(s.validate().is_err());
        let mut s = SceneContext::builtin("gallery").unwrap();
        s.scene_id = "../etc".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn plan_violations() {
        let plan = MetaphorPlan {
            metaphor_types: vec![TypeChoice {
                metaphor_type: MetaphorType::Orientational,
                rationale: " ".into(),
            }],
            visual_cues: vec![
                VisualCue {
                    description: "rising light".into(),
                    dynamics: None,
                    mapped_dimension: Dimension::Arousal,
                },
                VisualCue {
                    description: "mist".into(),
                    dynamics: None,
                    mapped_dimension: Dimension::Valence,
                },
            ],
            mapping: vec![CueMapping {
                state_aspect: "energy".into(),
                cue_index: 0,
            }],
        };
        let v = plan.violations();
        assert!(v.contains(&Violation::UnmappedCue { index: 1 }));
        assert!(v.contains(&Violation::EmptyField {
            field: "metaphor_types[0].rationale".into()
        }));
    }
}

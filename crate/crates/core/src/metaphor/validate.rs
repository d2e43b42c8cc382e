//! Step-output extraction and schema validation.
//!
//! Every step must answer with one fenced JSON block; surrounding prose is
//! kept in the trace but ignored here. Each missing or invalid field is
//! reported as its own [`Violation`] so the repair prompt can quote them.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    AdaptedScene, CueMapping, Dimension, MetaphorPlan, MetaphorType, SceneContext, StateClaim,
    StepId, TypeChoice, VisualCue,
};
use crate::affect::{Band, Family};
use crate::prompt::{assemble, LayeredPrompt, PromptError, PromptSections};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingBlock,
    MalformedJson { message: String },
    NotAnObject,
    MissingField { field: String },
    EmptyField { field: String },
    WrongType { field: String, expected: String },
    UnknownMetaphorType { name: String },
    UnknownValue { field: String, value: String },
    UnmappedCue { index: usize },
    CueIndexOutOfRange { entry: usize, index: usize },
    MissingPrimaryActivity { activity: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingBlock => f.write_str("no fenced ```json block found"),
            Violation::MalformedJson { message } => {
                write!(f, "block is not valid JSON ({message})")
            }
            Violation::NotAnObject => f.write_str("block is not a JSON object"),
            Violation::MissingField { field } => write!(f, "missing field `{field}`"),
            Violation::EmptyField { field } => write!(f, "field `{field}` is empty"),
            Violation::WrongType { field, expected } => {
                write!(f, "field `{field}` must be {expected}")
            }
            Violation::UnknownMetaphorType { name } => write!(f, "unknown metaphor type {name:?}"),
            Violation::UnknownValue { field, value } => {
                write!(f, "field `{field}` has unknown value {value:?}")
            }
            Violation::UnmappedCue { index } => {
                write!(
                    f,
                    "visual cue {index} is not referenced by any mapping entry"
                )
            }
            Violation::CueIndexOutOfRange { entry, index } => {
                write!(f, "mapping entry {entry} references missing cue {index}")
            }
            Violation::MissingPrimaryActivity { activity } => write!(
                f,
                "nonintrusion_statement must contain the primary activity {activity:?}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport(pub Vec<Violation>);

impl ViolationReport {
    pub fn violations(&self) -> &[Violation] {
        &self.0
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ViolationReport {}

/// A validated step output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step_output", content = "value", rename_all = "snake_case")]
pub enum StepOutput {
    State(StateClaim),
    Plan(MetaphorPlan),
    Scene(AdaptedScene),
    Prompt(LayeredPrompt),
}

/// Body of the first fenced block tagged `json` (or untagged).
pub fn extract_block(raw: &str) -> Option<&str> {
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let line_end = after.find('\n')?;
        let tag = after[..line_end].trim();
        let body = &after[line_end + 1..];
        let close = body.find("```")?;
        if tag.is_empty() || tag.eq_ignore_ascii_case("json") {
            return Some(body[..close].trim());
        }
        rest = &body[close + 3..];
    }
    None
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    prefix: String,
    out: &'a mut Vec<Violation>,
}

impl<'a> Fields<'a> {
    fn name(&self, field: &str) -> String {
        if self.prefix.is_empty() {
            field.to_string()
        } else {
            format!("{}.{field}", self.prefix)
        }
    }

    /// Present string; empty allowed.
    fn string(&mut self, field: &str) -> Option<String> {
        match self.obj.get(field) {
            None | Some(Value::Null) => {
                self.out.push(Violation::MissingField {
                    field: self.name(field),
                });
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.name(field),
                    expected: "a string".into(),
                });
                None
            }
        }
    }

    fn nonempty_string(&mut self, field: &str) -> Option<String> {
        let s = self.string(field)?;
        if s.trim().is_empty() {
            self.out.push(Violation::EmptyField {
                field: self.name(field),
            });
            return None;
        }
        Some(s)
    }

    fn optional_string(&mut self, field: &str) -> Option<String> {
        match self.obj.get(field) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.name(field),
                    expected: "a string".into(),
                });
                None
            }
        }
    }

    fn array(&mut self, field: &str) -> Option<&'a Vec<Value>> {
        match self.obj.get(field) {
            None | Some(Value::Null) => {
                self.out.push(Violation::MissingField {
                    field: self.name(field),
                });
                None
            }
            Some(Value::Array(a)) => Some(a),
            Some(_) => {
                self.out.push(Violation::WrongType {
                    field: self.name(field),
                    expected: "an array".into(),
                });
                None
            }
        }
    }

    fn string_list(&mut self, field: &str) -> Option<Vec<String>> {
        let items = self.array(field)?;
        let mut list = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match item {
                Value::String(s) => list.push(s.clone()),
                _ => self.out.push(Violation::WrongType {
                    field: format!("{}[{i}]", self.name(field)),
                    expected: "a string".into(),
                }),
            }
        }
        Some(list)
    }

    fn objects(&mut self, field: &str) -> Vec<(String, &'a Map<String, Value>)> {
        let Some(items) = self.array(field) else {
            return Vec::new();
        };
        let name = self.name(field);
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match item {
                Value::Object(o) => out.push((format!("{name}[{i}]"), o)),
                _ => self.out.push(Violation::WrongType {
                    field: format!("{name}[{i}]"),
                    expected: "an object".into(),
                }),
            }
        }
        out
    }

    fn nested(&mut self, prefix: String, obj: &'a Map<String, Value>) -> Fields<'_> {
        Fields {
            obj,
            prefix,
            out: self.out,
        }
    }
}

fn parse_enum<T: std::str::FromStr>(
    value: Option<String>,
    field: &str,
    out: &mut Vec<Violation>,
) -> Option<T> {
    let value = value?;
    match value.trim().parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            out.push(Violation::UnknownValue {
                field: field.to_string(),
                value,
            });
            None
        }
    }
}

/// Extracts and validates the structured block of a step's response.
pub fn validate_step_output(step: StepId, raw: &str) -> Result<StepOutput, ViolationReport> {
    let block = extract_block(raw).ok_or_else(|| ViolationReport(vec![Violation::MissingBlock]))?;
    let value: Value = serde_json::from_str(block).map_err(|e| {
        ViolationReport(vec![Violation::MalformedJson {
            message: e.to_string(),
        }])
    })?;
    let Value::Object(obj) = value else {
        return Err(ViolationReport(vec![Violation::NotAnObject]));
    };
    let mut out = Vec::new();
    let parsed = match step {
        StepId::InnerState => parse_state(&obj, &mut out).map(StepOutput::State),
        StepId::Metaphor => parse_plan(&obj, &mut out).map(StepOutput::Plan),
        StepId::Adaptation => parse_scene(&obj, &mut out).map(StepOutput::Scene),
        StepId::Prompt => parse_prompt(&obj, &mut out).map(StepOutput::Prompt),
    };
    match parsed {
        Some(p) if out.is_empty() => Ok(p),
        _ => Err(ViolationReport(out)),
    }
}

fn parse_state(obj: &Map<String, Value>, out: &mut Vec<Violation>) -> Option<StateClaim> {
    let mut f = Fields {
        obj,
        prefix: String::new(),
        out,
    };
    let range = f.nonempty_string("emotional_range");
    let intensity = f.nonempty_string("emotional_intensity");
    let family = f.nonempty_string("family");
    let intensity = parse_enum::<Band>(
        intensity.map(|s| s.to_lowercase()),
        "emotional_intensity",
        out,
    );
    let family = parse_enum::<Family>(family, "family", out);
    Some(StateClaim {
        emotional_range: range?,
        emotional_intensity: intensity?,
        family: family?,
    })
}

fn parse_plan(obj: &Map<String, Value>, out: &mut Vec<Violation>) -> Option<MetaphorPlan> {
    let mut f = Fields {
        obj,
        prefix: String::new(),
        out,
    };
    let mut metaphor_types = Vec::new();
    for (name, o) in f.objects("metaphor_types") {
        let mut g = f.nested(name, o);
        let ty = g.nonempty_string("type");
        let rationale = g.string("rationale");
        let ty = ty.and_then(|t| match t.trim().parse::<MetaphorType>() {
            Ok(t) => Some(t),
            Err(_) => {
                g.out.push(Violation::UnknownMetaphorType { name: t });
                None
            }
        });
        if let (Some(metaphor_type), Some(rationale)) = (ty, rationale) {
            metaphor_types.push(TypeChoice {
                metaphor_type,
                rationale,
            });
        }
    }
    let mut visual_cues = Vec::new();
    for (name, o) in f.objects("visual_cues") {
        let mut g = f.nested(name.clone(), o);
        let description = g.string("description");
        let dynamics = g.optional_string("dynamics");
        let dim = g.nonempty_string("mapped_dimension");
        let dim = parse_enum::<Dimension>(dim, &format!("{name}.mapped_dimension"), g.out);
        if let (Some(description), Some(mapped_dimension)) = (description, dim) {
            visual_cues.push(VisualCue {
                description,
                dynamics,
                mapped_dimension,
            });
        }
    }
    let mut mapping = Vec::new();
    for (name, o) in f.objects("mapping") {
        let mut g = f.nested(name.clone(), o);
        let state_aspect = g.string("state_aspect");
        let cue_index = match o.get("cue_index") {
            None | Some(Value::Null) => {
                g.out.push(Violation::MissingField {
                    field: format!("{name}.cue_index"),
                });
                None
            }
            Some(v) => match v.as_u64() {
                Some(i) => Some(i as usize),
                None => {
                    g.out.push(Violation::WrongType {
                        field: format!("{name}.cue_index"),
                        expected: "a non-negative integer".into(),
                    });
                    None
                }
            },
        };
        if let (Some(state_aspect), Some(cue_index)) = (state_aspect, cue_index) {
            mapping.push(CueMapping {
                state_aspect,
                cue_index,
            });
        }
    }
    if !out.is_empty() {
        return None;
    }
    let plan = MetaphorPlan {
        metaphor_types,
        visual_cues,
        mapping,
    };
    out.extend(plan.violations());
    Some(plan)
}

fn parse_scene(obj: &Map<String, Value>, out: &mut Vec<Violation>) -> Option<AdaptedScene> {
    let mut f = Fields {
        obj,
        prefix: String::new(),
        out,
    };
    let overall = f.nonempty_string("overall_description");
    let atmosphere = f.nonempty_string("emotional_atmosphere");
    let details = f.string_list("details");
    let nonintrusion = f.nonempty_string("nonintrusion_statement");
    let details: Option<Vec<String>> = details.map(|d| {
        d.into_iter()
            .filter(|s| !s.trim().is_empty())
            .collect::<Vec<_>>()
    });
    if let Some(d) = &details {
        if d.is_empty() {
            out.push(Violation::EmptyField {
                field: "details".into(),
            });
        }
    }
    Some(AdaptedScene {
        overall_description: overall?,
        emotional_atmosphere: atmosphere?,
        details: details?,
        nonintrusion_statement: nonintrusion?,
    })
}

fn parse_prompt(obj: &Map<String, Value>, out: &mut Vec<Violation>) -> Option<LayeredPrompt> {
    let mut f = Fields {
        obj,
        prefix: String::new(),
        out,
    };
    let main_scene = f.string("main_scene");
    let elements = f.string_list("metaphorical_elements");
    let modifiers = if obj.contains_key("detailed_modifiers") {
        f.string_list("detailed_modifiers")
    } else {
        Some(Vec::new())
    };
    let sections = PromptSections {
        main_scene: main_scene?,
        metaphorical_elements: elements?,
        detailed_modifiers: modifiers?,
    };
    match assemble(&sections) {
        Ok(p) => Some(p),
        Err(e) => {
            let field = match e {
                PromptError::EmptyMainScene => "main_scene",
                _ => "metaphorical_elements",
            };
            out.push(Violation::EmptyField {
                field: field.into(),
            });
            None
        }
    }
}

/// The adapted scene must name the activity it promises not to disrupt.
pub fn check_nonintrusion(scene: &AdaptedScene, context: &SceneContext) -> Option<Violation> {
    if scene
        .nonintrusion_statement
        .contains(context.primary_activity.as_str())
    {
        None
    } else {
        Some(Violation::MissingPrimaryActivity {
            activity: context.primary_activity.clone(),
        })
    }
}

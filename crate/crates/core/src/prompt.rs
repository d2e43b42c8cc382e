//! Three-layer text-to-image prompt: main scene, metaphorical elements,
//! detailed modifiers.

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Separator between flattened segments.
pub const SEPARATOR: &str = "; ";

/// Character budget used when none is configured.
pub const DEFAULT_MAX_CHARS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("main_scene is empty")]
    EmptyMainScene,
    #[error("metaphorical_elements is empty")]
    EmptyElements,
    #[error("budget of {max_chars} chars is below the mandatory {required} chars")]
    BudgetTooSmall { required: usize, max_chars: usize },
}

/// Raw Step-4 sections before normalization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSections {
    pub main_scene: String,
    pub metaphorical_elements: Vec<String>,
    #[serde(default)]
    pub detailed_modifiers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct LayeredPrompt {
    main_scene: String,
    metaphorical_elements: Vec<String>,
    detailed_modifiers: Vec<String>,
}

impl LayeredPrompt {
    pub fn main_scene(&self) -> &str {
        &self.main_scene
    }

    pub fn metaphorical_elements(&self) -> &[String] {
        &self.metaphorical_elements
    }

    pub fn detailed_modifiers(&self) -> &[String] {
        &self.detailed_modifiers
    }

    /// All segments in layer order.
    pub fn segments(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.main_scene.as_str())
            .chain(self.metaphorical_elements.iter().map(String::as_str))
            .chain(self.detailed_modifiers.iter().map(String::as_str))
    }

    pub fn to_sections(&self) -> PromptSections {
        PromptSections {
            main_scene: self.main_scene.clone(),
            metaphorical_elements: self.metaphorical_elements.clone(),
            detailed_modifiers: self.detailed_modifiers.clone(),
        }
    }
}

impl<'de> Deserialize<'de> for LayeredPrompt {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let sections = PromptSections::deserialize(deserializer)?;
        assemble(&sections).map_err(serde::de::Error::custom)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_list(items: &[String]) -> Vec<String> {
    items
        .iter()
        .map(|s| normalize(s))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Normalizes whitespace and checks the mandatory layers. Blank list entries are dropped.
pub fn assemble(sections: &PromptSections) -> Result<LayeredPrompt, PromptError> {
    let main_scene = normalize(&sections.main_scene);
    if main_scene.is_empty() {
        return Err(PromptError::EmptyMainScene);
    }
    let metaphorical_elements = normalize_list(&sections.metaphorical_elements);
    if metaphorical_elements.is_empty() {
        return Err(PromptError::EmptyElements);
    }
    Ok(LayeredPrompt {
        main_scene,
        metaphorical_elements,
        detailed_modifiers: normalize_list(&sections.detailed_modifiers),
    })
}

/// Joins the layers with [`SEPARATOR`], dropping whole trailing segments
/// (modifiers first, then elements after the first) until the result fits
/// in `max_chars` characters.
pub fn flatten(prompt: &LayeredPrompt, max_chars: usize) -> Result<String, PromptError> {
    let segments: Vec<&str> = prompt.segments().collect();
    let sep = SEPARATOR.chars().count();
    let required = segments[0].chars().count() + sep + segments[1].chars().count();
    if required > max_chars {
        return Err(PromptError::BudgetTooSmall {
            required,
            max_chars,
        });
    }
    let mut len = required;
    let mut keep = 2;
    for seg in &segments[2..] {
        let next = len + sep + seg.chars().count();
        if next > max_chars {
            break;
        }
        len = next;
        keep += 1;
    }
    Ok(segments[..keep].join(SEPARATOR))
}

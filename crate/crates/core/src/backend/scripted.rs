//! Deterministic fixture-backed reasoning backend.
//!
//! Responses are keyed on `step|octant|scene`, where the octant is the
//! nearest rim label of the input pair, so one fixture covers every point
//! of the prototypical dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use super::{BackendError, ChatRequest, Reasoner};
use crate::affect::OctantLabel;
use crate::metaphor::StepId;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FixtureKey {
    pub step: StepId,
    pub octant: OctantLabel,
    pub scene_id: String,
}

impl FixtureKey {
    pub fn new(step: StepId, octant: OctantLabel, scene_id: impl Into<String>) -> Self {
        Self {
            step,
            octant,
            scene_id: scene_id.into(),
        }
    }
}

impl fmt::Display for FixtureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.step.key(), self.octant, self.scene_id)
    }
}

impl FromStr for FixtureKey {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BackendError::Fixture(format!("malformed fixture key {s:?}"));
        let mut parts = s.split('|');
        let (Some(step), Some(octant), Some(scene), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let step = StepId::from_key(step).ok_or_else(bad)?;
        let octant: OctantLabel = octant.parse().map_err(|_| bad())?;
        if octant == OctantLabel::Neutral || scene.is_empty() {
            return Err(bad());
        }
        Ok(Self::new(step, octant, scene))
    }
}

/// Canned responses keyed by (step, octant, scene).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedFixture {
    entries: BTreeMap<FixtureKey, String>,
}

impl ScriptedFixture {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (FixtureKey, String)>,
    ) -> Result<Self, BackendError> {
        let mut map = BTreeMap::new();
        for (key, text) in entries {
            if map.contains_key(&key) {
                return Err(BackendError::Fixture(format!("duplicate key {key}")));
            }
            map.insert(key, text);
        }
        Ok(Self { entries: map })
    }

    /// Parses a JSON object of `"step|octant|scene": response` entries.
    /// Duplicate keys are rejected rather than silently overwritten.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let raw: OrderedPairs = serde_json::from_str(text)
            .map_err(|e| BackendError::Fixture(format!("fixture is not a JSON object: {e}")))?;
        let entries = raw
            .0
            .into_iter()
            .map(|(k, v)| Ok((k.parse::<FixtureKey>()?, v)))
            .collect::<Result<Vec<_>, BackendError>>()?;
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Shipped fixtures: `scripted-a` and `scripted-b`.
    pub fn builtin(name: &str) -> Result<Self, BackendError> {
        let text = match name {
            "scripted-a" => include_str!("../../data/fixtures/scripted_a.json"),
            "scripted-b" => include_str!("../../data/fixtures/scripted_b.json"),
            other => {
                return Err(BackendError::Fixture(format!(
                    "unknown builtin fixture {other:?}"
                )))
            }
        };
        Self::from_json(text)
    }

    pub fn insert(&mut self, key: FixtureKey, text: impl Into<String>) -> Option<String> {
        self.entries.insert(key, text.into())
    }

    pub fn get(&self, key: &FixtureKey) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &FixtureKey> {
        self.entries.keys()
    }

    /// Keys in the product of all steps, rim octants and `scenes` that have no entry.
    pub fn missing_keys(&self, scenes: &[&str]) -> Vec<FixtureKey> {
        let mut missing = Vec::new();
        for step in StepId::ALL {
            for octant in OctantLabel::RIM {
                for scene in scenes {
                    let key = FixtureKey::new(step, octant, *scene);
                    if !self.entries.contains_key(&key) {
                        missing.push(key);
                    }
                }
            }
        }
        missing
    }
}

struct OrderedPairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PairsVisitor;
        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = OrderedPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of string keys to response strings")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(OrderedPairs(out))
            }
        }
        deserializer.deserialize_map(PairsVisitor)
    }
}

/// Backend answering from a [`ScriptedFixture`].
#[derive(Debug)]
pub struct ScriptedBackend {
    backend_id: String,
    temperature: f64,
    fixture: ScriptedFixture,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn with_id(mut self, backend_id: impl Into<String>) -> Self {
        self.backend_id = backend_id.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn fixture(&self) -> &ScriptedFixture {
        &self.fixture
    }

    /// Number of `complete` calls so far, including misses.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

pub fn make_scripted(fixture: ScriptedFixture) -> ScriptedBackend {
    ScriptedBackend {
        backend_id: "scripted".into(),
        temperature: 1.0,
        fixture,
        calls: AtomicUsize::new(0),
    }
}

impl Reasoner for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn model_name(&self) -> &str {
        "scripted"
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn fingerprint(&self) -> String {
        let entries: Vec<(String, &str)> = self
            .fixture
            .entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.as_str()))
            .collect();
        format!(
            "{}|scripted|{}",
            self.backend_id,
            crate::hashing::digest_json(&entries)
        )
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let route = request
            .route
            .as_ref()
            .ok_or_else(|| BackendError::FixtureMiss {
                key: "<request has no routing tag>".into(),
            })?;
        let key = FixtureKey::new(route.step, route.octant, route.scene.scene_id.clone());
        self.fixture
            .get(&key)
            .map(str::to_string)
            .ok_or_else(|| BackendError::FixtureMiss {
                key: key.to_string(),
            })
    }
}

//! Biodata-to-metaphor pipeline.
//!
//! Normalized valence-arousal readings are located on the circumplex of
//! affect, turned into metaphorical visual cues through a four-step
//! chain-of-thought over a pluggable reasoning backend, rendered into a
//! three-layer text-to-image prompt, generated as an equirectangular
//! panorama and packaged for a skybox-capable engine.
//!
//! Every external service sits behind a trait with a deterministic
//! offline implementation (scripted fixtures, rule engine, hash-seeded
//! image stub), so the whole pipeline runs without network access.

pub mod affect;
pub mod backend;
pub mod hashing;
pub mod image;
pub mod metaphor;
pub mod package;
pub mod pipeline;
pub mod prompt;

pub use affect::{
    aggregate_group, infer_state, polar_of, prototypical_va_pairs, Band, CircumplexGeometry,
    Family, InferredState, OctantLabel, OctantTable, VaPair,
};
pub use metaphor::SceneContext;
pub use prompt::LayeredPrompt;

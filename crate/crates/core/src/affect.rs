//! Circumplex model of affect.
//!
//! All coordinates are normalized to `[0, 1]` on both axes with the neutral
//! point at the circumplex center. Angles are measured in degrees,
//! counterclockwise from the positive-valence axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Tolerance used for [`VaPair`] equality and axis-sign decisions.
pub const VA_EPSILON: f64 = 1e-9;

/// Extremity below which a state is reported as neutral.
pub const NEUTRAL_EPSILON: f64 = 0.05;

/// Upper bound (exclusive) of the `low` band.
pub const LOW_BAND_MAX: f64 = 0.35;
/// Upper bound (inclusive) of the `medium` band.
pub const MEDIUM_BAND_MAX: f64 = 0.65;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffectError {
    #[error("{field} must lie in [0, 1], got {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("invalid circumplex geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid octant table: {0}")]
    InvalidOctantTable(String),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("cannot aggregate an empty group")]
    EmptyGroup,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight {index} is negative or not finite: {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights sum to zero")]
    ZeroWeightSum,
    #[error("unknown label: {0}")]
    UnknownLabel(String),
}

/// A normalized valence-arousal coordinate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VaPair {
    valence: f64,
    arousal: f64,
}

impl VaPair {
    pub fn new(valence: f64, arousal: f64) -> Result<Self, AffectError> {
        check_unit("valence", valence)?;
        check_unit("arousal", arousal)?;
        Ok(Self { valence, arousal })
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }
}

fn check_unit(field: &'static str, value: f64) -> Result<(), AffectError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AffectError::OutOfRange { field, value })
    }
}

impl PartialEq for VaPair {
    fn eq(&self, other: &Self) -> bool {
        (self.valence - other.valence).abs() <= VA_EPSILON
            && (self.arousal - other.arousal).abs() <= VA_EPSILON
    }
}

impl fmt::Display for VaPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.valence, self.arousal)
    }
}

impl<'de> Deserialize<'de> for VaPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            valence: f64,
            arousal: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        VaPair::new(raw.valence, raw.arousal).map_err(serde::de::Error::custom)
    }
}

/// Center and radius of the circumplex inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircumplexGeometry {
    center: VaPair,
    radius: f64,
}

impl Default for CircumplexGeometry {
    fn default() -> Self {
        Self {
            center: VaPair {
                valence: 0.5,
                arousal: 0.5,
            },
            radius: 0.5,
        }
    }
}

impl CircumplexGeometry {
    pub fn new(center: VaPair, radius: f64) -> Result<Self, AffectError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(AffectError::InvalidGeometry(format!(
                "radius must be positive, got {radius}"
            )));
        }
        for (axis, c) in [("valence", center.valence), ("arousal", center.arousal)] {
            if c - radius < -VA_EPSILON || c + radius > 1.0 + VA_EPSILON {
                return Err(AffectError::InvalidGeometry(format!(
                    "center {c} ± radius {radius} leaves [0, 1] on the {axis} axis"
                )));
            }
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> VaPair {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// The point on the circumplex rim at `angle_deg`.
    pub fn point_at(&self, angle_deg: f64) -> VaPair {
        let theta = angle_deg.to_radians();
        // Construction guarantees the rim stays inside the unit square up to rounding.
        VaPair {
            valence: (self.center.valence + self.radius * theta.cos()).clamp(0.0, 1.0),
            arousal: (self.center.arousal + self.radius * theta.sin()).clamp(0.0, 1.0),
        }
    }
}

impl<'de> Deserialize<'de> for CircumplexGeometry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            center: VaPair,
            radius: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        CircumplexGeometry::new(raw.center, raw.radius).map_err(serde::de::Error::custom)
    }
}

/// Affect labels on the circumplex, plus the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OctantLabel {
    #[serde(rename = "pleasure")]
    Pleasure,
    #[serde(rename = "excitement")]
    Excitement,
    #[serde(rename = "arousal/alert")]
    ArousalAlert,
    #[serde(rename = "distress")]
    Distress,
    #[serde(rename = "misery")]
    Misery,
    #[serde(rename = "depression/sadness")]
    DepressionSadness,
    #[serde(rename = "sleepiness")]
    Sleepiness,
    #[serde(rename = "contentment")]
    Contentment,
    #[serde(rename = "neutral")]
    Neutral,
}

impl OctantLabel {
    pub const RIM: [OctantLabel; 8] = [
        OctantLabel::Pleasure,
        OctantLabel::Excitement,
        OctantLabel::ArousalAlert,
        OctantLabel::Distress,
        OctantLabel::Misery,
        OctantLabel::DepressionSadness,
        OctantLabel::Sleepiness,
        OctantLabel::Contentment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OctantLabel::Pleasure => "pleasure",
            OctantLabel::Excitement => "excitement",
            OctantLabel::ArousalAlert => "arousal/alert",
            OctantLabel::Distress => "distress",
            OctantLabel::Misery => "misery",
            OctantLabel::DepressionSadness => "depression/sadness",
            OctantLabel::Sleepiness => "sleepiness",
            OctantLabel::Contentment => "contentment",
            OctantLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for OctantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OctantLabel {
    type Err = AffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OctantLabel::RIM
            .iter()
            .chain(std::iter::once(&OctantLabel::Neutral))
            .find(|l| l.as_str() == s)
            .copied()
            .ok_or_else(|| AffectError::UnknownLabel(s.to_string()))
    }
}

/// Eight labelled angle centers at 45° spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct OctantTable {
    entries: Vec<(f64, OctantLabel)>,
}

impl Default for OctantTable {
    fn default() -> Self {
        Self {
            entries: OctantLabel::RIM
                .iter()
                .enumerate()
                .map(|(k, l)| (45.0 * k as f64, *l))
                .collect(),
        }
    }
}

impl OctantTable {
    pub fn new(entries: Vec<(f64, OctantLabel)>) -> Result<Self, AffectError> {
        if entries.len() != 8 {
            return Err(AffectError::InvalidOctantTable(format!(
                "expected 8 entries, got {}",
                entries.len()
            )));
        }
        let mut angles: Vec<f64> = entries.iter().map(|e| e.0).collect();
        angles.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..8).map(|k| 45.0 * k as f64).collect();
        if angles != expected {
            return Err(AffectError::InvalidOctantTable(format!(
                "angle centers must be 0, 45, ..., 315; got {angles:?}"
            )));
        }
        let mut labels: Vec<OctantLabel> = entries.iter().map(|e| e.1).collect();
        if labels.contains(&OctantLabel::Neutral) {
            return Err(AffectError::InvalidOctantTable(
                "neutral is not a rim label".into(),
            ));
        }
        labels.sort();
        labels.dedup();
        if labels.len() != 8 {
            return Err(AffectError::InvalidOctantTable(
                "labels must be unique".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, OctantLabel)] {
        &self.entries
    }

    /// Label whose center is circularly nearest to `angle_deg`; ties go to the smaller center.
    pub fn nearest(&self, angle_deg: f64) -> OctantLabel {
        let mut best: Option<(f64, f64, OctantLabel)> = None;
        for &(center, label) in &self.entries {
            let d = circular_distance(angle_deg, center);
            best = match best {
                None => Some((d, center, label)),
                Some((bd, bc, bl)) => {
                    if d < bd - 1e-9 || ((d - bd).abs() <= 1e-9 && center < bc) {
                        Some((d, center, label))
                    } else {
                        Some((bd, bc, bl))
                    }
                }
            };
        }
        best.map(|b| b.2).unwrap_or(OctantLabel::Neutral)
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Medium,
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Low, Band::Medium, Band::High];

    pub fn of(value: f64) -> Band {
        if value < LOW_BAND_MAX {
            Band::Low
        } else if value <= MEDIUM_BAND_MAX {
            Band::Medium
        } else {
            Band::High
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Medium => "medium",
            Band::High => "high",
        }
    }
}

impl FromStr for Band {
    type Err = AffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Band::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| AffectError::UnknownLabel(s.to_string()))
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Quadrant of the circumplex, or neutral near the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PositiveActivated,
    PositiveDeactivated,
    NegativeActivated,
    NegativeDeactivated,
    Neutral,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::PositiveActivated,
        Family::PositiveDeactivated,
        Family::NegativeActivated,
        Family::NegativeDeactivated,
        Family::Neutral,
    ];

    /// Quadrant from center offsets. An offset within [`VA_EPSILON`] of zero
    /// counts as positive valence / activated arousal.
    pub fn from_offsets(dv: f64, da: f64) -> Family {
        let positive = dv > -VA_EPSILON;
        let activated = da > -VA_EPSILON;
        match (positive, activated) {
            (true, true) => Family::PositiveActivated,
            (true, false) => Family::PositiveDeactivated,
            (false, true) => Family::NegativeActivated,
            (false, false) => Family::NegativeDeactivated,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::PositiveActivated => "positive-activated",
            Family::PositiveDeactivated => "positive-deactivated",
            Family::NegativeActivated => "negative-activated",
            Family::NegativeDeactivated => "negative-deactivated",
            Family::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = AffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .find(|f| f.as_str() == s)
            .copied()
            .ok_or_else(|| AffectError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polar {
    pub angle_deg: f64,
    pub extremity: f64,
}

/// Locally computed inner state for a V-A pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredState {
    pub angle_deg: f64,
    pub extremity: f64,
    pub valence_band: Band,
    pub arousal_band: Band,
    /// Mirrors `arousal_band`: arousal is read as emotional intensity.
    pub intensity_label: Band,
    pub octant_label: OctantLabel,
    pub family: Family,
}

impl InferredState {
    /// Nearest rim octant, ignoring the neutral cutoff.
    pub fn rim_octant(&self, table: &OctantTable) -> OctantLabel {
        table.nearest(self.angle_deg)
    }
}

/// `count` points evenly spaced around the rim, starting on the positive-valence axis.
pub fn prototypical_va_pairs(
    count: usize,
    geometry: &CircumplexGeometry,
) -> Result<Vec<VaPair>, AffectError> {
    if count == 0 {
        return Err(AffectError::ZeroCount);
    }
    let step = 360.0 / count as f64;
    Ok((0..count)
        .map(|k| geometry.point_at(step * k as f64))
        .collect())
}

pub fn polar_of(va: &VaPair, geometry: &CircumplexGeometry) -> Polar {
    let dv = va.valence - geometry.center.valence;
    let da = va.arousal - geometry.center.arousal;
    let distance = dv.hypot(da);
    if distance < 1e-12 {
        return Polar {
            angle_deg: 0.0,
            extremity: 0.0,
        };
    }
    let mut angle = da.atan2(dv).to_degrees();
    if angle < 0.0 {
        angle += 360.0;
    }
    if angle >= 360.0 {
        angle -= 360.0;
    }
    Polar {
        angle_deg: angle,
        extremity: (distance / geometry.radius).min(1.0),
    }
}

pub fn infer_state(
    va: &VaPair,
    geometry: &CircumplexGeometry,
    table: &OctantTable,
) -> InferredState {
    let polar = polar_of(va, geometry);
    let valence_band = Band::of(va.valence);
    let arousal_band = Band::of(va.arousal);
    let neutral = polar.extremity < NEUTRAL_EPSILON;
    let (octant_label, family) = if neutral {
        (OctantLabel::Neutral, Family::Neutral)
    } else {
        (
            table.nearest(polar.angle_deg),
            Family::from_offsets(
                va.valence - geometry.center.valence,
                va.arousal - geometry.center.arousal,
            ),
        )
    };
    InferredState {
        angle_deg: polar.angle_deg,
        extremity: polar.extremity,
        valence_band,
        arousal_band,
        intensity_label: arousal_band,
        octant_label,
        family,
    }
}

/// Component-wise (weighted) arithmetic mean of a group's V-A pairs.
pub fn aggregate_group(vas: &[VaPair], weights: Option<&[f64]>) -> Result<VaPair, AffectError> {
    if vas.is_empty() {
        return Err(AffectError::EmptyGroup);
    }
    let ones;
    let ws = match weights {
        Some(ws) => {
            if ws.len() != vas.len() {
                return Err(AffectError::WeightCount {
                    expected: vas.len(),
                    got: ws.len(),
                });
            }
            if let Some((index, &value)) = ws
                .iter()
                .enumerate()
                .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
            {
                return Err(AffectError::InvalidWeight { index, value });
            }
            ws
        }
        None => {
            ones = vec![1.0; vas.len()];
            &ones[..]
        }
    };
    let total = sorted_sum(ws.iter().copied());
    if total <= 0.0 {
        return Err(AffectError::ZeroWeightSum);
    }
    let sum_v = sorted_sum(vas.iter().zip(ws).map(|(p, w)| w * p.valence));
    let sum_a = sorted_sum(vas.iter().zip(ws).map(|(p, w)| w * p.arousal));
    // Rounding can push a mean of in-range values a hair outside [0, 1].
    VaPair::new(
        (sum_v / total).clamp(0.0, 1.0),
        (sum_a / total).clamp(0.0, 1.0),
    )
}

/// Sums in ascending order, so the result does not depend on input order.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn va(v: f64, a: f64) -> VaPair {
        VaPair::new(v, a).unwrap()
    }

    fn state(v: f64, a: f64) -> InferredState {
        infer_state(
            &va(v, a),
            &CircumplexGeometry::default(),
            &OctantTable::default(),
        )
    }

    #[test]
    fn rejects_out_of_range_components() {
        assert!(VaPair::new(1.2, 0.5).is_err());
        assert!(VaPair::new(0.5, -0.01).is_err());
        assert!(VaPair::new(f64::NAN, 0.5).is_err());
        assert!(VaPair::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn equality_is_epsilon_tolerant() {
        assert_eq!(va(0.3, 0.7), va(0.3 + 1e-10, 0.7));
        assert_ne!(va(0.3, 0.7), va(0.3 + 1e-6, 0.7));
    }

    #[test]
    fn deserialization_validates_range() {
        let ok: VaPair = serde_json::from_str(r#"{"valence":0.2,"arousal":0.9}"#).unwrap();
        assert_eq!(ok, va(0.2, 0.9));
        assert!(serde_json::from_str::<VaPair>(r#"{"valence":1.5,"arousal":0.9}"#).is_err());
    }

    #[test]
    fn geometry_must_fit_unit_square() {
        assert!(CircumplexGeometry::new(va(0.5, 0.5), 0.6).is_err());
        assert!(CircumplexGeometry::new(va(0.3, 0.5), 0.4).is_err());
        assert!(CircumplexGeometry::new(va(0.5, 0.5), 0.0).is_err());
        assert!(CircumplexGeometry::new(va(0.4, 0.6), 0.4).is_ok());
    }

    #[test]
    fn eight_prototypes_hit_the_demo_anchors() {
        let pairs = prototypical_va_pairs(8, &CircumplexGeometry::default()).unwrap();
        assert_eq!(pairs.len(), 8);
        assert!((pairs[1].valence() - 0.854).abs() < 1e-3);
        assert!((pairs[1].arousal() - 0.854).abs() < 1e-3);
        assert!((pairs[5].valence() - 0.146).abs() < 1e-3);
        assert!((pairs[5].arousal() - 0.146).abs() < 1e-3);
    }

    #[test]
    fn four_prototypes_quarter_turn() {
        let pairs = prototypical_va_pairs(4, &CircumplexGeometry::default()).unwrap();
        assert!((pairs[1].valence() - 0.5).abs() < 1e-12);
        assert!((pairs[1].arousal() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_count_is_rejected() {
        assert_eq!(
            prototypical_va_pairs(0, &CircumplexGeometry::default()),
            Err(AffectError::ZeroCount)
        );
    }

    #[test]
    fn polar_on_axes() {
        let g = CircumplexGeometry::default();
        let p = polar_of(&va(1.0, 0.5), &g);
        assert!(p.angle_deg.abs() < 1e-12 && (p.extremity - 1.0).abs() < 1e-12);
        let p = polar_of(&va(0.5, 1.0), &g);
        assert!((p.angle_deg - 90.0).abs() < 1e-12 && (p.extremity - 1.0).abs() < 1e-12);
        let p = polar_of(&va(0.854, 0.854), &g);
        assert!((p.angle_deg - 45.0).abs() < 1e-2 && (p.extremity - 1.0).abs() < 1e-2);
        let p = polar_of(&va(0.5, 0.5), &g);
        assert_eq!((p.angle_deg, p.extremity), (0.0, 0.0));
    }

    #[test]
    fn extremity_clamps_in_corners() {
        let p = polar_of(&va(1.0, 1.0), &CircumplexGeometry::default());
        assert_eq!(p.extremity, 1.0);
    }

    #[test]
    fn demo_pairs_infer_expected_states() {
        let s = state(0.854, 0.854);
        assert_eq!(s.family, Family::PositiveActivated);
        assert_eq!(s.octant_label, OctantLabel::Excitement);
        assert_eq!(s.intensity_label, Band::High);

        let s = state(0.5, 0.5);
        assert_eq!(s.family, Family::Neutral);
        assert_eq!(s.octant_label, OctantLabel::Neutral);
        assert_eq!(s.extremity, 0.0);

        let s = state(0.14, 0.85);
        assert_eq!(s.family, Family::NegativeActivated);
        assert_eq!(s.octant_label, OctantLabel::Distress);
        assert_eq!(s.intensity_label, Band::High);

        let s = state(0.146, 0.146);
        assert_eq!(s.family, Family::NegativeDeactivated);
        assert_eq!(s.octant_label, OctantLabel::DepressionSadness);
        assert_eq!(s.intensity_label, Band::Low);
    }

    #[test]
    fn band_thresholds() {
        assert_eq!(Band::of(0.3499), Band::Low);
        assert_eq!(Band::of(0.35), Band::Medium);
        assert_eq!(Band::of(0.65), Band::Medium);
        assert_eq!(Band::of(0.6501), Band::High);
    }

    #[test]
    fn neutral_cutoff() {
        // extremity 0.04 and 0.06 along the valence axis
        assert_eq!(state(0.52, 0.5).family, Family::Neutral);
        assert_eq!(state(0.53, 0.5).octant_label, OctantLabel::Pleasure);
    }

    #[test]
    fn octant_ties_go_to_smaller_angle() {
        let t = OctantTable::default();
        assert_eq!(t.nearest(22.5), OctantLabel::Pleasure);
        assert_eq!(t.nearest(67.5), OctantLabel::Excitement);
        assert_eq!(t.nearest(337.5), OctantLabel::Pleasure);
        assert_eq!(t.nearest(359.0), OctantLabel::Pleasure);
        assert_eq!(t.nearest(202.6), OctantLabel::DepressionSadness);
    }

    #[test]
    fn octant_table_validation() {
        let mut entries = OctantTable::default().entries().to_vec();
        entries[3].0 = 130.0;
        assert!(OctantTable::new(entries).is_err());
        let mut entries = OctantTable::default().entries().to_vec();
        entries[3].1 = OctantLabel::Pleasure;
        assert!(OctantTable::new(entries).is_err());
        assert!(OctantTable::new(OctantTable::default().entries().to_vec()).is_ok());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate_group(&[va(0.3, 0.7)], None).unwrap(),
            va(0.3, 0.7)
        );
        let pts = [va(0.0, 0.0), va(1.0, 1.0)];
        assert_eq!(aggregate_group(&pts, None).unwrap(), va(0.5, 0.5));
        assert_eq!(
            aggregate_group(&pts, Some(&[1.0, 3.0])).unwrap(),
            va(0.75, 0.75)
        );
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate_group(&[], None), Err(AffectError::EmptyGroup));
        let pts = [va(0.0, 0.0), va(1.0, 1.0)];
        assert_eq!(
            aggregate_group(&pts, Some(&[0.0, 0.0])),
            Err(AffectError::ZeroWeightSum)
        );
        assert!(matches!(
            aggregate_group(&pts, Some(&[1.0])),
            Err(AffectError::WeightCount { .. })
        ));
        assert!(matches!(
            aggregate_group(&pts, Some(&[1.0, -1.0])),
            Err(AffectError::InvalidWeight { index: 1, .. })
        ));
    }

    fn geometry_strategy() -> impl Strategy<Value = CircumplexGeometry> {
        (0.05f64..0.95, 0.05f64..0.95, 0.01f64..1.0).prop_filter_map(
            "geometry must fit",
            |(cv, ca, frac)| {
                let max_r = cv.min(1.0 - cv).min(ca).min(1.0 - ca);
                CircumplexGeometry::new(VaPair::new(cv, ca).ok()?, max_r * frac).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn polar_round_trip(g in geometry_strategy(), theta in 0.0f64..360.0) {
            let p = polar_of(&g.point_at(theta), &g);
            let err = circular_distance(p.angle_deg, theta);
            prop_assert!(err < 1e-6, "angle {} vs {}", p.angle_deg, theta);
            prop_assert!((p.extremity - 1.0).abs() < 1e-9);
        }

        #[test]
        fn reflection_flips_family_polarity(dv in 0.05f64..0.5, da in 0.05f64..0.5,
                                            sv in prop::bool::ANY, sa in prop::bool::ANY) {
            let dv = if sv { dv } else { -dv };
            let da = if sa { da } else { -da };
            let s = state(0.5 + dv, 0.5 + da);
            let valence_mirror = state(0.5 - dv, 0.5 + da);
            let arousal_mirror = state(0.5 + dv, 0.5 - da);
            let positive = |f: Family| matches!(f, Family::PositiveActivated | Family::PositiveDeactivated);
            let activated = |f: Family| matches!(f, Family::PositiveActivated | Family::NegativeActivated);
            prop_assert_eq!(positive(s.family), !positive(valence_mirror.family));
            prop_assert_eq!(activated(s.family), activated(valence_mirror.family));
            prop_assert_eq!(activated(s.family), !activated(arousal_mirror.family));
            prop_assert_eq!(positive(s.family), positive(arousal_mirror.family));
        }

        #[test]
        fn neutral_iff_small_extremity(v in 0.0f64..=1.0, a in 0.0f64..=1.0) {
            let s = state(v, a);
            prop_assert_eq!(s.octant_label == OctantLabel::Neutral, s.extremity < NEUTRAL_EPSILON);
            prop_assert_eq!(s.family == Family::Neutral, s.extremity < NEUTRAL_EPSILON);
            prop_assert_eq!(s.intensity_label, s.arousal_band);
            prop_assert!((0.0..360.0).contains(&s.angle_deg));
            prop_assert_eq!(state(v, a), s);
        }

        #[test]
        fn aggregate_is_idempotent(v in 0.0f64..=1.0, a in 0.0f64..=1.0, n in 1usize..20) {
            let group = vec![va(v, a); n];
            prop_assert_eq!(aggregate_group(&group, None).unwrap(), va(v, a));
        }
    }
}

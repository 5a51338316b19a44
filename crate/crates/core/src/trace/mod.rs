//! The typed trace data model: an initial state, a transition, a resulting
//! state, an optional derivation, and an answer, plus bookkeeping metadata.
//!
//! Parsing is deliberately lenient (model output is messy); schema validation
//! reports what is missing or ill-typed instead of refusing to construct.

mod answer;
mod parse;
mod schema;

pub use answer::{
    answers_equal, normalize_answer, AnswerType, CompareError, NormalizationError,
    NormalizedAnswer,
};
pub use parse::{canonicalize_value, parse_trace, to_canonical_json, ParseError};
pub use schema::{check_unique_ids, validate_schema, SchemaIssue, SchemaReport, TRACE_SCHEMA_JSON};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;

/// The 17 scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    InclinedPlane,
    Projectile,
    Collision,
    Pulley,
    Spring,
    Circuit,
    Fluid,
    Thermal,
    FreeFall,
    Friction,
    CircularMotion,
    Wave,
    Lever,
    Buoyancy,
    Optics,
    Pendulum,
    EmInduction,
}

impl Family {
    pub const ALL: [Family; 17] = [
        Family::InclinedPlane,
        Family::Projectile,
        Family::Collision,
        Family::Pulley,
        Family::Spring,
        Family::Circuit,
        Family::Fluid,
        Family::Thermal,
        Family::FreeFall,
        Family::Friction,
        Family::CircularMotion,
        Family::Wave,
        Family::Lever,
        Family::Buoyancy,
        Family::Optics,
        Family::Pendulum,
        Family::EmInduction,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::InclinedPlane => "inclined_plane",
            Family::Projectile => "projectile",
            Family::Collision => "collision",
            Family::Pulley => "pulley",
            Family::Spring => "spring",
            Family::Circuit => "circuit",
            Family::Fluid => "fluid",
            Family::Thermal => "thermal",
            Family::FreeFall => "free_fall",
            Family::Friction => "friction",
            Family::CircularMotion => "circular_motion",
            Family::Wave => "wave",
            Family::Lever => "lever",
            Family::Buoyancy => "buoyancy",
            Family::Optics => "optics",
            Family::Pendulum => "pendulum",
            Family::EmInduction => "em_induction",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.iter().copied().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fixed vocabulary of 14 spatial relation types.
pub const RELATION_TYPES: [&str; 14] = [
    "on",
    "under",
    "above",
    "below",
    "contact",
    "separated",
    "left_of",
    "right_of",
    "inside",
    "contains",
    "attached",
    "aligned",
    "before",
    "after",
];

/// The six contradictory relation pairs, checked on the same ordered args.
pub const CONTRADICTORY_RELATION_PAIRS: [(&str, &str); 6] = [
    ("above", "below"),
    ("contact", "separated"),
    ("on", "below"),
    ("on", "under"),
    ("left_of", "right_of"),
    ("inside", "contains"),
];

/// Generic physics terms accepted as force targets / relation args even when
/// not listed in `objects`.
pub const GENERIC_ENTITY_TERMS: [&str; 6] = ["ground", "surface", "incline", "wall", "air", "earth"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Object {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Relation {
    #[serde(rename = "type", default)]
    pub rel_type: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl Relation {
    pub fn new(rel_type: &str, a: &str, b: &str) -> Relation {
        Relation {
            rel_type: rel_type.to_string(),
            args: vec![a.to_string(), b.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Force {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub direction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct State0 {
    #[serde(default)]
    pub objects: Vec<Object>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub forces: Vec<Force>,
    #[serde(default)]
    pub variables: BTreeMap<String, Value>,
    #[serde(default)]
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transition {
    #[serde(default)]
    pub rule: String,
    #[serde(default)]
    pub effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equation: Option<String>,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct State1 {
    #[serde(default)]
    pub predicted_change: String,
    #[serde(default)]
    pub new_variables: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl Default for Answer {
    fn default() -> Self {
        Answer {
            value: Value::Null,
            unit: None,
            explanation: None,
        }
    }
}

impl Answer {
    pub fn numeric(value: f64, unit: &str, explanation: String) -> Answer {
        Answer {
            value: serde_json::json!(value),
            unit: Some(unit.to_string()),
            explanation: Some(explanation),
        }
    }

    /// Numeric view of the value, parsing numeric strings as a fallback.
    pub fn value_f64(&self) -> Option<f64> {
        match &self.value {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().replace(',', "").parse::<f64>().ok(),
            _ => None,
        }
    }

    pub fn value_text(&self) -> String {
        match &self.value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Synthetic,
    External,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_variables: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub parameter_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_type: Option<AnswerType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_params: Option<BTreeMap<String, Value>>,
}

/// One trace document. Fields are optional so that sloppy model output still
/// parses; `validate_schema` reports what is missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_0: Option<State0>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_1: Option<State1>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

impl Trace {
    pub fn family(&self) -> Option<Family> {
        self.scenario_family.as_deref().and_then(Family::parse)
    }

    pub fn id_str(&self) -> &str {
        self.id.as_deref().unwrap_or("")
    }

    /// Fill identity fields from a bank example without overwriting anything
    /// the model actually produced. Used before verifying model output.
    pub fn graft_identity(&mut self, example: &Trace) {
        if self.id.is_none() {
            self.id = example.id.clone();
        }
        if self.scenario_family.is_none() {
            self.scenario_family = example.scenario_family.clone();
        }
        if self.metadata.is_none() {
            self.metadata = example.metadata.clone();
        }
    }
}

/// Numeric entries of a variables map (non-numeric values are skipped).
pub fn numeric_entries(map: &BTreeMap<String, Value>) -> Vec<(&str, f64)> {
    map.iter()
        .filter_map(|(k, v)| value_as_f64(v).map(|x| (k.as_str(), x)))
        .collect()
}

pub fn value_as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

/// Relative comparison against a reference value: 1% relative tolerance,
/// falling back to 1e-9 absolute when the reference is zero.
pub fn close_to_gold(value: f64, gold: f64) -> bool {
    if gold == 0.0 {
        value.abs() <= 1e-9
    } else {
        (value - gold).abs() / gold.abs() <= 0.01
    }
}

//! Schema validation for traces.
//!
//! Two modes share the manual field-presence and vocabulary checks. Strict
//! mode (gold traces) additionally validates the serialized document against
//! the Draft 7 schema shipped in `data/trace_schema.json`, so a strict pass
//! always implies a lenient pass.

use super::{Family, Trace, RELATION_TYPES};
use jsonschema::{Draft, JSONSchema};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeSet;
use std::sync::LazyLock;

/// The declarative schema document shipped with the crate.
pub const TRACE_SCHEMA_JSON: &str = include_str!("../../../../data/trace_schema.json");

static COMPILED_SCHEMA: LazyLock<JSONSchema> = LazyLock::new(|| {
    let doc: Value = serde_json::from_str(TRACE_SCHEMA_JSON).expect("trace schema is valid JSON");
    JSONSchema::options()
        .with_draft(Draft::Draft7)
        .compile(&doc)
        .expect("trace schema compiles")
});

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SchemaIssue {
    pub path: String,
    pub message: String,
}

impl SchemaIssue {
    fn new(path: impl Into<String>, message: impl Into<String>) -> SchemaIssue {
        SchemaIssue {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub valid: bool,
    pub errors: Vec<SchemaIssue>,
}

impl SchemaReport {
    pub fn from_errors(errors: Vec<SchemaIssue>) -> SchemaReport {
        SchemaReport {
            valid: errors.is_empty(),
            errors,
        }
    }
}

/// Validate a trace. `strict` additionally runs the Draft 7 schema document.
pub fn validate_schema(trace: &Trace, strict: bool) -> SchemaReport {
    let mut errors: BTreeSet<SchemaIssue> = BTreeSet::new();
    lenient_checks(trace, &mut errors);
    if strict {
        let doc = serde_json::to_value(trace).expect("trace serializes");
        let issues: Vec<SchemaIssue> = match COMPILED_SCHEMA.validate(&doc) {
            Ok(()) => Vec::new(),
            Err(iter) => iter
                .map(|err| {
                    let path = pointer_to_dotted(&err.instance_path.to_string());
                    SchemaIssue::new(path, err.to_string())
                })
                .collect(),
        };
        errors.extend(issues);
    }
    SchemaReport::from_errors(errors.into_iter().collect())
}

fn lenient_checks(trace: &Trace, errors: &mut BTreeSet<SchemaIssue>) {
    match &trace.id {
        None => errors.insert(SchemaIssue::new("id", "missing required key")),
        Some(id) if id.is_empty() => errors.insert(SchemaIssue::new("id", "id is empty")),
        _ => false,
    };
    match &trace.scenario_family {
        None => {
            errors.insert(SchemaIssue::new("scenario_family", "missing required key"));
        }
        Some(fam) if Family::parse(fam).is_none() => {
            errors.insert(SchemaIssue::new(
                "scenario_family",
                format!("'{fam}' is not one of the 17 scenario families"),
            ));
        }
        _ => {}
    }

    match &trace.state_0 {
        None => {
            errors.insert(SchemaIssue::new("state_0", "missing required key"));
        }
        Some(s0) => {
            for (i, obj) in s0.objects.iter().enumerate() {
                if obj.name.is_empty() {
                    errors.insert(SchemaIssue::new(
                        format!("state_0.objects[{i}].name"),
                        "object name is empty",
                    ));
                }
            }
            for (i, rel) in s0.relations.iter().enumerate() {
                if !RELATION_TYPES.contains(&rel.rel_type.as_str()) {
                    errors.insert(SchemaIssue::new(
                        format!("state_0.relations[{i}].type"),
                        format!(
                            "'{}' is not one of the 14 spatial relation types",
                            rel.rel_type
                        ),
                    ));
                }
                if rel.args.len() != 2 || rel.args.iter().any(String::is_empty) {
                    errors.insert(SchemaIssue::new(
                        format!("state_0.relations[{i}].args"),
                        "relation args must be an ordered pair of entity names",
                    ));
                }
            }
            for (i, force) in s0.forces.iter().enumerate() {
                for (field, value) in [
                    ("name", &force.name),
                    ("target", &force.target),
                    ("direction", &force.direction),
                ] {
                    if value.is_empty() {
                        errors.insert(SchemaIssue::new(
                            format!("state_0.forces[{i}].{field}"),
                            format!("force {field} is empty"),
                        ));
                    }
                }
            }
            for (key, value) in &s0.variables {
                if super::value_as_f64(value).is_none() {
                    errors.insert(SchemaIssue::new(
                        format!("state_0.variables.{key}"),
                        "variable value is not numeric",
                    ));
                }
            }
        }
    }

    match &trace.transition {
        None => {
            errors.insert(SchemaIssue::new("transition", "missing required key"));
        }
        Some(t) => {
            if t.rule.is_empty() {
                errors.insert(SchemaIssue::new("transition.rule", "rule is empty"));
            }
            if t.effect.is_empty() {
                errors.insert(SchemaIssue::new("transition.effect", "effect is empty"));
            }
        }
    }

    match &trace.state_1 {
        None => {
            errors.insert(SchemaIssue::new("state_1", "missing required key"));
        }
        Some(s1) => {
            if s1.predicted_change.is_empty() {
                errors.insert(SchemaIssue::new(
                    "state_1.predicted_change",
                    "predicted_change is empty",
                ));
            }
            for (key, value) in &s1.new_variables {
                if super::value_as_f64(value).is_none() {
                    errors.insert(SchemaIssue::new(
                        format!("state_1.new_variables.{key}"),
                        "variable value is not numeric",
                    ));
                }
            }
        }
    }

    match &trace.answer {
        None => {
            errors.insert(SchemaIssue::new("answer", "missing required key"));
        }
        Some(a) => {
            let empty = match &a.value {
                Value::Null => true,
                Value::String(s) => s.trim().is_empty(),
                _ => false,
            };
            if empty {
                errors.insert(SchemaIssue::new("answer.value", "answer value is empty"));
            }
        }
    }

    if trace.metadata.is_none() {
        errors.insert(SchemaIssue::new("metadata", "missing required key"));
    }
}

/// `/state_0/relations/0/type` -> `state_0.relations[0].type`
fn pointer_to_dotted(pointer: &str) -> String {
    let mut out = String::new();
    for part in pointer.split('/').filter(|p| !p.is_empty()) {
        if part.chars().all(|c| c.is_ascii_digit()) {
            out.push('[');
            out.push_str(part);
            out.push(']');
        } else {
            if !out.is_empty() {
                out.push('.');
            }
            out.push_str(part);
        }
    }
    out
}

/// File-level invariant: ids must be non-empty and unique.
pub fn check_unique_ids(traces: &[Trace]) -> Vec<SchemaIssue> {
    let mut seen = BTreeSet::new();
    let mut issues = Vec::new();
    for (i, t) in traces.iter().enumerate() {
        let id = t.id_str();
        if id.is_empty() {
            issues.push(SchemaIssue::new(format!("[{i}].id"), "id is empty"));
        } else if !seen.insert(id.to_string()) {
            issues.push(SchemaIssue::new(
                format!("[{i}].id"),
                format!("duplicate id '{id}'"),
            ));
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::super::parse_trace;
    use super::*;

    fn gold_doc() -> String {
        serde_json::json!({
            "id": "wave-001",
            "scenario_family": "wave",
            "state_0": {
                "objects": [{"name": "string", "attributes": {}}, {"name": "oscillator"}],
                "relations": [{"type": "attached", "args": ["string", "wall"]}],
                "forces": [],
                "variables": {"frequency": 2.0, "wavelength": 3.0},
                "assumptions": ["the medium is uniform"]
            },
            "transition": {
                "rule": "wave speed relation",
                "effect": "the disturbance propagates along the string",
                "equation": "wave_speed = frequency * wavelength",
                "evidence": ["driven at a fixed frequency"]
            },
            "state_1": {"predicted_change": "crests travel down the string", "new_variables": {"wave_speed": 6.0}},
            "derivation": "wave_speed = 2.0 * 3.0 = 6.0 m/s.",
            "answer": {"value": 6.0, "unit": "m/s", "explanation": "wave_speed = 6 m/s"},
            "metadata": {
                "gold_answer": {"value": 6.0, "unit": "m/s"},
                "gold_variables": {"frequency": 2.0, "wavelength": 3.0},
                "parameter_keys": ["frequency", "wavelength", "wave_speed"],
                "source": "synthetic",
                "question": "What is the wave_speed?"
            }
        })
        .to_string()
    }

    #[test]
    fn complete_gold_trace_is_valid_in_both_modes() {
        let trace = parse_trace(&gold_doc()).unwrap();
        let strict = validate_schema(&trace, true);
        assert!(strict.valid, "strict errors: {:?}", strict.errors);
        assert!(validate_schema(&trace, false).valid);
    }

    #[test]
    fn missing_transition_reports_its_path() {
        let mut trace = parse_trace(&gold_doc()).unwrap();
        trace.transition = None;
        let report = validate_schema(&trace, false);
        assert!(!report.valid);
        assert!(report.errors.iter().any(|e| e.path == "transition"));
    }

    #[test]
    fn unknown_relation_type_reports_indexed_path() {
        // Oracle: membership in the fixed 14-type vocabulary.
        assert!(!RELATION_TYPES.contains(&"hovering"));
        let mut trace = parse_trace(&gold_doc()).unwrap();
        trace.state_0.as_mut().unwrap().relations[0].rel_type = "hovering".to_string();
        for strict in [false, true] {
            let report = validate_schema(&trace, strict);
            assert!(!report.valid);
            assert!(
                report
                    .errors
                    .iter()
                    .any(|e| e.path == "state_0.relations[0].type"),
                "errors: {:?}",
                report.errors
            );
        }
    }

    #[test]
    fn strict_pass_implies_lenient_pass() {
        let trace = parse_trace(&gold_doc()).unwrap();
        if validate_schema(&trace, true).valid {
            assert!(validate_schema(&trace, false).valid);
        }
    }

    #[test]
    fn strict_mode_requires_parameter_keys() {
        let mut trace = parse_trace(&gold_doc()).unwrap();
        trace.metadata.as_mut().unwrap().parameter_keys.clear();
        assert!(validate_schema(&trace, false).valid);
        assert!(!validate_schema(&trace, true).valid);
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let a = parse_trace(&gold_doc()).unwrap();
        let b = a.clone();
        let issues = check_unique_ids(&[a, b]);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("duplicate"));
    }
}

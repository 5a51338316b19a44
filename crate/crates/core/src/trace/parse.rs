//! Lenient extraction of a trace object from raw model text.
//!
//! Model replies arrive with markdown fences, preambles, or trailing chatter.
//! We extract the first balanced top-level JSON object, canonicalize field
//! aliases and unit spellings, then deserialize into [`Trace`].

use super::Trace;
use crate::units;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in document")]
    NoObjectFound,
    #[error("JSON object starting at byte {start} is never closed")]
    Truncated { start: usize },
    #[error("malformed JSON near byte {position}: {message}")]
    Malformed { position: usize, message: String },
}

/// Field-name aliases folded during canonicalization (alias -> canonical).
/// Applied only when the canonical key is absent. Published in
/// docs/canonicalization.md.
const TOP_LEVEL_ALIASES: &[(&str, &str)] = &[
    ("state0", "state_0"),
    ("s0", "state_0"),
    ("initial_state", "state_0"),
    ("state1", "state_1"),
    ("s1", "state_1"),
    ("resulting_state", "state_1"),
    ("delta_s", "transition"),
    ("family", "scenario_family"),
];

const RELATION_ALIASES: &[(&str, &str)] = &[("arguments", "args"), ("entities", "args")];
const FORCE_ALIASES: &[(&str, &str)] = &[("object", "target"), ("applied_to", "target")];

/// Parse a raw text document into a [`Trace`].
pub fn parse_trace(document: &str) -> Result<Trace, ParseError> {
    let body = strip_fences(document);
    let (start, span) = match balanced_object_span(body) {
        SpanResult::Found(start, end) => (start, &body[start..end]),
        SpanResult::Unbalanced(start) => return Err(ParseError::Truncated { start }),
        SpanResult::NoObject => return Err(ParseError::NoObjectFound),
    };
    let mut value: Value = serde_json::from_str(span).map_err(|e| ParseError::Malformed {
        position: start + e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    if !value.is_object() {
        return Err(ParseError::Malformed {
            position: start,
            message: "top-level JSON value is not an object".to_string(),
        });
    }
    canonicalize_value(&mut value);
    serde_json::from_value(value).map_err(|e| ParseError::Malformed {
        position: start,
        message: e.to_string(),
    })
}

/// Canonical single-line serialization used for JSONL files and round-trip
/// checks. Map keys are sorted by construction (`BTreeMap`), so equal traces
/// serialize to identical bytes.
pub fn to_canonical_json(trace: &Trace) -> String {
    serde_json::to_string(trace).expect("trace serialization cannot fail")
}

/// If the document carries markdown code fences, narrow to the first fenced
/// block that contains an opening brace.
fn strip_fences(document: &str) -> &str {
    let mut rest = document;
    let mut offset = 0;
    while let Some(open) = rest[offset..].find("```") {
        let content_start = match rest[offset + open + 3..].find('\n') {
            Some(nl) => offset + open + 3 + nl + 1,
            None => return document,
        };
        match rest[content_start..].find("```") {
            Some(close) => {
                let block = &rest[content_start..content_start + close];
                if block.contains('{') {
                    return block;
                }
                offset = content_start + close + 3;
            }
            None => {
                // Unterminated fence: fall through to scanning the whole text.
                rest = document;
                break;
            }
        }
    }
    rest
}

enum SpanResult {
    Found(usize, usize),
    Unbalanced(usize),
    NoObject,
}

/// Locate the first balanced `{ ... }` span, string- and escape-aware.
fn balanced_object_span(text: &str) -> SpanResult {
    let bytes = text.as_bytes();
    let start = match bytes.iter().position(|&b| b == b'{') {
        Some(i) => i,
        None => return SpanResult::NoObject,
    };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return SpanResult::Found(start, i + 1);
                }
            }
            _ => {}
        }
    }
    SpanResult::Unbalanced(start)
}

/// Canonicalize a raw trace object in place: fold field-name aliases,
/// fold stray scalar keys on objects into `attributes`, and normalize unit
/// spellings. Idempotent.
pub fn canonicalize_value(value: &mut Value) {
    let Some(top) = value.as_object_mut() else {
        return;
    };
    rename_aliases(top, TOP_LEVEL_ALIASES);

    if let Some(state0) = top.get_mut("state_0").and_then(Value::as_object_mut) {
        if let Some(objects) = state0.get_mut("objects").and_then(Value::as_array_mut) {
            for obj in objects.iter_mut() {
                fold_object_scalars(obj);
            }
        }
        if let Some(relations) = state0.get_mut("relations").and_then(Value::as_array_mut) {
            for rel in relations.iter_mut() {
                if let Some(map) = rel.as_object_mut() {
                    rename_aliases(map, RELATION_ALIASES);
                }
            }
        }
        if let Some(forces) = state0.get_mut("forces").and_then(Value::as_array_mut) {
            for force in forces.iter_mut() {
                if let Some(map) = force.as_object_mut() {
                    rename_aliases(map, FORCE_ALIASES);
                }
            }
        }
    }
    normalize_unit_fields(value);
}

fn rename_aliases(map: &mut serde_json::Map<String, Value>, aliases: &[(&str, &str)]) {
    for (alias, canonical) in aliases {
        if map.contains_key(*alias) && !map.contains_key(*canonical) {
            if let Some(v) = map.remove(*alias) {
                map.insert((*canonical).to_string(), v);
            }
        }
    }
}

/// `{"name": "block", "mass": 2.0}` -> `{"name": "block", "attributes": {"mass": 2.0}}`
fn fold_object_scalars(obj: &mut Value) {
    let Some(map) = obj.as_object_mut() else {
        return;
    };
    let stray: Vec<String> = map
        .keys()
        .filter(|k| k.as_str() != "name" && k.as_str() != "attributes")
        .cloned()
        .collect();
    if stray.is_empty() {
        return;
    }
    let mut attrs = match map.remove("attributes") {
        Some(Value::Object(m)) => m,
        Some(other) => {
            map.insert("attributes".to_string(), other);
            return;
        }
        None => serde_json::Map::new(),
    };
    for key in stray {
        if let Some(v) = map.remove(&key) {
            attrs.entry(key).or_insert(v);
        }
    }
    map.insert("attributes".to_string(), Value::Object(attrs));
}

/// Normalize every string field named "unit" anywhere in the document.
fn normalize_unit_fields(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if k == "unit" {
                    if let Value::String(s) = v {
                        *s = units::canonical_spelling(s);
                    }
                } else {
                    normalize_unit_fields(v);
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                normalize_unit_fields(item);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_doc() -> String {
        json!({
            "id": "t1",
            "scenario_family": "wave",
            "state_0": {
                "objects": [{"name": "string", "attributes": {"length": 2.0}}],
                "relations": [{"type": "attached", "args": ["string", "wall"]}],
                "forces": [],
                "variables": {"frequency": 2.0, "wavelength": 3.0},
                "assumptions": ["ideal medium"]
            },
            "transition": {"rule": "wave speed", "effect": "propagates", "evidence": []},
            "state_1": {"predicted_change": "travels", "new_variables": {"wave_speed": 6.0}},
            "answer": {"value": 6.0, "unit": "m/s"},
            "metadata": {"parameter_keys": ["frequency"], "source": "synthetic"}
        })
        .to_string()
    }

    #[test]
    fn round_trips_a_serialized_trace() {
        let trace = parse_trace(&sample_doc()).unwrap();
        let once = to_canonical_json(&trace);
        let twice = to_canonical_json(&parse_trace(&once).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn fenced_document_parses_identically() {
        let plain = parse_trace(&sample_doc()).unwrap();
        let fenced = format!("Here is my trace:\n```json\n{}\n```\nDone.", sample_doc());
        assert_eq!(parse_trace(&fenced).unwrap(), plain);
    }

    #[test]
    fn prose_without_object_is_no_object_found() {
        // Oracle: the text contains no balanced { ... } span at all.
        assert!(!"The answer is B".contains('{'));
        assert_eq!(parse_trace("The answer is B"), Err(ParseError::NoObjectFound));
    }

    #[test]
    fn unclosed_object_is_truncated() {
        let err = parse_trace("{\"answer\": {\"value\": \"B\"").unwrap_err();
        assert!(matches!(err, ParseError::Truncated { .. }));
    }

    #[test]
    fn invalid_json_in_balanced_span_is_malformed() {
        let err = parse_trace("{not json}").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { .. }));
    }

    #[test]
    fn aliases_and_units_are_canonicalized() {
        let doc = json!({
            "id": "t2",
            "state0": {"objects": [{"name": "block", "mass": 2.0}], "variables": {}},
            "answer": {"value": 4.9, "unit": "m/s^2"}
        })
        .to_string();
        let trace = parse_trace(&doc).unwrap();
        let s0 = trace.state_0.as_ref().unwrap();
        assert_eq!(s0.objects[0].attributes["mass"], json!(2.0));
        assert_eq!(trace.answer.as_ref().unwrap().unit.as_deref(), Some("m/s²"));
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let mut v: Value = serde_json::from_str(&sample_doc()).unwrap();
        canonicalize_value(&mut v);
        let once = v.clone();
        canonicalize_value(&mut v);
        assert_eq!(v, once);
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_the_scanner() {
        let doc = r#"{"id": "t3", "derivation": "set {x} to \"}\" carefully"}"#;
        let trace = parse_trace(doc).unwrap();
        assert_eq!(trace.id.as_deref(), Some("t3"));
    }
}

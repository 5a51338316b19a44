//! Answer normalization by answer type, and tolerant equality.

use super::Answer;
use crate::units;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    MultipleChoice,
    Numeric,
    Symbolic,
    UnitBearing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormalizedAnswer {
    Choice { letter: String },
    Number { value: f64, unit: Option<String> },
    Symbolic { text: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum NormalizationError {
    #[error("unparseable number: '{0}'")]
    UnparseableNumber(String),
    #[error("unknown unit: '{0}'")]
    UnknownUnit(String),
    #[error("no choice letter in: '{0}'")]
    UnparseableChoice(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("answers have different types")]
    TypeMismatch,
}

/// Normalize an answer according to its declared type:
/// choice letters upper-cased and bare, numbers parsed with units converted
/// to the canonical unit of their dimension, symbolic strings
/// whitespace-normalized.
pub fn normalize_answer(
    answer: &Answer,
    answer_type: AnswerType,
) -> Result<NormalizedAnswer, NormalizationError> {
    match answer_type {
        AnswerType::MultipleChoice => normalize_choice(&answer.value_text()),
        AnswerType::Numeric | AnswerType::UnitBearing => normalize_numeric(answer),
        AnswerType::Symbolic => Ok(NormalizedAnswer::Symbolic {
            text: collapse_whitespace(&answer.value_text()),
        }),
    }
}

fn normalize_choice(raw: &str) -> Result<NormalizedAnswer, NormalizationError> {
    let mut text = raw.trim().to_ascii_lowercase();
    for prefix in ["option", "choice", "answer"] {
        if let Some(rest) = text.strip_prefix(prefix) {
            text = rest.trim_start_matches([':', ' ']).to_string();
        }
    }
    match text.chars().find(|c| c.is_ascii_alphabetic()) {
        Some(letter) => Ok(NormalizedAnswer::Choice {
            letter: letter.to_ascii_uppercase().to_string(),
        }),
        None => Err(NormalizationError::UnparseableChoice(raw.to_string())),
    }
}

fn normalize_numeric(answer: &Answer) -> Result<NormalizedAnswer, NormalizationError> {
    let (value, unit_text) = match &answer.value {
        Value::Number(n) => (
            n.as_f64()
                .ok_or_else(|| NormalizationError::UnparseableNumber(n.to_string()))?,
            answer.unit.clone(),
        ),
        Value::String(s) => {
            let (v, embedded) = split_number_unit(s)?;
            (v, answer.unit.clone().or(embedded))
        }
        other => return Err(NormalizationError::UnparseableNumber(other.to_string())),
    };
    match unit_text {
        None => Ok(NormalizedAnswer::Number { value, unit: None }),
        Some(u) if u.trim().is_empty() => Ok(NormalizedAnswer::Number { value, unit: None }),
        Some(u) => {
            let (converted, canonical) = units::convert_to_canonical(value, &u)
                .ok_or_else(|| NormalizationError::UnknownUnit(u.clone()))?;
            Ok(NormalizedAnswer::Number {
                value: converted,
                unit: Some(canonical.to_string()),
            })
        }
    }
}

/// "490 cm/s²" -> (490.0, Some("cm/s²")); "4.90" -> (4.9, None)
fn split_number_unit(text: &str) -> Result<(f64, Option<String>), NormalizationError> {
    let trimmed = text.trim().replace(',', "");
    let boundary = trimmed
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        .map(|(i, c)| i + c.len_utf8())
        .last()
        .unwrap_or(0);
    let (num, rest) = trimmed.split_at(boundary);
    let value = num
        .parse::<f64>()
        .map_err(|_| NormalizationError::UnparseableNumber(text.to_string()))?;
    let unit = rest.trim();
    Ok((
        value,
        if unit.is_empty() {
            None
        } else {
            Some(unit.to_string())
        },
    ))
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Equality per answer type: exact match for choices and symbols; numbers
/// compared under 1% relative tolerance (1e-9 absolute around zero).
/// Symmetric by construction.
pub fn answers_equal(a: &NormalizedAnswer, b: &NormalizedAnswer) -> Result<bool, CompareError> {
    match (a, b) {
        (NormalizedAnswer::Choice { letter: la }, NormalizedAnswer::Choice { letter: lb }) => {
            Ok(la == lb)
        }
        (NormalizedAnswer::Symbolic { text: ta }, NormalizedAnswer::Symbolic { text: tb }) => {
            Ok(ta == tb)
        }
        (
            NormalizedAnswer::Number { value: va, unit: ua },
            NormalizedAnswer::Number { value: vb, unit: ub },
        ) => {
            // A bare number is comparable to a unit-bearing one (the bare side
            // is taken as already canonical); different canonical units never
            // compare equal.
            if let (Some(ua), Some(ub)) = (ua, ub) {
                if ua != ub {
                    return Ok(false);
                }
            }
            Ok(numbers_close(*va, *vb))
        }
        _ => Err(CompareError::TypeMismatch),
    }
}

fn numbers_close(a: f64, b: f64) -> bool {
    if a == 0.0 || b == 0.0 {
        return (a - b).abs() <= 1e-9;
    }
    (a - b).abs() <= 0.01 * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn answer(value: Value, unit: Option<&str>) -> Answer {
        Answer {
            value,
            unit: unit.map(str::to_string),
            explanation: None,
        }
    }

    #[test]
    fn parenthesized_choice_normalizes_bare_uppercase() {
        let got = normalize_answer(&answer(json!("(c)"), None), AnswerType::MultipleChoice);
        assert_eq!(got, Ok(NormalizedAnswer::Choice { letter: "C".into() }));
    }

    #[test]
    fn unit_bearing_converts_to_canonical() {
        // Hand conversion: 490 cm/s² = 490/100 = 4.9 m/s².
        let got =
            normalize_answer(&answer(json!("490 cm/s²"), None), AnswerType::UnitBearing).unwrap();
        match got {
            NormalizedAnswer::Number { value, unit } => {
                assert!((value - 4.9).abs() < 1e-12);
                assert_eq!(unit.as_deref(), Some("m/s²"));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn numeric_string_matches_gold_within_tolerance() {
        let a = normalize_answer(&answer(json!("4.90"), None), AnswerType::Numeric).unwrap();
        let b = normalize_answer(&answer(json!(4.9), None), AnswerType::Numeric).unwrap();
        assert_eq!(answers_equal(&a, &b), Ok(true));
    }

    #[test]
    fn one_percent_relative_tolerance() {
        // |4.94 - 4.9| / 4.9 = 0.82% < 1%
        let a = NormalizedAnswer::Number { value: 4.9, unit: None };
        let b = NormalizedAnswer::Number { value: 4.94, unit: None };
        assert_eq!(answers_equal(&a, &b), Ok(true));
        let c = NormalizedAnswer::Number { value: 5.1, unit: None };
        assert_eq!(answers_equal(&a, &c), Ok(false));
    }

    #[test]
    fn different_choices_are_unequal() {
        let b = NormalizedAnswer::Choice { letter: "B".into() };
        let c = NormalizedAnswer::Choice { letter: "C".into() };
        assert_eq!(answers_equal(&b, &c), Ok(false));
        assert_eq!(answers_equal(&b, &b), Ok(true));
    }

    #[test]
    fn mixed_types_are_a_type_mismatch() {
        let b = NormalizedAnswer::Choice { letter: "B".into() };
        let n = NormalizedAnswer::Number { value: 1.0, unit: None };
        assert_eq!(answers_equal(&b, &n), Err(CompareError::TypeMismatch));
    }

    #[test]
    fn unknown_unit_is_an_error() {
        let got = normalize_answer(&answer(json!("3 parsec"), None), AnswerType::UnitBearing);
        assert_eq!(got, Err(NormalizationError::UnknownUnit("parsec".into())));
    }

    #[test]
    fn unparseable_number_is_an_error() {
        let got = normalize_answer(&answer(json!("lots"), None), AnswerType::Numeric);
        assert!(matches!(got, Err(NormalizationError::UnparseableNumber(_))));
    }

    #[test]
    fn normalization_is_idempotent() {
        let first =
            normalize_answer(&answer(json!("490 cm/s²"), None), AnswerType::UnitBearing).unwrap();
        let NormalizedAnswer::Number { value, unit } = first.clone() else {
            panic!()
        };
        let again = normalize_answer(
            &answer(json!(value), unit.as_deref()),
            AnswerType::UnitBearing,
        )
        .unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn symbolic_whitespace_is_collapsed() {
        let got = normalize_answer(
            &answer(json!("  v =  f * lambda "), None),
            AnswerType::Symbolic,
        );
        assert_eq!(
            got,
            Ok(NormalizedAnswer::Symbolic { text: "v = f * lambda".into() })
        );
    }
}

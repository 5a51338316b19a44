//! The hybrid verifier: schema, state, and transition stages run in order,
//! with typed failure labels, abstention, and an optional judge ensemble.
//!
//! Every check is a pure function of the trace and (optional) gold metadata.
//! A schema failure skips the deeper stages rather than guessing.

use crate::trace::{
    close_to_gold, numeric_entries, value_as_f64, validate_schema, Family, Metadata, State0,
    Trace, CONTRADICTORY_RELATION_PAIRS, GENERIC_ENTITY_TERMS,
};
use crate::units;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Abstain,
}

/// The nine-label failure taxonomy shared by the verifier and the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Object,
    State,
    Relation,
    Force,
    Transition,
    Intervention,
    Temporal,
    UnitScale,
    Faithfulness,
}

impl Label {
    pub const ALL: [Label; 9] = [
        Label::Object,
        Label::State,
        Label::Relation,
        Label::Force,
        Label::Transition,
        Label::Intervention,
        Label::Temporal,
        Label::UnitScale,
        Label::Faithfulness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Object => "object",
            Label::State => "state",
            Label::Relation => "relation",
            Label::Force => "force",
            Label::Transition => "transition",
            Label::Intervention => "intervention",
            Label::Temporal => "temporal",
            Label::UnitScale => "unit_scale",
            Label::Faithfulness => "faithfulness",
        }
    }
}

/// Identifies which concrete check produced a finding; used by the audit
/// pre-screen to measure per-category detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Schema,
    EntityExistence,
    ContradictoryRelations,
    VariableBounds,
    ForceDirection,
    GoldVariables,
    RuleKeywords,
    ForceAccelSign,
    EffectResultSign,
    TemporalMarkers,
    EquationSanity,
    AnswerTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub z_schema: Verdict,
    pub z_state: Verdict,
    pub z_trans: Verdict,
    pub z_ans: Verdict,
    pub z_faith: Verdict,
    pub labels: BTreeSet<Label>,
    pub messages: Vec<String>,
    pub abstain_reasons: Vec<String>,
    pub failed_checks: BTreeSet<CheckId>,
}

impl Default for VerifierReport {
    fn default() -> Self {
        VerifierReport {
            z_schema: Verdict::Valid,
            z_state: Verdict::Valid,
            z_trans: Verdict::Valid,
            z_ans: Verdict::Valid,
            z_faith: Verdict::Valid,
            labels: BTreeSet::new(),
            messages: Vec::new(),
            abstain_reasons: Vec::new(),
            failed_checks: BTreeSet::new(),
        }
    }
}

impl VerifierReport {
    /// All of state, transition, and faithfulness valid.
    pub fn trace_valid(&self) -> bool {
        self.z_state == Verdict::Valid
            && self.z_trans == Verdict::Valid
            && self.z_faith == Verdict::Valid
    }

    pub fn has_abstention(&self) -> bool {
        !self.abstain_reasons.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// Structured verdict from an external judge model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    #[serde(default)]
    pub labels: BTreeSet<Label>,
    #[serde(default)]
    pub field_errors: BTreeMap<String, String>,
    #[serde(default = "default_true")]
    pub answer_trace_consistent: bool,
    pub confidence: Confidence,
    #[serde(default)]
    pub rationale: String,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
struct BoundRule {
    name: String,
    patterns: Vec<String>,
    min: f64,
    max: f64,
    min_exclusive: bool,
}

const VARIABLE_BOUNDS_JSON: &str = include_str!("../../../data/variable_bounds.json");
const RULE_KEYWORDS_JSON: &str = include_str!("../../../data/rule_keywords.json");

/// Post-transition language that must not appear in `state_0`.
const S0_TEMPORAL_MARKERS: [&str; 5] = [
    "post-collision",
    "after the collision",
    "final state",
    "post-transition",
    "post-impact",
];

/// Pre-transition language that must not appear in `state_1`.
const S1_TEMPORAL_MARKERS: [&str; 3] = ["pre-collision", "before the collision", "initial state"];

/// Tokens the contrastive perturbation engine injects; their presence in an
/// equation marks a corrupted trace.
const EQUATION_MARKERS: [&str; 3] = ["[perturbed]", "<<", ">>"];

const POSITIVE_DIRECTION_TERMS: [&str; 6] =
    ["right", "rightward", "upward", "forward", "increases", "accelerates"];
const NEGATIVE_DIRECTION_TERMS: [&str; 6] =
    ["left", "leftward", "downward", "backward", "decreases", "decelerates"];

/// Terms that, when present in the question, require a matching assumption;
/// otherwise the transition verdict abstains.
const ASSUMPTION_TERMS: [&str; 3] = ["friction", "elastic", "air resistance"];

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    /// Validate gold documents against the Draft 7 schema; model output uses
    /// the manual field-presence checks only.
    pub strict_schema: bool,
    pub rule_keywords: BTreeMap<String, Vec<String>>,
    bounds: Vec<BoundRule>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            strict_schema: false,
            rule_keywords: serde_json::from_str(RULE_KEYWORDS_JSON)
                .expect("rule keyword table is valid JSON"),
            bounds: serde_json::from_str(VARIABLE_BOUNDS_JSON)
                .expect("variable bounds table is valid JSON"),
        }
    }
}

impl VerifierConfig {
    pub fn strict() -> Self {
        VerifierConfig {
            strict_schema: true,
            ..VerifierConfig::default()
        }
    }

    /// Replace the per-family rule keyword lists (policy, not code).
    pub fn with_rule_keywords(mut self, keywords: BTreeMap<String, Vec<String>>) -> Self {
        self.rule_keywords = keywords;
        self
    }

    pub fn keywords_for(&self, family: Family) -> &[String] {
        self.rule_keywords
            .get(family.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

struct StageFindings {
    invalid: bool,
    labels: BTreeSet<Label>,
    messages: Vec<String>,
    failed_checks: BTreeSet<CheckId>,
}

impl StageFindings {
    fn new() -> Self {
        StageFindings {
            invalid: false,
            labels: BTreeSet::new(),
            messages: Vec::new(),
            failed_checks: BTreeSet::new(),
        }
    }

    fn flag(&mut self, check: CheckId, label: Label, message: String) {
        self.invalid = true;
        self.labels.insert(label);
        self.messages.push(message);
        self.failed_checks.insert(check);
    }

    fn merge_into(self, report: &mut VerifierReport) -> Verdict {
        report.labels.extend(self.labels);
        report.messages.extend(self.messages);
        report.failed_checks.extend(self.failed_checks);
        if self.invalid {
            Verdict::Invalid
        } else {
            Verdict::Valid
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Verifier {
    config: VerifierConfig,
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Verifier {
        Verifier { config }
    }

    /// Run the full three-stage pipeline.
    pub fn verify(&self, trace: &Trace, gold: Option<&Metadata>) -> VerifierReport {
        let mut report = VerifierReport::default();
        let schema = validate_schema(trace, self.config.strict_schema);
        if !schema.valid {
            report.z_schema = Verdict::Invalid;
            report.failed_checks.insert(CheckId::Schema);
            for issue in &schema.errors {
                report.messages.push(format!("schema: {}: {}", issue.path, issue.message));
            }
            report.z_state = Verdict::Abstain;
            report.z_trans = Verdict::Abstain;
            report.z_ans = Verdict::Abstain;
            report.z_faith = Verdict::Abstain;
            report
                .abstain_reasons
                .push("schema invalid; deeper checks skipped".to_string());
            return report;
        }

        let meta = gold.or(trace.metadata.as_ref());
        let state0 = trace.state_0.as_ref().expect("schema-valid trace has state_0");

        report.z_state = self.state_findings(state0, meta, &mut report.abstain_reasons)
            .merge_into(&mut report);

        let (trans, faith) = self.transition_findings(trace, meta, &mut report.abstain_reasons);
        report.z_trans = trans.merge_into(&mut report);
        report.z_faith = faith.merge_into(&mut report);

        // Abstain on under-specified examples unless a hard violation already
        // decided the verdict.
        if report.z_trans == Verdict::Valid {
            if let Some(reason) = underspecified_reason(meta, state0) {
                report.z_trans = Verdict::Abstain;
                report.abstain_reasons.push(reason);
            }
        }

        report.z_ans = self.answer_findings(trace, meta).merge_into(&mut report);
        report
    }

    /// The five state checks; returned as (verdict, labels, messages).
    pub fn check_state(
        &self,
        state0: &State0,
        gold: Option<&Metadata>,
    ) -> (Verdict, BTreeSet<Label>, Vec<String>) {
        let mut reasons = Vec::new();
        let findings = self.state_findings(state0, gold, &mut reasons);
        let verdict = if findings.invalid { Verdict::Invalid } else { Verdict::Valid };
        (verdict, findings.labels, findings.messages)
    }

    /// The six transition checks; the answer–trace check reports under the
    /// faithfulness verdict.
    pub fn check_transition(&self, trace: &Trace) -> (Verdict, BTreeSet<Label>, Vec<String>) {
        let mut reasons = Vec::new();
        let meta = trace.metadata.as_ref();
        let (mut trans, faith) = self.transition_findings(trace, meta, &mut reasons);
        trans.invalid = trans.invalid || faith.invalid;
        trans.labels.extend(faith.labels);
        trans.messages.extend(faith.messages);
        let verdict = if trans.invalid { Verdict::Invalid } else { Verdict::Valid };
        (verdict, trans.labels, trans.messages)
    }

    fn state_findings(
        &self,
        state0: &State0,
        gold: Option<&Metadata>,
        abstain_reasons: &mut Vec<String>,
    ) -> StageFindings {
        let mut f = StageFindings::new();

        // 1. Entity existence: force targets and relation args must resolve.
        let object_names: Vec<String> = state0
            .objects
            .iter()
            .map(|o| o.name.to_lowercase())
            .collect();
        for (i, force) in state0.forces.iter().enumerate() {
            if !force.target.is_empty() && !entity_resolves(&force.target, &object_names) {
                f.flag(
                    CheckId::EntityExistence,
                    Label::Object,
                    format!(
                        "force[{i}] '{}' targets '{}', which is not in the objects list",
                        force.name, force.target
                    ),
                );
            }
        }
        for (i, rel) in state0.relations.iter().enumerate() {
            for arg in &rel.args {
                if !arg.is_empty() && !entity_resolves(arg, &object_names) {
                    f.flag(
                        CheckId::EntityExistence,
                        Label::Object,
                        format!(
                            "relation[{i}] '{}' references '{arg}', which is not in the objects list",
                            rel.rel_type
                        ),
                    );
                }
            }
        }

        // 2. Contradictory relations on the same ordered args.
        let mut by_args: BTreeMap<&[String], BTreeSet<&str>> = BTreeMap::new();
        for rel in &state0.relations {
            by_args
                .entry(rel.args.as_slice())
                .or_default()
                .insert(rel.rel_type.as_str());
        }
        for (args, types) in &by_args {
            for (a, b) in CONTRADICTORY_RELATION_PAIRS {
                if types.contains(a) && types.contains(b) {
                    f.flag(
                        CheckId::ContradictoryRelations,
                        Label::Relation,
                        format!("contradictory relations '{a}' and '{b}' on {args:?}"),
                    );
                }
            }
        }

        // 3. Variable bounds via the 20 name-pattern rules.
        for (key, value) in numeric_entries(&state0.variables) {
            if let Some(rule) = self.matching_bound(key) {
                let below = if rule.min_exclusive { value <= rule.min } else { value < rule.min };
                if below || value > rule.max {
                    f.flag(
                        CheckId::VariableBounds,
                        Label::State,
                        format!(
                            "state_0.variables.{key} = {value} outside plausible {} range [{}, {}]",
                            rule.name, rule.min, rule.max
                        ),
                    );
                }
            }
        }

        // 4. Force direction sanity.
        for (i, force) in state0.forces.iter().enumerate() {
            let name = force.name.to_lowercase();
            let dir = force.direction.to_lowercase();
            if name.contains("gravity") || name.contains("weight") {
                if !dir.contains("down") {
                    f.flag(
                        CheckId::ForceDirection,
                        Label::Force,
                        format!(
                            "force[{i}] '{}' has unexpected direction: '{}'",
                            force.name, force.direction
                        ),
                    );
                }
            } else if name.contains("normal") && (dir.contains("down") || dir.contains("into")) {
                f.flag(
                    CheckId::ForceDirection,
                    Label::Force,
                    format!(
                        "force[{i}] '{}' points into the surface: '{}'",
                        force.name, force.direction
                    ),
                );
            }
        }

        // 5. Gold variable comparison at 1% relative tolerance.
        match gold.and_then(|m| m.gold_variables.as_ref()) {
            Some(gold_vars) => {
                for (key, gold_value) in gold_vars {
                    if let Some(value) = state0.variables.get(key).and_then(value_as_f64) {
                        if !close_to_gold(value, *gold_value) {
                            f.flag(
                                CheckId::GoldVariables,
                                Label::State,
                                format!(
                                    "state_0.variables.{key} = {value} deviates from gold {gold_value} by more than 1%"
                                ),
                            );
                        }
                    }
                }
            }
            None => abstain_reasons
                .push("gold variables unavailable; gold comparison skipped".to_string()),
        }
        f
    }

    fn transition_findings(
        &self,
        trace: &Trace,
        meta: Option<&Metadata>,
        abstain_reasons: &mut Vec<String>,
    ) -> (StageFindings, StageFindings) {
        let mut f = StageFindings::new();
        let transition = trace.transition.as_ref().expect("schema-valid trace");
        let state0 = trace.state_0.as_ref().expect("schema-valid trace");
        let state1 = trace.state_1.as_ref().expect("schema-valid trace");

        // 1. Rule keyword plausibility per family.
        if let Some(family) = trace.family() {
            let keywords = self.config.keywords_for(family);
            if !keywords.is_empty() {
                let rule = transition.rule.to_lowercase();
                if !keywords.iter().any(|k| rule.contains(k)) {
                    f.flag(
                        CheckId::RuleKeywords,
                        Label::Transition,
                        format!(
                            "transition rule '{}' mentions none of the expected {} keywords",
                            transition.rule, family
                        ),
                    );
                }
            }
        }

        // 2. Force–acceleration sign agreement.
        let effect_sign = extract_direction_sign(&transition.effect);
        let net_force = state0.forces.iter().find(|force| {
            let name = force.name.to_lowercase();
            name.contains("net") || name.contains("applied")
        });
        if let Some(force) = net_force {
            if let (Some(fs), Some(es)) = (extract_direction_sign(&force.direction), effect_sign) {
                if fs != es {
                    f.flag(
                        CheckId::ForceAccelSign,
                        Label::Transition,
                        format!(
                            "net force sign ({fs}) disagrees with transition effect sign ({es})"
                        ),
                    );
                }
            }
        }

        // 3. Transition effect vs predicted change sign agreement.
        if let (Some(es), Some(ps)) =
            (effect_sign, extract_direction_sign(&state1.predicted_change))
        {
            if es != ps {
                f.flag(
                    CheckId::EffectResultSign,
                    Label::Intervention,
                    format!(
                        "transition effect sign ({es}) disagrees with predicted_change sign ({ps})"
                    ),
                );
            }
        }

        // 4. Temporal markers: post-transition language in s0, pre-transition in s1.
        let s0_text = serde_json::to_string(state0).unwrap_or_default().to_lowercase();
        for marker in S0_TEMPORAL_MARKERS {
            if s0_text.contains(marker) {
                f.flag(
                    CheckId::TemporalMarkers,
                    Label::Temporal,
                    format!("state_0 contains post-transition language: '{marker}'"),
                );
            }
        }
        let s1_text = serde_json::to_string(state1).unwrap_or_default().to_lowercase();
        for marker in S1_TEMPORAL_MARKERS {
            if s1_text.contains(marker) {
                f.flag(
                    CheckId::TemporalMarkers,
                    Label::Temporal,
                    format!("state_1 contains pre-transition language: '{marker}'"),
                );
            }
        }

        // 5. Equation sanity.
        if let Some(equation) = &transition.equation {
            if !parens_balanced(equation) {
                f.flag(
                    CheckId::EquationSanity,
                    Label::Transition,
                    format!("equation has unbalanced parentheses: '{equation}'"),
                );
            }
            let lower = equation.to_lowercase();
            for marker in EQUATION_MARKERS {
                if lower.contains(marker) {
                    f.flag(
                        CheckId::EquationSanity,
                        Label::Transition,
                        format!("equation contains perturbation marker '{marker}'"),
                    );
                }
            }
        }

        // 6. Answer–trace consistency, reported under the faithfulness verdict.
        let faith = self.answer_trace_findings(trace, meta, abstain_reasons);
        (f, faith)
    }

    fn answer_trace_findings(
        &self,
        trace: &Trace,
        meta: Option<&Metadata>,
        abstain_reasons: &mut Vec<String>,
    ) -> StageFindings {
        let mut f = StageFindings::new();
        let state1 = trace.state_1.as_ref().expect("schema-valid trace");
        let answer = trace.answer.as_ref().expect("schema-valid trace");

        let Some(raw_value) = answer.value_f64() else {
            abstain_reasons
                .push("answer is not numeric; answer–trace comparison skipped".to_string());
            return f;
        };
        let answer_value = match answer.unit.as_deref() {
            Some(unit) => match units::convert_to_canonical(raw_value, unit) {
                Some((v, _)) => v,
                None => raw_value,
            },
            None => raw_value,
        };
        let new_vars = numeric_entries(&state1.new_variables);
        if new_vars.is_empty() {
            abstain_reasons
                .push("state_1 has no numeric new_variables; answer–trace comparison skipped"
                    .to_string());
            return f;
        }

        // The requested quantity is by convention the last parameter key;
        // otherwise fall back to the variable with ratio closest to 1.
        let designated = meta
            .map(|m| m.parameter_keys.as_slice())
            .unwrap_or(&[])
            .last()
            .and_then(|key| new_vars.iter().find(|(k, _)| k == key).copied());
        let (key, target) = match designated {
            Some(hit) => hit,
            None => {
                let mut best = new_vars[0];
                let mut best_gap = f64::INFINITY;
                for (k, v) in &new_vars {
                    let gap = ratio_gap(answer_value, *v);
                    if gap < best_gap {
                        best_gap = gap;
                        best = (k, *v);
                    }
                }
                best
            }
        };

        if !numbers_close(answer_value, target) {
            let ratio = safe_ratio(answer_value, target);
            let mut message = format!(
                "answer value {answer_value} is inconsistent with state_1.new_variables.{key} = {target}"
            );
            if ratio > 100.0 || ratio < 0.01 {
                message.push_str(&format!(" (ratio {ratio:.3} exceeds the 100x faithfulness bound)"));
            }
            f.flag(CheckId::AnswerTrace, Label::Faithfulness, message);
        }
        f
    }

    fn answer_findings(&self, trace: &Trace, meta: Option<&Metadata>) -> StageFindings {
        use crate::trace::normalize_answer;
        let mut f = StageFindings::new();
        let answer = trace.answer.as_ref().expect("schema-valid trace");
        let answer_type = meta
            .and_then(|m| m.answer_type)
            .unwrap_or_else(|| infer_answer_type(answer));
        if let Err(err) = normalize_answer(answer, answer_type) {
            f.invalid = true;
            f.messages.push(format!("answer normalization failed: {err}"));
        }
        f
    }

    fn matching_bound(&self, key: &str) -> Option<&BoundRule> {
        let lower = key.to_lowercase();
        self.config
            .bounds
            .iter()
            .find(|rule| rule.patterns.iter().any(|p| lower.contains(p)))
    }
}

/// Convenience: verify with the default (lenient-schema) configuration.
pub fn verify(trace: &Trace, gold: Option<&Metadata>) -> VerifierReport {
    Verifier::new(VerifierConfig::default()).verify(trace, gold)
}

/// True when the key matches a bound rule whose floor is at or above zero
/// (so negating a positive value is guaranteed to violate it).
pub fn key_has_nonnegative_bound(key: &str) -> bool {
    use std::sync::LazyLock;
    static BOUNDS: LazyLock<Vec<BoundRule>> = LazyLock::new(|| {
        serde_json::from_str(VARIABLE_BOUNDS_JSON).expect("variable bounds table is valid JSON")
    });
    let lower = key.to_lowercase();
    BOUNDS
        .iter()
        .find(|rule| rule.patterns.iter().any(|p| lower.contains(p)))
        .map(|rule| rule.min >= 0.0)
        .unwrap_or(false)
}

fn infer_answer_type(answer: &crate::trace::Answer) -> crate::trace::AnswerType {
    use crate::trace::AnswerType;
    match &answer.value {
        serde_json::Value::Number(_) => {
            if answer.unit.is_some() {
                AnswerType::UnitBearing
            } else {
                AnswerType::Numeric
            }
        }
        serde_json::Value::String(s) => {
            let trimmed = s.trim();
            if trimmed.parse::<f64>().is_ok() {
                AnswerType::Numeric
            } else if trimmed.len() <= 3
                && trimmed.chars().filter(|c| c.is_ascii_alphabetic()).count() == 1
            {
                AnswerType::MultipleChoice
            } else {
                AnswerType::Symbolic
            }
        }
        _ => AnswerType::Symbolic,
    }
}

/// Case-insensitive containment either way, against objects or the generic
/// physics terms.
fn entity_resolves(name: &str, object_names: &[String]) -> bool {
    let lower = name.to_lowercase();
    object_names
        .iter()
        .map(String::as_str)
        .chain(GENERIC_ENTITY_TERMS)
        .any(|candidate| lower.contains(candidate) || candidate.contains(lower.as_str()))
}

/// Keyword direction extraction: +1 for the positive-direction terms, -1 for
/// the negative ones, `None` when neither or both families are present.
pub fn extract_direction_sign(text: &str) -> Option<i8> {
    let lower = text.to_lowercase();
    let tokens: BTreeSet<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let positive = POSITIVE_DIRECTION_TERMS.iter().any(|t| tokens.contains(t));
    let negative = NEGATIVE_DIRECTION_TERMS.iter().any(|t| tokens.contains(t));
    match (positive, negative) {
        (true, false) => Some(1),
        (false, true) => Some(-1),
        _ => None,
    }
}

fn parens_balanced(text: &str) -> bool {
    let mut depth = 0i64;
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

fn numbers_close(a: f64, b: f64) -> bool {
    if a == 0.0 || b == 0.0 {
        return (a - b).abs() <= 1e-9;
    }
    (a - b).abs() <= 0.01 * a.abs().max(b.abs())
}

fn safe_ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (a / b).abs()
    }
}

fn ratio_gap(a: f64, b: f64) -> f64 {
    let r = safe_ratio(a, b);
    if r == 0.0 || r.is_infinite() {
        f64::INFINITY
    } else {
        r.ln().abs()
    }
}

fn underspecified_reason(meta: Option<&Metadata>, state0: &State0) -> Option<String> {
    let question = meta.and_then(|m| m.question.as_deref())?.to_lowercase();
    let assumptions_text = state0.assumptions.join(" ").to_lowercase();
    for term in ASSUMPTION_TERMS {
        let related = term_satisfied(term, &assumptions_text);
        if question.contains(term) && !related {
            return Some(format!(
                "question mentions '{term}' but state_0 lists no matching assumption"
            ));
        }
    }
    None
}

fn term_satisfied(term: &str, assumptions_text: &str) -> bool {
    if assumptions_text.contains(term) {
        return true;
    }
    // "air resistance" is also satisfied by a drag assumption.
    term == "air resistance" && assumptions_text.contains("drag")
}

/// Merge the rule report with an optional judge verdict: labels are unioned
/// and a field is invalid if either component flags it. A low-confidence
/// judge contributes nothing.
pub fn ensemble(rule: &VerifierReport, judge: Option<&JudgeVerdict>) -> VerifierReport {
    let mut merged = rule.clone();
    let Some(judge) = judge else {
        return merged;
    };
    if judge.confidence == Confidence::Low {
        merged
            .abstain_reasons
            .push("judge verdict low-confidence; treated as abstention".to_string());
        return merged;
    }
    merged.labels.extend(judge.labels.iter().copied());
    for (field, error) in &judge.field_errors {
        let slot = if field.contains("state_0") || field.contains("state0") {
            Some(&mut merged.z_state)
        } else if field.contains("transition") || field.contains("state_1") {
            Some(&mut merged.z_trans)
        } else if field.contains("answer") {
            Some(&mut merged.z_ans)
        } else if field.contains("schema") {
            Some(&mut merged.z_schema)
        } else {
            None
        };
        if let Some(slot) = slot {
            *slot = Verdict::Invalid;
        }
        merged.messages.push(format!("judge: {field}: {error}"));
    }
    if !judge.answer_trace_consistent {
        merged.z_faith = Verdict::Invalid;
        merged
            .messages
            .push("judge: final answer inconsistent with the trace".to_string());
        merged.labels.insert(Label::Faithfulness);
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_trace, Answer};
    use serde_json::json;

    fn gold_incline() -> Trace {
        let doc = json!({
            "id": "inclined_plane-001",
            "scenario_family": "inclined_plane",
            "state_0": {
                "objects": [
                    {"name": "block", "attributes": {"motion": "at rest", "mass_kg": 2.0}},
                    {"name": "incline", "attributes": {}}
                ],
                "relations": [
                    {"type": "on", "args": ["block", "incline"]},
                    {"type": "above", "args": ["block", "incline"]}
                ],
                "forces": [
                    {"name": "gravity", "target": "block", "direction": "downward"},
                    {"name": "normal force", "target": "block",
                     "direction": "perpendicular to the incline, away from the surface"}
                ],
                "variables": {"theta": 30.0, "g": 9.8},
                "assumptions": ["the incline is frictionless", "air resistance is negligible"]
            },
            "transition": {
                "rule": "Newton's second law resolved along the incline",
                "effect": "the block accelerates down the incline",
                "equation": "acceleration = g * sin(theta)",
                "evidence": ["gravity component along the slope is unbalanced"]
            },
            "state_1": {
                "predicted_change": "the block slides down the slope; its speed increases from rest",
                "new_variables": {"acceleration": 4.9}
            },
            "derivation": "acceleration = 9.8 * sin(30 deg) = 4.9 m/s².",
            "answer": {"value": 4.9, "unit": "m/s²", "explanation": "acceleration = 4.9 m/s²"},
            "metadata": {
                "gold_answer": {"value": 4.9, "unit": "m/s²"},
                "gold_variables": {"theta": 30.0, "g": 9.8},
                "parameter_keys": ["theta", "g", "acceleration"],
                "source": "synthetic",
                "question": "A block rests on a frictionless incline with theta = 30 deg and g = 9.8 m/s². Ignore air resistance. What is the block's acceleration down the slope?",
                "answer_type": "unit_bearing"
            }
        });
        parse_trace(&doc.to_string()).unwrap()
    }

    #[test]
    fn gold_trace_verifies_clean() {
        let report = verify(&gold_incline(), None);
        assert_eq!(report.z_schema, Verdict::Valid);
        assert_eq!(report.z_state, Verdict::Valid);
        assert_eq!(report.z_trans, Verdict::Valid);
        assert_eq!(report.z_ans, Verdict::Valid);
        assert_eq!(report.z_faith, Verdict::Valid);
        assert!(report.labels.is_empty(), "labels: {:?}", report.labels);
        assert!(!report.has_abstention(), "reasons: {:?}", report.abstain_reasons);
    }

    #[test]
    fn schema_failure_skips_deeper_checks() {
        let mut trace = gold_incline();
        trace.transition = None;
        let report = verify(&trace, None);
        assert_eq!(report.z_schema, Verdict::Invalid);
        assert_eq!(report.z_state, Verdict::Abstain);
        assert_eq!(report.z_trans, Verdict::Abstain);
        assert_eq!(report.z_faith, Verdict::Abstain);
    }

    #[test]
    fn unknown_force_target_is_an_object_error() {
        let mut trace = gold_incline();
        trace.state_0.as_mut().unwrap().forces[0].target = "cart2".to_string();
        let report = verify(&trace, None);
        assert_eq!(report.z_state, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Object));
        assert!(report.failed_checks.contains(&CheckId::EntityExistence));
    }

    #[test]
    fn contradictory_relations_are_a_relation_error() {
        let mut trace = gold_incline();
        trace
            .state_0
            .as_mut()
            .unwrap()
            .relations
            .push(crate::trace::Relation::new("below", "block", "incline"));
        let report = verify(&trace, None);
        assert_eq!(report.z_state, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Relation));
    }

    #[test]
    fn impossible_temperature_is_a_state_error() {
        let mut trace = gold_incline();
        trace
            .state_0
            .as_mut()
            .unwrap()
            .variables
            .insert("temperature".to_string(), json!(-300.0));
        let report = verify(&trace, None);
        assert_eq!(report.z_state, Verdict::Invalid);
        assert!(report.labels.contains(&Label::State));
        assert!(report.failed_checks.contains(&CheckId::VariableBounds));
    }

    #[test]
    fn upward_gravity_is_a_force_error() {
        let mut trace = gold_incline();
        trace.state_0.as_mut().unwrap().forces[0].direction = "upward".to_string();
        let report = verify(&trace, None);
        assert_eq!(report.z_state, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Force));
        assert!(report
            .messages
            .iter()
            .any(|m| m.contains("unexpected direction")));
    }

    #[test]
    fn gold_variable_deviation_is_flagged() {
        let mut trace = gold_incline();
        trace
            .state_0
            .as_mut()
            .unwrap()
            .variables
            .insert("theta".to_string(), json!(45.0));
        let report = verify(&trace, None);
        assert_eq!(report.z_state, Verdict::Invalid);
        assert!(report.failed_checks.contains(&CheckId::GoldVariables));
    }

    #[test]
    fn net_force_and_effect_signs_must_agree() {
        let mut trace = gold_incline();
        trace.state_0.as_mut().unwrap().forces.push(crate::trace::Force {
            name: "net force".to_string(),
            target: "block".to_string(),
            direction: "rightward".to_string(),
            magnitude: None,
            unit: None,
        });
        trace.transition.as_mut().unwrap().effect = "the block accelerates leftward".to_string();
        // "accelerates" and "leftward" are both sign terms: pick an effect with one family.
        trace.transition.as_mut().unwrap().effect = "the block moves leftward".to_string();
        trace.state_1.as_mut().unwrap().predicted_change =
            "the block moves leftward at growing pace".to_string();
        let report = verify(&trace, None);
        assert_eq!(report.z_trans, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Transition));
        assert!(report.failed_checks.contains(&CheckId::ForceAccelSign));
    }

    #[test]
    fn effect_and_result_sign_disagreement_is_flagged() {
        let mut trace = gold_incline();
        trace.state_1.as_mut().unwrap().predicted_change =
            "the block slows; its speed decreases".to_string();
        let report = verify(&trace, None);
        assert_eq!(report.z_trans, Verdict::Invalid);
        assert!(report.failed_checks.contains(&CheckId::EffectResultSign));
        assert!(report.labels.contains(&Label::Intervention));
    }

    #[test]
    fn unbalanced_equation_is_flagged() {
        let mut trace = gold_incline();
        trace.transition.as_mut().unwrap().equation = Some("(m*g".to_string());
        let report = verify(&trace, None);
        assert_eq!(report.z_trans, Verdict::Invalid);
        assert!(report.failed_checks.contains(&CheckId::EquationSanity));
    }

    #[test]
    fn large_answer_ratio_is_a_faithfulness_error() {
        let mut trace = gold_incline();
        trace.answer.as_mut().unwrap().value = json!(500.0);
        let report = verify(&trace, None);
        assert_eq!(report.z_faith, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Faithfulness));
        assert!(report.messages.iter().any(|m| m.contains("100x")));
    }

    #[test]
    fn moderate_answer_mismatch_is_still_inconsistent() {
        let mut trace = gold_incline();
        trace.answer.as_mut().unwrap().value = json!(24.5); // 5x the trace value
        let report = verify(&trace, None);
        assert_eq!(report.z_faith, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Faithfulness));
    }

    #[test]
    fn post_collision_language_in_s0_is_temporal() {
        let mut trace = gold_incline();
        trace
            .state_0
            .as_mut()
            .unwrap()
            .assumptions
            .push("this is the post-collision configuration".to_string());
        let report = verify(&trace, None);
        assert_eq!(report.z_trans, Verdict::Invalid);
        assert!(report.labels.contains(&Label::Temporal));
    }

    #[test]
    fn missing_friction_assumption_causes_abstention() {
        let mut trace = gold_incline();
        trace.state_0.as_mut().unwrap().assumptions =
            vec!["air resistance is negligible".to_string()];
        let report = verify(&trace, None);
        assert_eq!(report.z_trans, Verdict::Abstain);
        assert!(report.abstain_reasons.iter().any(|r| r.contains("friction")));
    }

    #[test]
    fn direction_sign_extraction_matches_keyword_sets() {
        assert_eq!(extract_direction_sign("the cart accelerates rightward"), Some(1));
        assert_eq!(extract_direction_sign("velocity decreases"), Some(-1));
        assert_eq!(extract_direction_sign("increases then decreases"), None);
        assert_eq!(extract_direction_sign("stays put"), None);
        // substrings do not count: "downhill" is not "down*" keyword token
        assert_eq!(extract_direction_sign("rolls downhill"), None);
    }

    #[test]
    fn ensemble_is_never_more_permissive_than_rules() {
        let mut rule = VerifierReport::default();
        rule.z_state = Verdict::Invalid;
        rule.labels.insert(Label::State);
        let judge = JudgeVerdict {
            labels: BTreeSet::new(),
            field_errors: BTreeMap::new(),
            answer_trace_consistent: true,
            confidence: Confidence::High,
            rationale: "looks fine".to_string(),
        };
        let merged = ensemble(&rule, Some(&judge));
        assert_eq!(merged.z_state, Verdict::Invalid);
    }

    #[test]
    fn high_confidence_judge_labels_are_unioned() {
        let rule = VerifierReport::default();
        let mut field_errors = BTreeMap::new();
        field_errors.insert("state_0.relations".to_string(), "block is not on the incline".to_string());
        let judge = JudgeVerdict {
            labels: [Label::Relation].into_iter().collect(),
            field_errors,
            answer_trace_consistent: true,
            confidence: Confidence::High,
            rationale: "relation wrong".to_string(),
        };
        let merged = ensemble(&rule, Some(&judge));
        assert_eq!(merged.z_state, Verdict::Invalid);
        assert!(merged.labels.contains(&Label::Relation));
    }

    #[test]
    fn low_confidence_judge_is_an_abstention() {
        let rule = VerifierReport::default();
        let judge = JudgeVerdict {
            labels: [Label::Force].into_iter().collect(),
            field_errors: BTreeMap::new(),
            answer_trace_consistent: false,
            confidence: Confidence::Low,
            rationale: "unsure".to_string(),
        };
        let merged = ensemble(&rule, Some(&judge));
        assert_eq!(merged.z_faith, rule.z_faith);
        assert!(merged.labels.is_empty());
        assert!(merged.abstain_reasons.iter().any(|r| r.contains("low-confidence")));
    }

    #[test]
    fn gold_answer_passes_answer_trace_check_with_unit_conversion() {
        let mut trace = gold_incline();
        // Same quantity expressed in cm/s² must still match after conversion.
        trace.answer = Some(Answer {
            value: json!(490.0),
            unit: Some("cm/s²".to_string()),
            explanation: None,
        });
        let report = verify(&trace, None);
        assert_eq!(report.z_faith, Verdict::Valid);
    }
}

//! Verifier-guided selection among k sampled traces: a transparent additive
//! rule score, an optional judge score, and a majority-vote bonus.

use crate::trace::{answers_equal, normalize_answer, AnswerType, NormalizedAnswer, Trace};
use crate::verifier::{JudgeVerdict, Verdict, VerifierReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("no candidates to select from")]
    EmptyCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Rules,
    Learned,
    Majority,
}

impl RerankMode {
    pub fn parse(s: &str) -> Option<RerankMode> {
        match s {
            "rules" => Some(RerankMode::Rules),
            "learned" => Some(RerankMode::Learned),
            "majority" => Some(RerankMode::Majority),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub trace: Trace,
    pub report: VerifierReport,
    pub judge: Option<JudgeVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankScore {
    pub rule_score: f64,
    pub judge_score: Option<f64>,
    pub majority_bonus: f64,
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

const MAJORITY_BONUS: f64 = 10.0;

/// The transparent additive score: +1 schema, +2 state, +2 transition,
/// +2 answer–trace, +0.5 per abstained field, -0.5 per failure label.
pub fn rule_score(report: &VerifierReport) -> f64 {
    let mut score = 0.0;
    for (verdict, weight) in [
        (report.z_schema, 1.0),
        (report.z_state, 2.0),
        (report.z_trans, 2.0),
        (report.z_faith, 2.0),
    ] {
        score += match verdict {
            Verdict::Valid => weight,
            Verdict::Abstain => 0.5,
            Verdict::Invalid => 0.0,
        };
    }
    score - 0.5 * report.labels.len() as f64
}

/// Judge score: base 5.0, -1.0 per label, -1.5 per state/transition field
/// failure, -2.0 when the answer contradicts the trace. No floor.
pub fn judge_score(verdict: &JudgeVerdict) -> f64 {
    let mut score = 5.0 - verdict.labels.len() as f64;
    for field in ["state_0", "transition"] {
        if verdict.field_errors.keys().any(|k| k.contains(field)) {
            score -= 1.5;
        }
    }
    if !verdict.answer_trace_consistent {
        score -= 2.0;
    }
    score
}

fn normalized_answer(trace: &Trace) -> Option<NormalizedAnswer> {
    let answer = trace.answer.as_ref()?;
    let answer_type = trace
        .metadata
        .as_ref()
        .and_then(|m| m.answer_type)
        .unwrap_or(AnswerType::Numeric);
    normalize_answer(answer, answer_type)
        .or_else(|_| normalize_answer(answer, AnswerType::Symbolic))
        .ok()
}

/// Flags the candidates sharing the modal normalized answer. Ties pick the
/// answer class whose first candidate appears earliest.
fn majority_members(candidates: &[Candidate]) -> Vec<bool> {
    let answers: Vec<Option<NormalizedAnswer>> =
        candidates.iter().map(|c| normalized_answer(&c.trace)).collect();
    let mut classes: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, answer) in answers.iter().enumerate() {
        let Some(answer) = answer else { continue };
        let existing = classes.iter_mut().find(|(first, _)| {
            answers[*first]
                .as_ref()
                .map(|rep| answers_equal(rep, answer).unwrap_or(false))
                .unwrap_or(false)
        });
        match existing {
            Some((_, members)) => members.push(i),
            None => classes.push((i, vec![i])),
        }
    }
    let mut flags = vec![false; candidates.len()];
    if let Some((_, members)) = classes
        .iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
    {
        for &i in members {
            flags[i] = true;
        }
    }
    flags
}

fn score_candidate(candidate: &Candidate, mode: RerankMode, in_majority: bool) -> RerankScore {
    let rule = rule_score(&candidate.report);
    let judge = match mode {
        RerankMode::Learned => candidate.judge.as_ref().map(judge_score),
        _ => None,
    };
    let bonus = if mode == RerankMode::Majority && in_majority {
        MAJORITY_BONUS
    } else {
        0.0
    };
    let total = rule + judge.unwrap_or(0.0) + bonus;
    let mut components = BTreeMap::new();
    components.insert("rule".to_string(), rule);
    if let Some(j) = judge {
        components.insert("judge".to_string(), j);
    }
    if bonus != 0.0 {
        components.insert("majority_bonus".to_string(), bonus);
    }
    RerankScore {
        rule_score: rule,
        judge_score: judge,
        majority_bonus: bonus,
        total,
        components,
    }
}

/// Score every candidate and return the selected index (argmax of the total;
/// ties break toward the lowest index) together with the itemized scores.
pub fn select(
    candidates: &[Candidate],
    mode: RerankMode,
) -> Result<(usize, Vec<RerankScore>), RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let majority = if mode == RerankMode::Majority {
        majority_members(candidates)
    } else {
        vec![false; candidates.len()]
    };
    let scores: Vec<RerankScore> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| score_candidate(c, mode, majority[i]))
        .collect();
    let mut best = 0usize;
    for (i, score) in scores.iter().enumerate() {
        if score.total > scores[best].total {
            best = i;
        }
    }
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::{Confidence, Label};
    use serde_json::json;
    use std::collections::BTreeSet;

    fn report(
        schema: Verdict,
        state: Verdict,
        trans: Verdict,
        faith: Verdict,
        labels: usize,
    ) -> VerifierReport {
        VerifierReport {
            z_schema: schema,
            z_state: state,
            z_trans: trans,
            z_ans: Verdict::Valid,
            z_faith: faith,
            labels: Label::ALL.iter().copied().take(labels).collect(),
            messages: vec![],
            abstain_reasons: vec![],
            failed_checks: BTreeSet::new(),
        }
    }

    fn candidate(rule_report: VerifierReport, answer: &str) -> Candidate {
        let trace = Trace {
            answer: Some(crate::trace::Answer {
                value: json!(answer),
                unit: None,
                explanation: None,
            }),
            ..Trace::default()
        };
        Candidate {
            trace,
            report: rule_report,
            judge: None,
        }
    }

    fn clean_judge() -> JudgeVerdict {
        JudgeVerdict {
            labels: BTreeSet::new(),
            field_errors: BTreeMap::new(),
            answer_trace_consistent: true,
            confidence: Confidence::High,
            rationale: String::new(),
        }
    }

    #[test]
    fn fully_valid_unlabeled_trace_scores_seven() {
        let r = report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0);
        assert_eq!(rule_score(&r), 7.0);
    }

    #[test]
    fn schema_only_with_two_labels_scores_zero() {
        // 1 + 0 + 0 + 0 - 2 * 0.5 = 0.
        let r = report(Verdict::Valid, Verdict::Invalid, Verdict::Invalid, Verdict::Invalid, 2);
        assert_eq!(rule_score(&r), 0.0);
    }

    #[test]
    fn abstained_state_earns_half_credit() {
        // 1 + 0.5 + 2 + 2 = 5.5.
        let r = report(Verdict::Valid, Verdict::Abstain, Verdict::Valid, Verdict::Valid, 0);
        assert_eq!(rule_score(&r), 5.5);
    }

    #[test]
    fn judge_score_formula() {
        assert_eq!(judge_score(&clean_judge()), 5.0);

        let mut one_label_state = clean_judge();
        one_label_state.labels.insert(Label::State);
        one_label_state
            .field_errors
            .insert("state_0".to_string(), "wrong".to_string());
        assert_eq!(judge_score(&one_label_state), 2.5);

        let mut two_labels_ans = clean_judge();
        two_labels_ans.labels.insert(Label::State);
        two_labels_ans.labels.insert(Label::Force);
        two_labels_ans.answer_trace_consistent = false;
        assert_eq!(judge_score(&two_labels_ans), 1.0);
    }

    #[test]
    fn single_candidate_selects_index_zero() {
        let c = candidate(
            report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0),
            "B",
        );
        let (idx, scores) = select(&[c], RerankMode::Rules).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(scores.len(), 1);
    }

    #[test]
    fn argmax_picks_the_highest_rule_score() {
        let cands = vec![
            candidate(report(Verdict::Valid, Verdict::Valid, Verdict::Invalid, Verdict::Valid, 2), "A"),
            candidate(report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0), "B"),
            candidate(report(Verdict::Invalid, Verdict::Invalid, Verdict::Invalid, Verdict::Invalid, 4), "C"),
        ];
        // Rule scores: 4.0, 7.0, 0.0 minus labels -> argmax at index 1.
        let (idx, scores) = select(&cands, RerankMode::Rules).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(scores[1].total, 7.0);
        assert!(scores[0].total < scores[1].total);
        assert!(scores[2].total < scores[0].total);
    }

    #[test]
    fn ties_break_toward_the_lowest_index() {
        let r = || report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0);
        let cands = vec![candidate(r(), "A"), candidate(r(), "B")];
        let (idx, _) = select(&cands, RerankMode::Rules).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn majority_bonus_lifts_the_modal_answer() {
        let r = || report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0);
        let cands = vec![candidate(r(), "B"), candidate(r(), "B"), candidate(r(), "C")];
        let (idx, scores) = select(&cands, RerankMode::Majority).unwrap();
        assert_eq!(idx, 0, "a B-candidate wins");
        assert_eq!(scores[0].majority_bonus, 10.0);
        assert_eq!(scores[1].majority_bonus, 10.0);
        assert_eq!(scores[2].majority_bonus, 0.0);
    }

    #[test]
    fn learned_mode_adds_the_judge_score() {
        let mut bad_judge = clean_judge();
        bad_judge.labels.insert(Label::Relation);
        bad_judge
            .field_errors
            .insert("state_0.relations".to_string(), "wrong".to_string());
        let mut a = candidate(
            report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0),
            "A",
        );
        a.judge = Some(bad_judge);
        let mut b = candidate(
            report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0),
            "B",
        );
        b.judge = Some(clean_judge());
        let (idx, scores) = select(&[a, b], RerankMode::Learned).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(scores[1].judge_score, Some(5.0));
        assert_eq!(scores[0].judge_score, Some(2.5));
        assert_eq!(scores[1].total, 12.0);
    }

    #[test]
    fn empty_candidates_error() {
        assert_eq!(
            select(&[], RerankMode::Rules).unwrap_err(),
            RerankError::EmptyCandidates
        );
    }

    #[test]
    fn selected_score_dominates_the_pool_and_never_drops_with_k() {
        let seq = vec![
            candidate(report(Verdict::Valid, Verdict::Invalid, Verdict::Invalid, Verdict::Invalid, 3), "A"),
            candidate(report(Verdict::Valid, Verdict::Abstain, Verdict::Valid, Verdict::Valid, 0), "B"),
            candidate(report(Verdict::Valid, Verdict::Valid, Verdict::Valid, Verdict::Valid, 0), "C"),
            candidate(report(Verdict::Valid, Verdict::Valid, Verdict::Invalid, Verdict::Valid, 1), "D"),
        ];
        let mut last_best = f64::NEG_INFINITY;
        for k in 1..=seq.len() {
            let (idx, scores) = select(&seq[..k], RerankMode::Rules).unwrap();
            let best = scores[idx].total;
            assert!(scores.iter().all(|s| s.total <= best), "argmax contract");
            assert!(best >= last_best, "selection got worse as k grew");
            last_best = best;
        }
    }
}

//! Behavioral stress tests on top of completed runs: trace ablation,
//! counterfactual editing, held-out perturbation detection, and natural
//! rejected pairs.

use super::{RateLimiter, RunConfig, RunRecord, Runner, RunnerError};
use crate::metrics::{checks_for_label, LabelRate};
use crate::perturb::{apply_perturbation, find_perturbation, PreferencePair};
use crate::prompts::Condition;
use crate::rerank::rule_score;
use crate::trace::{answers_equal, Trace};
use crate::verifier::Label;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Previously completed runs the stress battery builds on.
pub struct StressInputs<'a> {
    pub full_trace: &'a [RunRecord],
    pub answer_only: &'a [RunRecord],
    pub heldout_pairs: &'a [PreferencePair],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub n: usize,
    pub flips: usize,
    pub excluded_noops: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaturalPairsReport {
    pub n: usize,
    pub valid_acc: Option<f64>,
    pub invalid_acc: Option<f64>,
    /// valid-trace accuracy minus invalid-trace accuracy; may be negative.
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressReport {
    pub ablation_change_rate: Option<f64>,
    pub counterfactual: CounterfactualReport,
    pub heldout_detection: BTreeMap<Label, LabelRate>,
    pub natural_pairs: NaturalPairsReport,
}

/// Run the four stress tests. Counterfactual editing re-asks the endpoint;
/// everything else replays stored records.
pub fn stress_tests(
    runner: &mut Runner<'_>,
    bank: &[Trace],
    config: &RunConfig,
    inputs: &StressInputs<'_>,
) -> Result<StressReport, RunnerError> {
    if inputs.full_trace.is_empty() {
        return Err(RunnerError::MissingRuns(
            "full_trace records are required".to_string(),
        ));
    }
    if inputs.answer_only.is_empty() {
        return Err(RunnerError::MissingRuns(
            "answer_only records are required".to_string(),
        ));
    }

    Ok(StressReport {
        ablation_change_rate: ablation_change_rate(inputs),
        counterfactual: counterfactual_editing(runner, bank, config, inputs)?,
        heldout_detection: heldout_detection(runner, inputs),
        natural_pairs: natural_pairs(runner, bank, inputs),
    })
}

/// Fraction of examples whose answer changes between the trace-eliciting and
/// answer-only prompts.
fn ablation_change_rate(inputs: &StressInputs<'_>) -> Option<f64> {
    let by_id: BTreeMap<&str, &RunRecord> = inputs
        .answer_only
        .iter()
        .map(|r| (r.example_id.as_str(), r))
        .collect();
    let mut joined = 0usize;
    let mut changed = 0usize;
    for record in inputs.full_trace {
        let Some(other) = by_id.get(record.example_id.as_str()) else {
            continue;
        };
        joined += 1;
        let same = match (&record.normalized_answer, &other.normalized_answer) {
            (Some(a), Some(b)) => answers_equal(a, b).unwrap_or(false),
            (None, None) => true,
            _ => false,
        };
        if !same {
            changed += 1;
        }
    }
    (joined > 0).then(|| changed as f64 / joined as f64)
}

/// Edit one physical variable of the gold trace via the perturbation tables,
/// re-ask under gold-state injection, and count answer flips relative to the
/// model's full-trace answers. No-op edits are excluded.
fn counterfactual_editing(
    runner: &mut Runner<'_>,
    bank: &[Trace],
    config: &RunConfig,
    inputs: &StressInputs<'_>,
) -> Result<CounterfactualReport, RunnerError> {
    let baseline: BTreeMap<&str, &RunRecord> = inputs
        .full_trace
        .iter()
        .map(|r| (r.example_id.as_str(), r))
        .collect();
    let edit = find_perturbation("reverse_force_direction").expect("registered perturbation");

    let mut ask_config = config.clone();
    ask_config.condition = Condition::GoldStateAnswer;
    ask_config.temperature = Condition::GoldStateAnswer.default_temperature();

    let mut limiter = RateLimiter::new(config.rate_limit_rpm);
    let mut n = 0usize;
    let mut flips = 0usize;
    let mut excluded = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for example in bank {
        let Some(base_record) = baseline.get(example.id_str()) else {
            continue;
        };
        let Some((edited, _)) = apply_perturbation(example, edit, &mut rng) else {
            excluded += 1;
            continue;
        };
        let messages =
            crate::prompts::build_prompt(&edited, Condition::GoldStateAnswer, None)?;
        let reply = runner.ask(&messages, &ask_config, &mut limiter)?;
        let record = runner.record_from_raw(&edited, &ask_config, reply);
        n += 1;
        let flipped = match (&record.normalized_answer, &base_record.normalized_answer) {
            (Some(a), Some(b)) => !answers_equal(a, b).unwrap_or(false),
            _ => true,
        };
        if flipped {
            flips += 1;
        }
    }
    Ok(CounterfactualReport {
        n,
        flips,
        excluded_noops: excluded,
        rate: (n > 0).then(|| flips as f64 / n as f64),
    })
}

/// Verifier detection rates on rejected traces from held-out perturbation
/// families.
fn heldout_detection(
    runner: &Runner<'_>,
    inputs: &StressInputs<'_>,
) -> BTreeMap<Label, LabelRate> {
    let mut hit: BTreeMap<Label, usize> = BTreeMap::new();
    let mut total: BTreeMap<Label, usize> = BTreeMap::new();
    for pair in inputs.heldout_pairs {
        *total.entry(pair.label).or_insert(0) += 1;
        let report = runner.verifier().verify(&pair.rejected, None);
        if report
            .failed_checks
            .iter()
            .any(|c| checks_for_label(pair.label).contains(c))
        {
            *hit.entry(pair.label).or_insert(0) += 1;
        }
    }
    total
        .into_iter()
        .map(|(label, n)| {
            let count = hit.get(&label).copied().unwrap_or(0);
            (
                label,
                LabelRate {
                    count,
                    total: n,
                    rate: (n > 0).then(|| count as f64 / n as f64),
                },
            )
        })
        .collect()
}

/// Pair the model's own verifier-invalid traces with the gold traces and ask
/// the rule scorer to discriminate.
fn natural_pairs(
    runner: &Runner<'_>,
    bank: &[Trace],
    inputs: &StressInputs<'_>,
) -> NaturalPairsReport {
    let by_id: BTreeMap<&str, &Trace> = bank.iter().map(|t| (t.id_str(), t)).collect();
    let mut n = 0usize;
    let mut valid_wins = 0usize;
    let mut invalid_wins = 0usize;
    for record in inputs.full_trace {
        let Some(report) = &record.report else { continue };
        if crate::metrics::trace_validity(report) != Some(false) {
            continue;
        }
        let Some(gold) = by_id.get(record.example_id.as_str()) else {
            continue;
        };
        let gold_report = runner.verifier().verify(gold, None);
        n += 1;
        let gold_score = rule_score(&gold_report);
        let model_score = rule_score(report);
        if gold_score > model_score {
            valid_wins += 1;
        } else if model_score > gold_score {
            invalid_wins += 1;
        }
    }
    let valid_acc = (n > 0).then(|| valid_wins as f64 / n as f64);
    let invalid_acc = (n > 0).then(|| invalid_wins as f64 / n as f64);
    NaturalPairsReport {
        n,
        valid_acc,
        invalid_acc,
        consistency: match (valid_acc, invalid_acc) {
            (Some(v), Some(i)) => Some(v - i),
            _ => None,
        },
    }
}

//! Deterministic synthetic trace bank: 17 scenario families, quality gates,
//! seeded generation, and train/val/test splits.

pub mod families;

pub use families::{
    answer_key, build_with_params, family_spec, recompute, rule_text, FamilySpec, VariableSpec,
    GRAVITY,
};

use crate::perturb::{Partition, PreferencePair};
use crate::trace::{numeric_entries, validate_schema, Family, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

const RETRY_BUDGET: usize = 32;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("need at least 17 traces to cover every family, got {0}")]
    TooFewTraces(usize),
    #[error("family {family} failed its quality gates {budget} times in a row")]
    Exhausted { family: Family, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Pass,
    Fail,
    Pending,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateResult {
    pub name: String,
    pub status: GateStatus,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub gates: Vec<GateResult>,
}

impl GateReport {
    /// Gates 1–3 pass; gate 4 (human review) is recorded, never auto-passed.
    pub fn automated_pass(&self) -> bool {
        self.gates
            .iter()
            .take(3)
            .all(|g| g.status == GateStatus::Pass)
    }
}

/// Sample parameters and build one gold trace for the family.
pub fn generate_trace(family: Family, rng: &mut impl Rng) -> Trace {
    let id = format!("{}-{:08x}", family, rng.gen::<u32>());
    families::build(family, &id, rng)
}

/// The four release gates: strict schema, family recomputation, parameter-key
/// agreement, and a pending human-review marker.
pub fn quality_gate(trace: &Trace) -> GateReport {
    let mut gates = Vec::with_capacity(4);

    let schema = validate_schema(trace, true);
    gates.push(GateResult {
        name: "schema".to_string(),
        status: if schema.valid { GateStatus::Pass } else { GateStatus::Fail },
        message: if schema.valid {
            "strict schema valid".to_string()
        } else {
            format!("{} schema error(s)", schema.errors.len())
        },
    });

    gates.push(recompute_gate(trace));
    gates.push(parameter_key_gate(trace));

    gates.push(GateResult {
        name: "human_review".to_string(),
        status: GateStatus::Pending,
        message: "recorded for stratified human review; never auto-passed".to_string(),
    });

    GateReport { gates }
}

fn recompute_gate(trace: &Trace) -> GateResult {
    let fail = |message: String| GateResult {
        name: "recompute".to_string(),
        status: GateStatus::Fail,
        message,
    };
    let Some(family) = trace.family() else {
        return fail("unknown scenario family".to_string());
    };
    let Some(gold) = trace
        .metadata
        .as_ref()
        .and_then(|m| m.gold_answer.as_ref())
        .and_then(|a| a.value_f64())
    else {
        return fail("gold answer missing or non-numeric".to_string());
    };
    let requested = trace
        .metadata
        .as_ref()
        .and_then(|m| m.parameter_keys.last().cloned())
        .unwrap_or_default();
    let vars: BTreeMap<String, f64> = trace
        .state_0
        .as_ref()
        .map(|s0| {
            numeric_entries(&s0.variables)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect()
        })
        .unwrap_or_default();
    match recompute(family, &vars, &requested) {
        Some(value) if crate::trace::close_to_gold(value, gold) => GateResult {
            name: "recompute".to_string(),
            status: GateStatus::Pass,
            message: format!("recomputed {requested} = {value} matches gold {gold}"),
        },
        Some(value) => fail(format!(
            "recomputed {requested} = {value} deviates from gold {gold} by more than 1%"
        )),
        None => fail("recomputation inputs missing from trace variables".to_string()),
    }
}

fn parameter_key_gate(trace: &Trace) -> GateResult {
    let fail = |message: String| GateResult {
        name: "parameter_keys".to_string(),
        status: GateStatus::Fail,
        message,
    };
    let Some(meta) = trace.metadata.as_ref() else {
        return fail("metadata missing".to_string());
    };
    if meta.parameter_keys.is_empty() {
        return fail("parameter_keys is empty".to_string());
    }
    let question_tokens = tokens(meta.question.as_deref().unwrap_or(""));
    let mut trace_keys: BTreeSet<&str> = BTreeSet::new();
    if let Some(s0) = &trace.state_0 {
        trace_keys.extend(s0.variables.keys().map(String::as_str));
    }
    if let Some(s1) = &trace.state_1 {
        trace_keys.extend(s1.new_variables.keys().map(String::as_str));
    }
    for key in &meta.parameter_keys {
        if !question_tokens.contains(key.as_str()) {
            return fail(format!("parameter key '{key}' does not appear in the question"));
        }
        if !trace_keys.contains(key.as_str()) {
            return fail(format!("parameter key '{key}' does not appear in the trace variables"));
        }
    }
    let requested = meta.parameter_keys.last().expect("non-empty");
    let answer_mentions = trace
        .answer
        .as_ref()
        .and_then(|a| a.explanation.as_deref())
        .map(|e| tokens(e).contains(requested.as_str()))
        .unwrap_or(false);
    if !answer_mentions {
        return fail(format!(
            "requested key '{requested}' does not appear in the answer explanation"
        ));
    }
    GateResult {
        name: "parameter_keys".to_string(),
        status: GateStatus::Pass,
        message: "question, trace variables, and answer share the canonical keys".to_string(),
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankInfo {
    pub seed: u64,
    pub family_counts: BTreeMap<String, usize>,
    pub regenerated: usize,
}

/// Generate `n` gated traces covering all 17 families, deterministically from
/// the seed. Gate failures are regenerated with fresh parameters and counted.
pub fn generate_bank(seed: u64, n: usize) -> Result<(Vec<Trace>, BankInfo), GenerationError> {
    if n < Family::ALL.len() {
        return Err(GenerationError::TooFewTraces(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base = n / Family::ALL.len();
    let remainder = n % Family::ALL.len();
    let mut order: Vec<usize> = (0..Family::ALL.len()).collect();
    shuffle(&mut order, &mut rng);
    let mut counts = vec![base; Family::ALL.len()];
    for &idx in order.iter().take(remainder) {
        counts[idx] += 1;
    }

    let mut traces = Vec::with_capacity(n);
    let mut seen_ids = BTreeSet::new();
    let mut regenerated = 0usize;
    let mut family_counts = BTreeMap::new();
    for (fi, family) in Family::ALL.into_iter().enumerate() {
        for _ in 0..counts[fi] {
            let mut accepted = false;
            for _ in 0..RETRY_BUDGET {
                let trace = generate_trace(family, &mut rng);
                let fresh = seen_ids.insert(trace.id_str().to_string());
                if fresh && quality_gate(&trace).automated_pass() {
                    traces.push(trace);
                    accepted = true;
                    break;
                }
                regenerated += 1;
            }
            if !accepted {
                return Err(GenerationError::Exhausted {
                    family,
                    budget: RETRY_BUDGET,
                });
            }
        }
        *family_counts.entry(family.as_str().to_string()).or_insert(0) += counts[fi];
    }
    Ok((
        traces,
        BankInfo {
            seed,
            family_counts,
            regenerated,
        },
    ))
}

/// Fisher–Yates with our own RNG calls so the draw sequence is pinned.
fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitLists {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_of(&self, id: &str) -> Option<crate::trace::Split> {
        use crate::trace::Split;
        if self.train.iter().any(|x| x == id) {
            Some(Split::Train)
        } else if self.val.iter().any(|x| x == id) {
            Some(Split::Val)
        } else if self.test.iter().any(|x| x == id) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitsDocument {
    pub seed: u64,
    /// 60/20/20 trace-level split.
    pub traces: SplitLists,
    /// Every pair follows its source trace's split.
    pub pairs: SplitLists,
    /// Train pairs with the held-out perturbation families removed; the list
    /// preference-training exports consume.
    pub train_pairs_seen_only: Vec<String>,
}

/// 60/20/20 trace-level split; all pairs from one trace land in that trace's
/// split, and the training view additionally drops held-out families.
pub fn make_splits(traces: &[Trace], pairs: &[PreferencePair], seed: u64) -> SplitsDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xA11);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    shuffle(&mut order, &mut rng);

    let n = traces.len();
    let n_train = (n as f64 * 0.6).floor() as usize;
    let n_val = (n as f64 * 0.2).floor() as usize;

    let mut trace_lists = SplitLists::default();
    let mut assignment: BTreeMap<&str, crate::trace::Split> = BTreeMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let id = traces[idx].id_str();
        let split = if rank < n_train {
            crate::trace::Split::Train
        } else if rank < n_train + n_val {
            crate::trace::Split::Val
        } else {
            crate::trace::Split::Test
        };
        assignment.insert(id, split);
    }
    // Keep file order inside each list.
    for trace in traces {
        let id = trace.id_str().to_string();
        match assignment[trace.id_str()] {
            crate::trace::Split::Train => trace_lists.train.push(id),
            crate::trace::Split::Val => trace_lists.val.push(id),
            crate::trace::Split::Test => trace_lists.test.push(id),
        }
    }

    let mut pair_lists = SplitLists::default();
    let mut train_pairs_seen_only = Vec::new();
    for pair in pairs {
        let split = assignment
            .get(pair.source_trace_id.as_str())
            .copied()
            .unwrap_or(crate::trace::Split::Test);
        match split {
            crate::trace::Split::Train => {
                pair_lists.train.push(pair.pair_id.clone());
                if pair.perturbation_family == Partition::Seen {
                    train_pairs_seen_only.push(pair.pair_id.clone());
                }
            }
            crate::trace::Split::Val => pair_lists.val.push(pair.pair_id.clone()),
            crate::trace::Split::Test => pair_lists.test.push(pair.pair_id.clone()),
        }
    }

    SplitsDocument {
        seed,
        traces: trace_lists,
        pairs: pair_lists,
        train_pairs_seen_only,
    }
}

/// Diagnostics reported over the released gold traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldDiagnostics {
    pub transition_consistency: f64,
    pub trace_answer_consistency: f64,
    pub abstention_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationStats {
    pub seed: u64,
    pub n_traces: usize,
    pub family_counts: BTreeMap<String, usize>,
    pub regenerated: usize,
    pub first_pass_schema_failures: usize,
    pub repaired_by_canonicalization: usize,
    pub pair_count: usize,
    pub pairs_per_label: BTreeMap<String, usize>,
    pub pairs_per_partition: BTreeMap<String, usize>,
    pub trace_split_sizes: BTreeMap<String, usize>,
    pub pair_split_sizes: BTreeMap<String, usize>,
    pub dpo_train_size: usize,
    pub gold_diagnostics: GoldDiagnostics,
    /// SHA-256 hex digests of the emitted files.
    pub checksums: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::to_canonical_json;
    use crate::verifier::{verify, Verdict};
    use serde_json::json;

    #[test]
    fn inclined_plane_answer_matches_hand_computation() {
        // Oracle: a = g * sin(theta) = 9.8 * 0.5 = 4.9 m/s².
        let trace =
            build_with_params(Family::InclinedPlane, "ip-1", vec![("theta", 30.0), ("g", 9.8)]);
        let answer = trace.answer.as_ref().unwrap().value_f64().unwrap();
        assert!((answer - 4.9).abs() / 4.9 < 1e-6, "answer {answer}");
        let rule = &trace.transition.as_ref().unwrap().rule;
        assert!(rule.to_lowercase().contains("newton's second law"));
    }

    #[test]
    fn wave_answer_is_frequency_times_wavelength() {
        // Oracle: v = f * lambda = 2 * 3 = 6 m/s.
        let trace = build_with_params(
            Family::Wave,
            "w-1",
            vec![("frequency", 2.0), ("wavelength", 3.0)],
        );
        let answer = trace.answer.as_ref().unwrap().value_f64().unwrap();
        assert!((answer - 6.0).abs() < 1e-9);
    }

    #[test]
    fn free_fall_at_time_zero_has_zero_displacement() {
        let trace = build_with_params(
            Family::FreeFall,
            "ff-0",
            vec![("g", 9.8), ("time", 0.0), ("ask_distance", 1.0)],
        );
        assert_eq!(trace.answer.as_ref().unwrap().value_f64(), Some(0.0));
    }

    #[test]
    fn fresh_traces_pass_the_automated_gates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for family in Family::ALL {
            let trace = generate_trace(family, &mut rng);
            let report = quality_gate(&trace);
            assert!(
                report.automated_pass(),
                "{family}: {:?}",
                report
                    .gates
                    .iter()
                    .filter(|g| g.status == GateStatus::Fail)
                    .collect::<Vec<_>>()
            );
            assert_eq!(report.gates[3].status, GateStatus::Pending);
        }
    }

    #[test]
    fn corrupted_answer_fails_the_recompute_gate() {
        // Oracle: recompute gives 4.9, stored gold says 9.9.
        let mut trace =
            build_with_params(Family::InclinedPlane, "ip-2", vec![("theta", 30.0), ("g", 9.8)]);
        let meta = trace.metadata.as_mut().unwrap();
        meta.gold_answer.as_mut().unwrap().value = json!(9.9);
        let report = quality_gate(&trace);
        assert_eq!(report.gates[1].status, GateStatus::Fail);
    }

    #[test]
    fn renamed_variables_fail_the_parameter_key_gate() {
        let mut trace = build_with_params(
            Family::Wave,
            "w-2",
            vec![("frequency", 2.0), ("wavelength", 3.0)],
        );
        let s0 = trace.state_0.as_mut().unwrap();
        let vars = std::mem::take(&mut s0.variables);
        for (i, (_, v)) in vars.into_iter().enumerate() {
            s0.variables.insert(format!("var_{i}"), v);
        }
        let report = quality_gate(&trace);
        assert_eq!(report.gates[2].status, GateStatus::Fail);
    }

    #[test]
    fn identical_seeds_generate_identical_banks() {
        let (a, stats_a) = generate_bank(42, 34).unwrap();
        let (b, stats_b) = generate_bank(42, 34).unwrap();
        let lines_a: Vec<String> = a.iter().map(to_canonical_json).collect();
        let lines_b: Vec<String> = b.iter().map(to_canonical_json).collect();
        assert_eq!(lines_a, lines_b);
        assert_eq!(stats_a.family_counts, stats_b.family_counts);
    }

    #[test]
    fn small_bank_covers_every_family() {
        // Pigeonhole: 34 = 2 * 17 gives exactly two traces per family.
        let (traces, info) = generate_bank(7, 34).unwrap();
        assert_eq!(traces.len(), 34);
        assert_eq!(info.family_counts.len(), 17);
        for (family, count) in &info.family_counts {
            assert_eq!(*count, 2, "{family}");
        }
    }

    #[test]
    fn bank_below_family_count_is_rejected() {
        assert!(matches!(
            generate_bank(1, 5),
            Err(GenerationError::TooFewTraces(5))
        ));
    }

    #[test]
    fn every_family_gold_trace_verifies_clean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for family in Family::ALL {
            for _ in 0..4 {
                let trace = generate_trace(family, &mut rng);
                let report = verify(&trace, None);
                assert_eq!(report.z_schema, Verdict::Valid, "{family}: {:?}", report.messages);
                assert_eq!(report.z_state, Verdict::Valid, "{family}: {:?}", report.messages);
                assert_eq!(report.z_trans, Verdict::Valid, "{family}: {:?}", report.messages);
                assert_eq!(report.z_faith, Verdict::Valid, "{family}: {:?}", report.messages);
                assert!(report.labels.is_empty(), "{family}: {:?}", report.labels);
                assert!(
                    !report.has_abstention(),
                    "{family}: {:?}",
                    report.abstain_reasons
                );
            }
        }
    }

    #[test]
    fn rule_texts_hit_only_their_own_keyword_lists() {
        let config = crate::verifier::VerifierConfig::default();
        for home in Family::ALL {
            let keywords = config.keywords_for(home);
            assert!(!keywords.is_empty(), "{home} has no keywords");
            let own = rule_text(home).to_lowercase();
            assert!(
                keywords.iter().any(|k| own.contains(k)),
                "{home}'s rule text misses its own keywords"
            );
            for donor in Family::ALL {
                if donor == home {
                    continue;
                }
                let donor_text = rule_text(donor).to_lowercase();
                for keyword in keywords {
                    assert!(
                        !donor_text.contains(keyword),
                        "{donor}'s rule text contains {home}'s keyword '{keyword}'"
                    );
                }
            }
        }
    }

    #[test]
    fn splits_are_sixty_twenty_twenty_and_pairs_follow_traces() {
        let (traces, _) = generate_bank(5, 20).unwrap();
        let pairs = crate::perturb::build_pairs(&traces, 4, 5).unwrap();
        let splits = make_splits(&traces, &pairs, 5);
        assert_eq!(splits.traces.train.len(), 12);
        assert_eq!(splits.traces.val.len(), 4);
        assert_eq!(splits.traces.test.len(), 4);
        assert_eq!(splits.pairs.len(), pairs.len());
        for pair in &pairs {
            let trace_split = splits.traces.split_of(&pair.source_trace_id).unwrap();
            let pair_split = splits.pairs.split_of(&pair.pair_id).unwrap();
            assert_eq!(trace_split, pair_split, "{}", pair.pair_id);
        }
        for pair_id in &splits.train_pairs_seen_only {
            let pair = pairs.iter().find(|p| &p.pair_id == pair_id).unwrap();
            assert_eq!(pair.perturbation_family, crate::perturb::Partition::Seen);
        }
    }
}

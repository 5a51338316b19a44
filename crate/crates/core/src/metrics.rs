//! Diagnostic metrics over evaluation records: answer accuracy, per-stage
//! validity, hidden-inconsistency rates, gap decomposition, bootstrap
//! confidence intervals, agreement statistics, and the audit pre-screen.

use crate::perturb::PreferencePair;
use crate::prompts::Condition;
use crate::trace::{answers_equal, NormalizedAnswer, Trace};
use crate::verifier::{CheckId, Label, Verdict, Verifier, VerifierReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("condition {0} missing from the accuracy table")]
    MissingCondition(Condition),
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("not enough records to draw the requested sample: {0}")]
    InsufficientRecords(String),
}

/// One model generation, parsed and verified, ready for aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: String,
    pub model: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<NormalizedAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<NormalizedAnswer>,
    pub answer_correct: bool,
    pub report: VerifierReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<Label>,
    #[serde(default)]
    pub is_gold: bool,
}

impl EvalRecord {
    /// `answer_correct` is derived, never asserted independently.
    pub fn new(
        example_id: impl Into<String>,
        model: impl Into<String>,
        condition: Condition,
        gold_answer: Option<NormalizedAnswer>,
        model_answer: Option<NormalizedAnswer>,
        report: VerifierReport,
    ) -> EvalRecord {
        let answer_correct = match (&model_answer, &gold_answer) {
            (Some(m), Some(g)) => answers_equal(m, g).unwrap_or(false),
            _ => false,
        };
        EvalRecord {
            example_id: example_id.into(),
            model: model.into(),
            condition,
            family: None,
            source: None,
            gold_answer,
            model_answer,
            answer_correct,
            report,
            predicted_label: None,
            is_gold: false,
        }
    }
}

/// Trace-level validity: state, transition, and faithfulness all valid.
/// `None` marks a record excluded for abstention; a schema-invalid trace
/// counts as invalid, not abstained.
pub fn trace_validity(report: &VerifierReport) -> Option<bool> {
    if report.z_schema == Verdict::Invalid {
        return Some(false);
    }
    let fields = [report.z_state, report.z_trans, report.z_faith];
    if fields.contains(&Verdict::Invalid) {
        return Some(false);
    }
    if fields.contains(&Verdict::Abstain) {
        return None;
    }
    Some(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    /// acc(gold state -> answer) - acc(image -> trace -> answer), in points.
    pub vsg_pp: f64,
    /// acc(gold transition -> answer) - acc(gold state -> answer), in points.
    pub tg_pp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub answer_acc: f64,
    pub state_acc: Option<f64>,
    pub trans_acc: Option<f64>,
    pub trace_ans_rate: Option<f64>,
    pub hir_all: Option<f64>,
    pub hir_correct: Option<f64>,
    pub abstention_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Gaps>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ci: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AnswerAcc,
    StateAcc,
    TransAcc,
    TraceAnsRate,
    HirAll,
    HirCorrect,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::AnswerAcc,
        Metric::StateAcc,
        Metric::TransAcc,
        Metric::TraceAnsRate,
        Metric::HirAll,
        Metric::HirCorrect,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::AnswerAcc => "answer_acc",
            Metric::StateAcc => "state_acc",
            Metric::TransAcc => "trans_acc",
            Metric::TraceAnsRate => "trace_ans_rate",
            Metric::HirAll => "hir_all",
            Metric::HirCorrect => "hir_correct",
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// A field verdict counts toward its accuracy denominator unless it abstained
/// for a substantive reason; the schema-skip abstention counts as invalid.
fn field_rate(records: &[&EvalRecord], pick: fn(&VerifierReport) -> Verdict) -> Option<f64> {
    let mut num = 0usize;
    let mut den = 0usize;
    for record in records {
        let verdict = pick(&record.report);
        let schema_invalid = record.report.z_schema == Verdict::Invalid;
        match verdict {
            Verdict::Valid => {
                num += 1;
                den += 1;
            }
            Verdict::Invalid => den += 1,
            Verdict::Abstain if schema_invalid => den += 1,
            Verdict::Abstain => {}
        }
    }
    ratio(num, den)
}

fn metric_value(records: &[&EvalRecord], metric: Metric) -> Option<f64> {
    match metric {
        Metric::AnswerAcc => ratio(
            records.iter().filter(|r| r.answer_correct).count(),
            records.len(),
        ),
        Metric::StateAcc => field_rate(records, |r| r.z_state),
        Metric::TransAcc => field_rate(records, |r| r.z_trans),
        Metric::TraceAnsRate => field_rate(records, |r| r.z_faith),
        Metric::HirAll => {
            let eligible: Vec<_> = records
                .iter()
                .filter(|r| trace_validity(&r.report).is_some())
                .collect();
            let hidden = eligible
                .iter()
                .filter(|r| r.answer_correct && trace_validity(&r.report) == Some(false))
                .count();
            ratio(hidden, eligible.len())
        }
        Metric::HirCorrect => {
            let correct_eligible: Vec<_> = records
                .iter()
                .filter(|r| r.answer_correct && trace_validity(&r.report).is_some())
                .collect();
            let hidden = correct_eligible
                .iter()
                .filter(|r| trace_validity(&r.report) == Some(false))
                .count();
            ratio(hidden, correct_eligible.len())
        }
    }
}

/// Aggregate one record set into the diagnostic summary.
pub fn compute_metrics(records: &[EvalRecord]) -> Result<MetricsSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let refs: Vec<&EvalRecord> = records.iter().collect();
    let abstained = refs
        .iter()
        .filter(|r| trace_validity(&r.report).is_none())
        .count();
    Ok(MetricsSummary {
        n: records.len(),
        answer_acc: metric_value(&refs, Metric::AnswerAcc).unwrap_or(0.0),
        state_acc: metric_value(&refs, Metric::StateAcc),
        trans_acc: metric_value(&refs, Metric::TransAcc),
        trace_ans_rate: metric_value(&refs, Metric::TraceAnsRate),
        hir_all: metric_value(&refs, Metric::HirAll),
        hir_correct: metric_value(&refs, Metric::HirCorrect),
        abstention_rate: abstained as f64 / records.len() as f64,
        gaps: None,
        ci: BTreeMap::new(),
    })
}

/// Visual-state and transition gaps from per-condition answer accuracies,
/// in signed percentage points.
pub fn compute_gaps(acc_by_condition: &BTreeMap<Condition, f64>) -> Result<Gaps, MetricsError> {
    let get = |c: Condition| {
        acc_by_condition
            .get(&c)
            .copied()
            .ok_or(MetricsError::MissingCondition(c))
    };
    let full_trace = get(Condition::FullTrace)?;
    let gold_state = get(Condition::GoldStateAnswer)?;
    let gold_trans = get(Condition::GoldTransAnswer)?;
    Ok(Gaps {
        vsg_pp: (gold_state - full_trace) * 100.0,
        tg_pp: (gold_trans - gold_state) * 100.0,
    })
}

/// Percentile bootstrap at 2.5/97.5. Conditional metrics recompute numerator
/// and denominator inside every resample; resamples where the metric is
/// undefined are skipped. Returns `None` only when it is undefined in all.
pub fn bootstrap_ci(
    records: &[EvalRecord],
    metric: Metric,
    b: usize,
    seed: u64,
) -> Option<(f64, f64)> {
    if records.is_empty() || b == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = records.len();
    let mut values = Vec::with_capacity(b);
    let mut resample = Vec::with_capacity(n);
    for _ in 0..b {
        resample.clear();
        for _ in 0..n {
            resample.push(&records[rng.gen_range(0..n)]);
        }
        if let Some(v) = metric_value(&resample, metric) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    Some((percentile(&values, 2.5), percentile(&values, 97.5)))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Chance-corrected agreement between two annotators. Chance agreement uses
/// the pooled marginal distribution of both raters. Returns 1 when both
/// raters are constant and identical.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut pooled: BTreeMap<&T, f64> = BTreeMap::new();
    for x in a {
        *pooled.entry(x).or_insert(0.0) += 1.0;
    }
    for y in b {
        *pooled.entry(y).or_insert(0.0) += 1.0;
    }
    let expected: f64 = pooled
        .values()
        .map(|count| (count / (2.0 * n)).powi(2))
        .sum();
    if (1.0 - expected).abs() < 1e-12 {
        return Ok(if observed >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditItem {
    pub example_id: String,
    pub model: String,
    pub family: Option<String>,
    pub predicted_label: Option<Label>,
    pub is_gold_check: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditSample {
    pub seed: u64,
    pub items: Vec<AuditItem>,
    pub model_counts: BTreeMap<String, usize>,
}

/// Labels oversampled (x2) in the audit because they are rare.
pub const RARE_LABELS: [Label; 3] = [Label::Temporal, Label::Intervention, Label::UnitScale];

/// Stratified audit sample: proportional by family, equal by model, rare
/// labels oversampled by a factor of two, with `gold_checks` known-correct
/// traces embedded and flagged.
pub fn audit_sample(
    records: &[EvalRecord],
    n: usize,
    gold_checks: usize,
    seed: u64,
) -> Result<AuditSample, MetricsError> {
    if gold_checks > n {
        return Err(MetricsError::InsufficientRecords(format!(
            "gold_checks {gold_checks} exceeds sample size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold_pool: Vec<&EvalRecord> = records.iter().filter(|r| r.is_gold).collect();
    let main_pool: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_gold).collect();
    if gold_pool.len() < gold_checks {
        return Err(MetricsError::InsufficientRecords(format!(
            "need {gold_checks} gold-check traces, pool has {}",
            gold_pool.len()
        )));
    }
    let n_main = n - gold_checks;
    if main_pool.len() < n_main {
        return Err(MetricsError::InsufficientRecords(format!(
            "need {n_main} model traces, pool has {}",
            main_pool.len()
        )));
    }

    let mut by_model: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for record in &main_pool {
        by_model.entry(record.model.as_str()).or_default().push(record);
    }
    let models: Vec<&str> = by_model.keys().copied().collect();
    let base = n_main / models.len();
    let extra = n_main % models.len();

    let mut items = Vec::with_capacity(n);
    let mut model_counts = BTreeMap::new();
    for (mi, model) in models.iter().enumerate() {
        let quota = base + usize::from(mi < extra);
        let pool = &by_model[model];
        if pool.len() < quota {
            return Err(MetricsError::InsufficientRecords(format!(
                "model {model} has {} records, stratum needs {quota}",
                pool.len()
            )));
        }
        let selected = stratified_model_sample(pool, quota, &mut rng);
        model_counts.insert(model.to_string(), selected.len());
        items.extend(selected.into_iter().map(|r| AuditItem {
            example_id: r.example_id.clone(),
            model: r.model.clone(),
            family: r.family.clone(),
            predicted_label: r.predicted_label,
            is_gold_check: false,
        }));
    }

    let mut gold_order: Vec<usize> = (0..gold_pool.len()).collect();
    for i in (1..gold_order.len()).rev() {
        let j = rng.gen_range(0..=i);
        gold_order.swap(i, j);
    }
    for &gi in gold_order.iter().take(gold_checks) {
        let r = gold_pool[gi];
        items.push(AuditItem {
            example_id: r.example_id.clone(),
            model: r.model.clone(),
            family: r.family.clone(),
            predicted_label: r.predicted_label,
            is_gold_check: true,
        });
    }

    Ok(AuditSample {
        seed,
        items,
        model_counts,
    })
}

/// Family-proportional quota inside one model stratum, then weighted
/// selection (rare labels x2) without replacement inside each cell.
fn stratified_model_sample<'a>(
    pool: &[&'a EvalRecord],
    quota: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a EvalRecord> {
    let mut by_family: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for record in pool {
        by_family
            .entry(record.family.as_deref().unwrap_or(""))
            .or_default()
            .push(record);
    }
    // Largest-remainder allocation of the quota across families.
    let total = pool.len() as f64;
    let mut alloc: Vec<(&str, usize, f64)> = by_family
        .iter()
        .map(|(family, records)| {
            let exact = quota as f64 * records.len() as f64 / total;
            (*family, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = alloc.iter().map(|(_, k, _)| k).sum();
    let mut leftover = quota - assigned;
    alloc.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(b.0)));
    for entry in alloc.iter_mut() {
        if leftover == 0 {
            break;
        }
        entry.1 += 1;
        leftover -= 1;
    }
    alloc.sort_by(|a, b| a.0.cmp(b.0));

    // Weighted priority key per record (higher is better), reused for
    // deterministic backfill if a family cell runs short.
    let mut keyed: BTreeMap<&str, Vec<(f64, &EvalRecord)>> = BTreeMap::new();
    for (family, records) in &by_family {
        let mut scored: Vec<(f64, &EvalRecord)> = records
            .iter()
            .map(|r| {
                let weight = match r.predicted_label {
                    Some(label) if RARE_LABELS.contains(&label) => 2.0,
                    _ => 1.0,
                };
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                (u.powf(1.0 / weight), *r)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        keyed.insert(family, scored);
    }

    let mut selected: Vec<&EvalRecord> = Vec::with_capacity(quota);
    let mut leftovers: Vec<(f64, &EvalRecord)> = Vec::new();
    for (family, want, _) in &alloc {
        let scored = keyed.remove(family).unwrap_or_default();
        let take = (*want).min(scored.len());
        selected.extend(scored[..take].iter().map(|(_, r)| *r));
        leftovers.extend(scored[take..].iter().copied());
    }
    if selected.len() < quota {
        leftovers.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (_, record) in leftovers.into_iter().take(quota - selected.len()) {
            selected.push(record);
        }
    }
    selected
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRate {
    pub count: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrescreenReport {
    pub gold_total: usize,
    pub gold_abstention_rate: f64,
    /// Fraction of gold traces flagged with each label (target < 5%).
    pub fp_rates: BTreeMap<Label, LabelRate>,
    /// Fraction of rejected traces whose intended category's checks fired
    /// (target > 60% on the detectable categories).
    pub detection: BTreeMap<Label, LabelRate>,
    pub fp_pass: bool,
    pub detection_pass: bool,
}

/// Categories the rule verifier is expected to detect directly.
pub const DETECTABLE_LABELS: [Label; 6] = [
    Label::Force,
    Label::Relation,
    Label::UnitScale,
    Label::Temporal,
    Label::Faithfulness,
    Label::Transition,
];

/// The verifier checks that correspond to each perturbation category.
pub fn checks_for_label(label: Label) -> &'static [CheckId] {
    match label {
        Label::Force => &[CheckId::ForceDirection, CheckId::ForceAccelSign],
        Label::Relation => &[CheckId::ContradictoryRelations],
        Label::UnitScale => &[
            CheckId::VariableBounds,
            CheckId::GoldVariables,
            CheckId::AnswerTrace,
        ],
        Label::Temporal => &[CheckId::TemporalMarkers],
        Label::Faithfulness => &[CheckId::AnswerTrace],
        Label::Transition => &[
            CheckId::RuleKeywords,
            CheckId::ForceAccelSign,
            CheckId::EffectResultSign,
            CheckId::EquationSanity,
        ],
        Label::Object => &[CheckId::EntityExistence],
        Label::State => &[CheckId::VariableBounds, CheckId::GoldVariables],
        Label::Intervention => &[CheckId::EffectResultSign, CheckId::AnswerTrace],
    }
}

/// Run the verifier over the gold bank and the rejected traces: per-label
/// false-positive rates on positives and detection rates on rejected pairs.
pub fn prescreen(verifier: &Verifier, gold: &[Trace], pairs: &[PreferencePair]) -> PrescreenReport {
    let mut fp_counts: BTreeMap<Label, usize> = BTreeMap::new();
    let mut abstained = 0usize;
    for trace in gold {
        let report = verifier.verify(trace, None);
        if report.has_abstention() {
            abstained += 1;
        }
        for label in &report.labels {
            *fp_counts.entry(*label).or_insert(0) += 1;
        }
    }
    let fp_rates: BTreeMap<Label, LabelRate> = Label::ALL
        .iter()
        .map(|label| {
            let count = fp_counts.get(label).copied().unwrap_or(0);
            (
                *label,
                LabelRate {
                    count,
                    total: gold.len(),
                    rate: ratio(count, gold.len()),
                },
            )
        })
        .collect();

    let mut detect_hit: BTreeMap<Label, usize> = BTreeMap::new();
    let mut detect_total: BTreeMap<Label, usize> = BTreeMap::new();
    for pair in pairs {
        *detect_total.entry(pair.label).or_insert(0) += 1;
        let report = verifier.verify(&pair.rejected, None);
        let relevant = checks_for_label(pair.label);
        if report.failed_checks.iter().any(|c| relevant.contains(c)) {
            *detect_hit.entry(pair.label).or_insert(0) += 1;
        }
    }
    let detection: BTreeMap<Label, LabelRate> = detect_total
        .iter()
        .map(|(label, total)| {
            let count = detect_hit.get(label).copied().unwrap_or(0);
            (
                *label,
                LabelRate {
                    count,
                    total: *total,
                    rate: ratio(count, *total),
                },
            )
        })
        .collect();

    let fp_pass = fp_rates
        .values()
        .all(|r| r.rate.map(|x| x < 0.05).unwrap_or(true));
    let detection_pass = DETECTABLE_LABELS.iter().all(|label| {
        detection
            .get(label)
            .and_then(|r| r.rate)
            .map(|x| x > 0.60)
            .unwrap_or(true)
    });

    PrescreenReport {
        gold_total: gold.len(),
        gold_abstention_rate: if gold.is_empty() {
            0.0
        } else {
            abstained as f64 / gold.len() as f64
        },
        fp_rates,
        detection,
        fp_pass,
        detection_pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 of verifier labels against human labels, per label.
pub fn label_prf(predicted: &[BTreeSet<Label>], actual: &[BTreeSet<Label>], label: Label) -> Prf {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (p, a) in predicted.iter().zip(actual) {
        match (p.contains(&label), a.contains(&label)) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceTier {
    Primary,
    Caveat,
    Qualitative,
}

/// Decision rule for whether a label's quantitative claims are usable.
pub fn classify_evidence_tier(f1: f64, kappa: f64) -> EvidenceTier {
    if f1 >= 0.70 && kappa >= 0.65 {
        EvidenceTier::Primary
    } else if f1 >= 0.50 {
        EvidenceTier::Caveat
    } else {
        EvidenceTier::Qualitative
    }
}

/// Annotators must reach 80% accuracy on the embedded gold checks.
pub fn annotator_gate(correct: usize, total: usize) -> bool {
    total > 0 && correct * 5 >= total * 4
}

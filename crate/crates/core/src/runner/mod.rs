//! Drives chat-completion endpoints through the evaluation conditions,
//! parses and verifies every reply inline, and writes replayable records.
//!
//! Raw responses are always persisted before parsing, so parse rates and all
//! downstream metrics are recomputable offline without re-contacting the
//! endpoint.

pub mod endpoint;
pub mod ratelimit;
mod stress;

pub use endpoint::{ChatEndpoint, ChatRequest, ChatResponse, EndpointError, HttpEndpoint,
    ReplayEndpoint, TokenField};
pub use ratelimit::{Clock, MockClock, RateLimiter, SystemClock};
pub use stress::{stress_tests, CounterfactualReport, NaturalPairsReport, StressInputs,
    StressReport};

use crate::metrics::{compute_metrics, EvalRecord, MetricsSummary};
use crate::prompts::{build_prompt, Condition, PromptError, RevisionFeedback};
use crate::rerank::{self, Candidate, RerankMode};
use crate::trace::{normalize_answer, parse_trace, AnswerType, NormalizedAnswer, Trace};
use crate::verifier::{Verifier, VerifierConfig, VerifierReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("missing runs: {0}")]
    MissingRuns(String),
}

/// One model/endpoint/condition configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_key: String,
    pub endpoint_url: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub condition: Condition,
    pub temperature: f64,
    pub max_completion_tokens: u32,
    pub rate_limit_rpm: u32,
    /// Samples per example; used by the rerank condition only.
    pub k: usize,
    pub seed: u64,
    pub token_field: TokenField,
}

impl RunConfig {
    pub fn new(model_key: &str, endpoint_url: &str, condition: Condition) -> RunConfig {
        RunConfig {
            model_key: model_key.to_string(),
            endpoint_url: endpoint_url.to_string(),
            auth_env: None,
            condition,
            temperature: condition.default_temperature(),
            max_completion_tokens: 2048,
            rate_limit_rpm: 30,
            k: 8,
            seed: 2026,
            token_field: TokenField::MaxTokens,
        }
    }

    fn samples_per_example(&self) -> usize {
        if self.condition == Condition::Rerank {
            self.k.max(1)
        } else {
            1
        }
    }
}

/// One model generation with everything derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub example_id: String,
    pub model: String,
    pub condition: Condition,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Trace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_answer: Option<NormalizedAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<VerifierReport>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    pub attempts: u32,
    #[serde(default)]
    pub sampling_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardFailure {
    pub example_id: String,
    pub error: String,
}

/// Compact per-(model, condition) summary written next to the raw records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub condition: Condition,
    pub n_examples: usize,
    pub n_records: usize,
    pub parse_rate: f64,
    pub metrics: MetricsSummary,
    pub mean_latency_ms: f64,
    pub sampling_fallbacks: usize,
    pub hard_failures: Vec<HardFailure>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_source_answer_acc: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

pub struct Runner<'a> {
    endpoint: &'a dyn ChatEndpoint,
    clock: &'a dyn Clock,
    verifier: Verifier,
}

const RETRY_ATTEMPTS: u32 = 3;
const BACKOFF_MS: [u64; 2] = [2_000, 4_000];
const FINAL_BACKOFF_MS: u64 = 8_000;

impl<'a> Runner<'a> {
    pub fn new(endpoint: &'a dyn ChatEndpoint, clock: &'a dyn Clock) -> Runner<'a> {
        Runner {
            endpoint,
            clock,
            verifier: Verifier::new(VerifierConfig::default()),
        }
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    /// Run one condition over the bank: one record per example, or `k` per
    /// example under reranking. Hard failures are logged, not fatal.
    pub fn run_condition(
        &mut self,
        bank: &[Trace],
        config: &RunConfig,
    ) -> Result<RunOutcome, RunnerError> {
        let mut limiter = RateLimiter::new(config.rate_limit_rpm);
        let mut records = Vec::new();
        let mut hard_failures = Vec::new();

        for example in bank {
            match self.run_example(example, config, &mut limiter) {
                Ok(mut example_records) => records.append(&mut example_records),
                Err(RunnerError::Endpoint(err)) => hard_failures.push(HardFailure {
                    example_id: example.id_str().to_string(),
                    error: err.to_string(),
                }),
                Err(err) => return Err(err),
            }
        }

        let summary = self.summarize(bank, config, &records, hard_failures);
        Ok(RunOutcome { records, summary })
    }

    fn run_example(
        &mut self,
        example: &Trace,
        config: &RunConfig,
        limiter: &mut RateLimiter,
    ) -> Result<Vec<RunRecord>, RunnerError> {
        match config.condition {
            Condition::Rerank => {
                let messages = build_prompt(example, Condition::Rerank, None)?;
                let mut records = Vec::with_capacity(config.k);
                for sample_index in 0..config.samples_per_example() {
                    let reply = self.ask(&messages, config, limiter)?;
                    let mut record = self.record_from_raw(example, config, reply);
                    record.sample_index = Some(sample_index);
                    record.selected = Some(false);
                    records.push(record);
                }
                self.apply_rerank_selection(&mut records);
                Ok(records)
            }
            Condition::Revise => {
                let first_messages = build_prompt(example, Condition::FullTrace, None)?;
                let first = self.ask(&first_messages, config, limiter)?;
                let first_record = self.record_from_raw(example, config, first);
                let feedback = RevisionFeedback {
                    messages: first_record
                        .report
                        .as_ref()
                        .map(|r| r.messages.clone())
                        .unwrap_or_default(),
                    labels: first_record
                        .report
                        .as_ref()
                        .map(|r| r.labels.clone())
                        .unwrap_or_default(),
                };
                let messages = build_prompt(example, Condition::Revise, Some(&feedback))?;
                let reply = self.ask(&messages, config, limiter)?;
                let mut record = self.record_from_raw(example, config, reply);
                record.previous_raw = Some(first_record.raw_text);
                Ok(vec![record])
            }
            condition => {
                let messages = build_prompt(example, condition, None)?;
                let reply = self.ask(&messages, config, limiter)?;
                Ok(vec![self.record_from_raw(example, config, reply)])
            }
        }
    }

    fn apply_rerank_selection(&self, records: &mut [RunRecord]) {
        let candidates: Vec<(usize, Candidate)> = records
            .iter()
            .enumerate()
            .filter_map(|(i, record)| {
                let trace = record.parsed.clone()?;
                let report = record.report.clone()?;
                Some((i, Candidate { trace, report, judge: None }))
            })
            .collect();
        if candidates.is_empty() {
            return;
        }
        let pool: Vec<Candidate> = candidates.iter().map(|(_, c)| c.clone()).collect();
        let (best, scores) = rerank::select(&pool, RerankMode::Rules).expect("non-empty pool");
        for ((record_idx, _), score) in candidates.iter().zip(&scores) {
            records[*record_idx].rerank_score = Some(score.total);
        }
        let (selected_idx, _) = candidates[best];
        records[selected_idx].selected = Some(true);
    }

    /// Throttled request with bounded exponential backoff (3 attempts).
    fn ask(
        &self,
        messages: &[crate::prompts::Message],
        config: &RunConfig,
        limiter: &mut RateLimiter,
    ) -> Result<Reply, RunnerError> {
        let request = ChatRequest {
            model: config.model_key.clone(),
            messages: messages.to_vec(),
            temperature: Some(config.temperature),
            max_tokens: config.max_completion_tokens,
            token_field: config.token_field,
        };
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            limiter.acquire(self.clock);
            let started = self.clock.now_ms();
            match self.endpoint.complete(&request) {
                Ok(response) => {
                    return Ok(Reply {
                        content: response.content,
                        sampling_fallback: response.sampling_fallback,
                        latency_ms: self.clock.now_ms().saturating_sub(started),
                        attempts,
                    });
                }
                Err(err) if err.is_transient() && attempts < RETRY_ATTEMPTS => {
                    let backoff = BACKOFF_MS
                        .get(attempts as usize - 1)
                        .copied()
                        .unwrap_or(FINAL_BACKOFF_MS);
                    self.clock.sleep_ms(backoff);
                }
                Err(err) => return Err(err.into()),
            }
        }
    }

    /// Persist the raw text, then parse, graft identity, normalize, verify.
    fn record_from_raw(&self, example: &Trace, config: &RunConfig, reply: Reply) -> RunRecord {
        let mut record = RunRecord {
            example_id: example.id_str().to_string(),
            model: config.model_key.clone(),
            condition: config.condition,
            raw_text: reply.content,
            previous_raw: None,
            parsed: None,
            parse_error: None,
            normalized_answer: None,
            answer_correct: None,
            report: None,
            latency_ms: reply.latency_ms,
            rerank_score: None,
            selected: None,
            sample_index: None,
            attempts: reply.attempts,
            sampling_fallback: reply.sampling_fallback,
        };
        match parse_trace(&record.raw_text) {
            Ok(mut trace) => {
                trace.graft_identity(example);
                let gold_meta = example.metadata.as_ref();
                record.report = Some(self.verifier.verify(&trace, gold_meta));
                let answer_type = gold_meta
                    .and_then(|m| m.answer_type)
                    .unwrap_or(AnswerType::Numeric);
                record.normalized_answer = trace.answer.as_ref().and_then(|a| {
                    normalize_answer(a, answer_type)
                        .or_else(|_| normalize_answer(a, AnswerType::Symbolic))
                        .ok()
                });
                let gold_answer = gold_meta
                    .and_then(|m| m.gold_answer.as_ref())
                    .and_then(|a| normalize_answer(a, answer_type).ok());
                record.answer_correct = match (&record.normalized_answer, &gold_answer) {
                    (Some(model), Some(gold)) => {
                        Some(crate::trace::answers_equal(model, gold).unwrap_or(false))
                    }
                    _ => None,
                };
                record.parsed = Some(trace);
            }
            Err(err) => record.parse_error = Some(err.to_string()),
        }
        record
    }

    fn summarize(
        &self,
        bank: &[Trace],
        config: &RunConfig,
        records: &[RunRecord],
        hard_failures: Vec<HardFailure>,
    ) -> RunSummary {
        let eval = to_eval_records(records, bank);
        let metrics = compute_metrics(&eval).unwrap_or(MetricsSummary {
            n: 0,
            answer_acc: 0.0,
            state_acc: None,
            trans_acc: None,
            trace_ans_rate: None,
            hir_all: None,
            hir_correct: None,
            abstention_rate: 0.0,
            gaps: None,
            ci: BTreeMap::new(),
        });
        let parse_rate = if records.is_empty() {
            0.0
        } else {
            records.iter().filter(|r| r.parsed.is_some()).count() as f64 / records.len() as f64
        };
        let mean_latency_ms = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.latency_ms as f64).sum::<f64>() / records.len() as f64
        };

        let mut per_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for record in &eval {
            let source = record.source.clone().unwrap_or_else(|| "unknown".to_string());
            let entry = per_source.entry(source).or_insert((0, 0));
            entry.1 += 1;
            if record.answer_correct {
                entry.0 += 1;
            }
        }

        RunSummary {
            model: config.model_key.clone(),
            condition: config.condition,
            n_examples: bank.len(),
            n_records: records.len(),
            parse_rate,
            metrics,
            mean_latency_ms,
            sampling_fallbacks: records.iter().filter(|r| r.sampling_fallback).count(),
            hard_failures,
            per_source_answer_acc: per_source
                .into_iter()
                .map(|(source, (num, den))| (source, num as f64 / den.max(1) as f64))
                .collect(),
            k: (config.condition == Condition::Rerank).then_some(config.k),
        }
    }
}

struct Reply {
    content: String,
    sampling_fallback: bool,
    latency_ms: u64,
    attempts: u32,
}

/// Convert run records into metric-ready records. For the rerank condition
/// only the selected sample per example counts toward metrics.
pub fn to_eval_records(records: &[RunRecord], bank: &[Trace]) -> Vec<EvalRecord> {
    let by_id: BTreeMap<&str, &Trace> =
        bank.iter().map(|t| (t.id_str(), t)).collect();
    records
        .iter()
        .filter(|r| r.condition != Condition::Rerank || r.selected == Some(true))
        .map(|record| {
            let example = by_id.get(record.example_id.as_str());
            let report = record.report.clone().unwrap_or_else(|| {
                // Unparseable output: schema invalid, deeper checks skipped.
                let placeholder = Trace::default();
                Verifier::new(VerifierConfig::default()).verify(&placeholder, None)
            });
            let gold_answer = example
                .and_then(|t| t.metadata.as_ref())
                .and_then(|m| {
                    let answer_type = m.answer_type.unwrap_or(AnswerType::Numeric);
                    m.gold_answer
                        .as_ref()
                        .and_then(|a| normalize_answer(a, answer_type).ok())
                });
            let mut eval = EvalRecord::new(
                record.example_id.clone(),
                record.model.clone(),
                record.condition,
                gold_answer,
                record.normalized_answer.clone(),
                report,
            );
            eval.family = example.and_then(|t| t.scenario_family.clone());
            eval.source = example
                .and_then(|t| t.metadata.as_ref())
                .map(|m| match m.source {
                    crate::trace::Source::Synthetic => "synthetic".to_string(),
                    crate::trace::Source::External => "external".to_string(),
                });
            eval.predicted_label = eval.report.labels.iter().next().copied();
            eval
        })
        .collect()
}

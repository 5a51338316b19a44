//! Trace-level evaluation of physical reasoning: a typed trace model, a
//! deterministic synthetic scenario bank, a contrastive perturbation engine,
//! a hybrid rule verifier, diagnostic metrics with bootstrap confidence
//! intervals, verifier-guided reranking, and a chat-endpoint runner.

pub mod trace;
pub mod units;
pub mod verifier;
pub mod perturb;
pub mod prompts;
pub mod scenario;
pub mod metrics;
pub mod rerank;
pub mod io;
pub mod pipeline;
pub mod runner;

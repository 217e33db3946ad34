//! Oracle abstractions: entailment judges, answer generators, retrieval
//! environments and rollout policies. Deterministic stubs live here; HTTP
//! clients live in [`crate::remote`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{AnswerSample, ContextTag};
use crate::text::normalize_answer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),

    #[error("oracle protocol error: {0}")]
    Protocol(String),

    /// The oracle cannot provide what the caller asked for, e.g. likelihoods.
    #[error("oracle capability error: {0}")]
    Capability(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    StubExact,
    StubNormalized,
    StubTable,
    Remote,
}

/// Judges `P(premise entails hypothesis | question)` in `[0, 1]`.
pub trait EntailmentOracle: Send + Sync {
    fn entail(&self, question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError>;

    fn kind(&self) -> OracleKind;
}

/// 1 on identical strings, 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchOracle;

impl EntailmentOracle for ExactMatchOracle {
    fn entail(&self, _question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError> {
        Ok(if premise == hypothesis { 1.0 } else { 0.0 })
    }

    fn kind(&self) -> OracleKind {
        OracleKind::StubExact
    }
}

/// 1 when both strings normalize to the same answer, 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatchOracle;

impl EntailmentOracle for NormalizedMatchOracle {
    fn entail(&self, _question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError> {
        Ok(if normalize_answer(premise) == normalize_answer(hypothesis) {
            1.0
        } else {
            0.0
        })
    }

    fn kind(&self) -> OracleKind {
        OracleKind::StubNormalized
    }
}

/// One directed score in a [`TableOracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub premise: String,
    pub hypothesis: String,
    pub score: f64,
}

/// Directed lookup table of entailment scores. Identical strings score 1;
/// unlisted pairs score `default`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableOracle {
    scores: HashMap<(String, String), f64>,
    default: f64,
}

impl TableOracle {
    pub fn new(default: f64) -> Self {
        Self {
            scores: HashMap::new(),
            default,
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TableEntry>, default: f64) -> Self {
        let mut t = Self::new(default);
        for e in entries {
            t.insert(e.premise, e.hypothesis, e.score);
        }
        t
    }

    pub fn insert(&mut self, premise: impl Into<String>, hypothesis: impl Into<String>, score: f64) {
        self.scores.insert((premise.into(), hypothesis.into()), score);
    }

    /// Sets both directions to the same score.
    pub fn insert_symmetric(&mut self, a: &str, b: &str, score: f64) {
        self.insert(a, b, score);
        self.insert(b, a, score);
    }
}

impl EntailmentOracle for TableOracle {
    fn entail(&self, _question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError> {
        if premise == hypothesis {
            return Ok(1.0);
        }
        Ok(self
            .scores
            .get(&(premise.to_owned(), hypothesis.to_owned()))
            .copied()
            .unwrap_or(self.default))
    }

    fn kind(&self) -> OracleKind {
        OracleKind::StubTable
    }
}

type JudgmentKey = (String, String, String);

/// Wraps an oracle with a concurrent judgment cache keyed on
/// `(question, premise, hypothesis)` and counts calls that reach the oracle.
pub struct EntailmentJudge {
    oracle: Arc<dyn EntailmentOracle>,
    cache: DashMap<JudgmentKey, f64>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for EntailmentJudge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EntailmentJudge")
            .field("kind", &self.oracle.kind())
            .field("cached", &self.cache.len())
            .field("calls", &self.oracle_calls())
            .finish()
    }
}

impl EntailmentJudge {
    pub fn new(oracle: Arc<dyn EntailmentOracle>) -> Self {
        Self {
            oracle,
            cache: DashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn kind(&self) -> OracleKind {
        self.oracle.kind()
    }

    /// Number of judgments that were forwarded to the underlying oracle.
    pub fn oracle_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Cached directional score. Inputs are trimmed before lookup.
    pub fn score(&self, question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError> {
        let key = (
            question.trim().to_owned(),
            premise.trim().to_owned(),
            hypothesis.trim().to_owned(),
        );
        if let Some(hit) = self.cache.get(&key) {
            return Ok(*hit);
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let p = self.oracle.entail(&key.0, &key.1, &key.2)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(OracleError::Protocol(format!(
                "entailment score {p} outside [0, 1]"
            )));
        }
        // a concurrent caller may have filled the slot; keep the first value
        Ok(*self.cache.entry(key).or_insert(p))
    }
}

/// Request for `n` answer samples under one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub context: ContextTag,
    /// Require per-sample log-likelihoods in the response.
    pub want_logprobs: bool,
    /// Seed for stochastic stubs; remote generators ignore it.
    pub seed: u64,
}

/// Samples answers with their sequence log-likelihoods.
pub trait GenerationOracle: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<AnswerSample>, OracleError>;
}

/// Returns the same fixed sample lists for every prompt of a context.
#[derive(Debug, Clone, Default)]
pub struct FixedGenerator {
    pub prior: Vec<AnswerSample>,
    pub posterior: Vec<AnswerSample>,
}

impl GenerationOracle for FixedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<AnswerSample>, OracleError> {
        let pool = match request.context {
            ContextTag::Prior => &self.prior,
            ContextTag::Posterior => &self.posterior,
        };
        if pool.is_empty() {
            return Err(OracleError::Unavailable(format!(
                "no canned samples for the {} context",
                request.context
            )));
        }
        Ok(pool
            .iter()
            .cycle()
            .take(request.n)
            .cloned()
            .map(|mut s| {
                s.context = request.context;
                s
            })
            .collect())
    }
}

/// One retrieved document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            text: text.into(),
        }
    }
}

/// Search backend queried by `<search>` actions.
pub trait RetrievalEnv: Send + Sync {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, OracleError>;
}

/// One keyed document of a [`StubRetrievalEnv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    pub key: String,
    pub title: String,
    pub text: String,
}

/// In-memory environment returning, in insertion order, every document whose
/// key occurs (case-insensitively) as a substring of the query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRetrievalEnv {
    pub entries: Vec<StubEntry>,
}

impl StubRetrievalEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, title: &str, text: &str) -> Self {
        self.entries.push(StubEntry {
            key: key.into(),
            title: title.into(),
            text: text.into(),
        });
        self
    }
}

impl RetrievalEnv for StubRetrievalEnv {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, OracleError> {
        let q = query.to_lowercase();
        Ok(self
            .entries
            .iter()
            .filter(|e| q.contains(&e.key.to_lowercase()))
            .take(top_k)
            .map(|e| Document::new(&e.title, &e.text))
            .collect())
    }
}

/// The acting model of a rollout: maps the running context to its next
/// output. `call_index` counts generations within the rollout so scripted and
/// seeded policies stay pure.
pub trait Policy: Send + Sync {
    fn act(&self, context: &str, call_index: usize) -> Result<String, OracleError>;
}

/// Replays a fixed list of outputs; errors once the script is exhausted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub outputs: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(outputs: impl IntoIterator<Item = S>) -> Self {
        Self {
            outputs: outputs.into_iter().map(Into::into).collect(),
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&self, _context: &str, call_index: usize) -> Result<String, OracleError> {
        self.outputs.get(call_index).cloned().ok_or_else(|| {
            OracleError::Unavailable(format!("script exhausted at call {call_index}"))
        })
    }
}

/// Drives a rollout with a generation oracle, one sample per call.
pub struct GeneratorPolicy<G> {
    pub generator: G,
    pub temperature: f64,
    pub seed: u64,
}

impl<G: GenerationOracle> Policy for GeneratorPolicy<G> {
    fn act(&self, context: &str, call_index: usize) -> Result<String, OracleError> {
        let request = GenerationRequest {
            prompt: context.to_owned(),
            n: 1,
            temperature: self.temperature,
            context: ContextTag::Posterior,
            want_logprobs: false,
            seed: crate::seeds::derive(self.seed, call_index as u64),
        };
        self.generator
            .generate(&request)?
            .into_iter()
            .next()
            .map(|s| s.text)
            .ok_or_else(|| OracleError::Protocol("generator returned no samples".into()))
    }
}

//! HTTP clients for generation, entailment and search endpoints.
//!
//! All three speak small JSON contracts:
//!
//! - `POST {base}/generate` `{prompt, n, temperature, max_tokens, logprobs}`
//!   → `{samples: [{text, logprob?, token_logprobs?}]}`
//! - `POST {base}/entail` `{premise, hypothesis}` or
//!   `{context, premise, hypothesis}` → `{entailment}`
//! - `POST {base}/search` `{query, top_k}` → `{documents: [{title, text}]}`
//!
//! Transport failures, timeouts, 429 and 5xx responses are retried with
//! exponential backoff; other 4xx responses fail immediately.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::oracle::{
    Document, EntailmentOracle, GenerationOracle, GenerationRequest, OracleError, OracleKind, RetrievalEnv,
};
use crate::sample::AnswerSample;

/// How the question reaches the entailment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLayout {
    /// `premise = question + " " + premise`.
    #[default]
    ContextPrepended,
    /// The question is sent in its own `context` field.
    SeparateField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleEndpointConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Name of the environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub nli_layout: NliLayout,
    pub max_tokens: usize,
    /// First backoff delay; doubled after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for OracleEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            auth_env: None,
            nli_layout: NliLayout::default(),
            max_tokens: 64,
            backoff_ms: 200,
        }
    }
}

impl OracleEndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(OracleError::Protocol(format!("base url {:?} is not http(s)", self.base_url)));
        }
        if self.timeout_ms == 0 {
            return Err(OracleError::Protocol("timeout_ms must be > 0".into()));
        }
        Ok(())
    }
}

/// Shared, connection-pooled JSON client.
#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    cfg: OracleEndpointConfig,
}

fn retryable(err: &ureq::Error) -> bool {
    match err {
        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => true,
        _ => false,
    }
}

impl HttpClient {
    pub fn new(cfg: OracleEndpointConfig) -> Result<Self, OracleError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(Self { agent, cfg })
    }

    pub fn config(&self) -> &OracleEndpointConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn token(&self) -> Result<Option<String>, OracleError> {
        match &self.cfg.auth_env {
            None => Ok(None),
            Some(name) => std::env::var(name)
                .map(Some)
                .map_err(|_| OracleError::Unavailable(format!("auth variable {name} is not set"))),
        }
    }

    pub fn post_json<T: DeserializeOwned>(&self, path: &str, body: &Value) -> Result<T, OracleError> {
        let url = self.url(path);
        let token = self.token()?;
        let mut attempt = 0;
        loop {
            let mut req = self.agent.post(&url);
            if let Some(t) = &token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body) {
                Ok(resp) => {
                    return resp
                        .into_body()
                        .read_json::<T>()
                        .map_err(|e| OracleError::Protocol(format!("{url}: malformed response: {e}")))
                }
                Err(e) if retryable(&e) && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::warn!(%url, attempt, error = %e, delay_ms = delay, "retrying request");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) if retryable(&e) => {
                    return Err(OracleError::Unavailable(format!(
                        "{url}: {e} (after {} attempts)",
                        attempt + 1
                    )))
                }
                Err(e) => return Err(OracleError::Protocol(format!("{url}: {e}"))),
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct WireSample {
    text: String,
    #[serde(default)]
    logprob: Option<f64>,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    samples: Vec<WireSample>,
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: HttpClient,
}

impl RemoteGenerator {
    pub fn new(cfg: OracleEndpointConfig) -> Result<Self, OracleError> {
        Ok(Self { client: HttpClient::new(cfg)? })
    }
}

impl GenerationOracle for RemoteGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<AnswerSample>, OracleError> {
        if request.n == 0 {
            return Err(OracleError::Protocol("n must be >= 1".into()));
        }
        let body = json!({
            "prompt": request.prompt,
            "n": request.n,
            "temperature": request.temperature,
            "max_tokens": self.client.config().max_tokens,
            "logprobs": true,
        });
        let resp: GenerateResponse = self.client.post_json("generate", &body)?;
        if resp.samples.len() != request.n {
            return Err(OracleError::Protocol(format!(
                "asked for {} samples, got {}",
                request.n,
                resp.samples.len()
            )));
        }
        let mut out = Vec::with_capacity(resp.samples.len());
        for (i, w) in resp.samples.into_iter().enumerate() {
            let total = w
                .logprob
                .or_else(|| w.token_logprobs.as_ref().map(|t| t.iter().sum()));
            if request.want_logprobs && total.is_none() {
                return Err(OracleError::Capability(format!(
                    "sample {i} has no log-likelihood; use frequency mass mode"
                )));
            }
            out.push(AnswerSample {
                context: request.context,
                text: w.text,
                total_logprob: total,
                token_logprobs: w.token_logprobs,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize)]
struct EntailResponse {
    entailment: f64,
}

#[derive(Debug, Clone)]
pub struct RemoteEntailment {
    client: HttpClient,
}

impl RemoteEntailment {
    pub fn new(cfg: OracleEndpointConfig) -> Result<Self, OracleError> {
        Ok(Self { client: HttpClient::new(cfg)? })
    }

    /// Request body for one judgment under the configured layout.
    pub fn body(&self, question: &str, premise: &str, hypothesis: &str) -> Value {
        entail_body(self.client.config().nli_layout, question, premise, hypothesis)
    }
}

pub fn entail_body(layout: NliLayout, question: &str, premise: &str, hypothesis: &str) -> Value {
    match layout {
        NliLayout::ContextPrepended => json!({
            "premise": format!("{question} {premise}"),
            "hypothesis": hypothesis,
        }),
        NliLayout::SeparateField => json!({
            "context": question,
            "premise": premise,
            "hypothesis": hypothesis,
        }),
    }
}

impl EntailmentOracle for RemoteEntailment {
    fn entail(&self, question: &str, premise: &str, hypothesis: &str) -> Result<f64, OracleError> {
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(OracleError::Protocol("premise and hypothesis must be non-empty".into()));
        }
        let resp: EntailResponse = self.client.post_json("entail", &self.body(question, premise, hypothesis))?;
        if !(0.0..=1.0).contains(&resp.entailment) {
            return Err(OracleError::Protocol(format!("entailment {} outside [0, 1]", resp.entailment)));
        }
        Ok(resp.entailment)
    }

    fn kind(&self) -> OracleKind {
        OracleKind::Remote
    }
}

#[derive(Debug, Deserialize)]
struct SearchResponse {
    documents: Vec<Document>,
}

#[derive(Debug, Clone)]
pub struct RemoteSearchEnv {
    client: HttpClient,
}

impl RemoteSearchEnv {
    pub fn new(cfg: OracleEndpointConfig) -> Result<Self, OracleError> {
        Ok(Self { client: HttpClient::new(cfg)? })
    }
}

impl RetrievalEnv for RemoteSearchEnv {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, OracleError> {
        let resp: SearchResponse = self.client.post_json("search", &json!({ "query": query, "top_k": top_k }))?;
        Ok(resp.documents.into_iter().take(top_k).collect())
    }
}

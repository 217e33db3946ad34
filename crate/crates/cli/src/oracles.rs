//! Oracle specifications on the command line: `kind:argument` strings.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use semgain::oracle::{
    Document, EntailmentJudge, EntailmentOracle, ExactMatchOracle, FixedGenerator, GenerationOracle,
    GenerationRequest, NormalizedMatchOracle, OracleError, Policy, RetrievalEnv, ScriptedPolicy, StubEntry,
    StubRetrievalEnv, TableEntry, TableOracle,
};
use semgain::records::{read_jsonl, read_samples};
use semgain::remote::{RemoteEntailment, RemoteGenerator, RemoteSearchEnv};
use semgain::sample::{AnswerSample, ContextTag};
use semgain::seeds;

use crate::args::EndpointArgs;
use crate::error::CliError;

fn split(spec: &str) -> Result<(&str, &str), CliError> {
    spec.split_once(':')
        .ok_or_else(|| CliError::invalid(format!("oracle spec {spec:?} is not of the form kind:argument")))
}

fn unknown(what: &str, spec: &str, accepted: &str) -> CliError {
    CliError::invalid(format!("unknown {what} {spec:?}; expected {accepted}"))
}

// A malformed endpoint is a configuration problem, not a transport failure.
fn endpoint_error(e: OracleError) -> CliError {
    CliError::invalid(e.to_string())
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

pub fn load_samples(path: &Path) -> Result<Vec<AnswerSample>, CliError> {
    read_samples(open(path)?).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn judge(spec: &str, endpoint: &EndpointArgs) -> Result<EntailmentJudge, CliError> {
    let (kind, arg) = split(spec)?;
    let oracle: Arc<dyn EntailmentOracle> = match (kind, arg) {
        ("stub", "normalized") => Arc::new(NormalizedMatchOracle),
        ("stub", "exact") => Arc::new(ExactMatchOracle),
        ("table", path) => {
            let entries: Vec<TableEntry> = read_jsonl(open(Path::new(path))?)?;
            Arc::new(TableOracle::from_entries(entries, 0.0))
        }
        ("remote", url) => Arc::new(RemoteEntailment::new(endpoint.endpoint(url)).map_err(endpoint_error)?),
        _ => {
            return Err(unknown(
                "entailment oracle",
                spec,
                "stub:normalized, stub:exact, table:<file> or remote:<url>",
            ))
        }
    };
    Ok(EntailmentJudge::new(oracle))
}

pub fn generator(spec: &str, endpoint: &EndpointArgs) -> Result<Box<dyn GenerationOracle>, CliError> {
    match split(spec)? {
        ("remote", url) => Ok(Box::new(RemoteGenerator::new(endpoint.endpoint(url)).map_err(endpoint_error)?)),
        ("fixed", path) => {
            let samples = load_samples(Path::new(path))?;
            let (prior, posterior) = samples.into_iter().partition(|s| s.context == ContextTag::Prior);
            Ok(Box::new(FixedGenerator { prior, posterior }))
        }
        _ => Err(unknown("generator", spec, "remote:<url> or fixed:<samples.jsonl>")),
    }
}

/// Retrieval environment shared by every rollout of a group.
#[derive(Clone)]
pub struct SharedEnv(Arc<dyn RetrievalEnv>);

impl RetrievalEnv for SharedEnv {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, OracleError> {
        self.0.search(query, top_k)
    }
}

pub fn env(spec: &str, endpoint: &EndpointArgs) -> Result<SharedEnv, CliError> {
    let inner: Arc<dyn RetrievalEnv> = match split(spec)? {
        ("stub", path) => {
            let entries: Vec<StubEntry> = read_jsonl(open(Path::new(path))?)?;
            Arc::new(StubRetrievalEnv { entries })
        }
        ("remote", url) => Arc::new(RemoteSearchEnv::new(endpoint.endpoint(url)).map_err(endpoint_error)?),
        _ => return Err(unknown("environment", spec, "stub:<docs.jsonl> or remote:<url>")),
    };
    Ok(SharedEnv(inner))
}

/// Where the acting policy's outputs come from.
#[derive(Clone)]
pub enum PolicySource {
    Script(ScriptedPolicy),
    Remote(Arc<RemoteGenerator>),
}

pub fn policy(spec: &str, endpoint: &EndpointArgs) -> Result<PolicySource, CliError> {
    match split(spec)? {
        ("script", path) => {
            let outputs: Vec<String> = serde_json::from_reader(open(Path::new(path))?)
                .map_err(|e| CliError::invalid(format!("{path}: {e}")))?;
            Ok(PolicySource::Script(ScriptedPolicy::new(outputs)))
        }
        ("remote", url) => Ok(PolicySource::Remote(Arc::new(
            RemoteGenerator::new(endpoint.endpoint(url)).map_err(endpoint_error)?,
        ))),
        _ => Err(unknown("policy", spec, "script:<outputs.json> or remote:<url>")),
    }
}

/// The policy of one rollout in a group.
pub struct SeededPolicy {
    pub source: PolicySource,
    pub temperature: f64,
    pub seed: u64,
}

impl Policy for SeededPolicy {
    fn act(&self, context: &str, call_index: usize) -> Result<String, OracleError> {
        match &self.source {
            PolicySource::Script(script) => script.act(context, call_index),
            PolicySource::Remote(generator) => {
                let request = GenerationRequest {
                    prompt: context.to_owned(),
                    n: 1,
                    temperature: self.temperature,
                    context: ContextTag::Posterior,
                    want_logprobs: false,
                    seed: seeds::derive(self.seed, call_index as u64),
                };
                generator
                    .generate(&request)?
                    .into_iter()
                    .next()
                    .map(|s| s.text)
                    .ok_or_else(|| OracleError::Protocol("generator returned no sample".into()))
            }
        }
    }
}

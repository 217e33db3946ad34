//! Semantic clustering of sampled answers.
//!
//! Two answers are connected when the entailment judge scores both directions
//! above `tau`. Classes are the connected components of that graph, so
//! non-transitive judgments are closed deterministically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::log_sum_exp;
use crate::oracle::{EntailmentJudge, OracleError};
use crate::sample::AnswerSample;
use crate::union_find::UnionFind;

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("entailment oracle failed on ({premise:?}, {hypothesis:?}): {source}")]
    Oracle {
        premise: String,
        hypothesis: String,
        #[source]
        source: OracleError,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(ClusterError::InvalidInput(format!("tau {tau} not in (0, 1)")))
    }
}

fn directional(judge: &EntailmentJudge, question: &str, premise: &str, hypothesis: &str) -> Result<f64> {
    judge
        .score(question, premise, hypothesis)
        .map_err(|source| ClusterError::Oracle {
            premise: premise.to_owned(),
            hypothesis: hypothesis.to_owned(),
            source,
        })
}

/// Bidirectional entailment test: both directions must exceed `tau`.
pub fn judge_pair(judge: &EntailmentJudge, question: &str, a: &str, b: &str, tau: f64) -> Result<bool> {
    check_tau(tau)?;
    Ok(directional(judge, question, a, b)? > tau && directional(judge, question, b, a)? > tau)
}

/// Partition of sample indices into semantic classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPartition {
    /// Disjoint, covering, non-empty; ordered by smallest member.
    pub classes: Vec<Vec<usize>>,
    /// Log of the summed sequence likelihood of each class, when every member
    /// carries a likelihood.
    pub class_logmass: Vec<Option<f64>>,
    pub tau: f64,
}

impl SemanticPartition {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_samples(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    /// Class index of every sample.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.num_samples()];
        for (c, members) in self.classes.iter().enumerate() {
            for m in members {
                labels[*m] = c;
            }
        }
        labels
    }

    /// Checks disjointness, coverage of `0..m` and non-emptiness.
    pub fn is_valid_for(&self, m: usize) -> bool {
        let mut seen = vec![false; m];
        for class in &self.classes {
            if class.is_empty() {
                return false;
            }
            for i in class {
                if *i >= m || seen[*i] {
                    return false;
                }
                seen[*i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Distinct trimmed texts in first-occurrence order with their sample indices.
fn unique_texts(samples: &[AnswerSample]) -> Vec<(&str, Vec<usize>)> {
    let mut out: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        let t = s.text.trim();
        match index.get(t) {
            Some(slot) => out[*slot].1.push(i),
            None => {
                index.insert(t, out.len());
                out.push((t, vec![i]));
            }
        }
    }
    out
}

/// Clusters `samples` into semantic classes.
///
/// Identical texts are judged once against themselves; every pair of distinct
/// texts is judged in both directions. Judgments run concurrently and are
/// folded into the graph in pair order, so the result does not depend on
/// scheduling.
pub fn build_partition(
    samples: &[AnswerSample],
    judge: &EntailmentJudge,
    question: &str,
    tau: f64,
) -> Result<SemanticPartition> {
    check_tau(tau)?;
    let first = samples
        .first()
        .ok_or_else(|| ClusterError::InvalidInput("no samples to cluster".into()))?;
    if samples.iter().any(|s| s.context != first.context) {
        return Err(ClusterError::InvalidInput(
            "samples mix prior and posterior contexts".into(),
        ));
    }

    let uniq = unique_texts(samples);
    let mut uf = UnionFind::new(samples.len());

    let dup_links: Vec<Result<bool>> = uniq
        .par_iter()
        .map(|(text, members)| {
            if members.len() < 2 {
                return Ok(false);
            }
            judge_pair(judge, question, text, text, tau)
        })
        .collect();
    for ((_, members), linked) in uniq.iter().zip(dup_links) {
        if linked? {
            for m in &members[1..] {
                uf.union(members[0], *m);
            }
        }
    }

    let pairs: Vec<(usize, usize)> = (0..uniq.len())
        .flat_map(|u| (u + 1..uniq.len()).map(move |v| (u, v)))
        .collect();
    let edges: Vec<Result<bool>> = pairs
        .par_iter()
        .map(|(u, v)| judge_pair(judge, question, uniq[*u].0, uniq[*v].0, tau))
        .collect();
    for ((u, v), linked) in pairs.iter().zip(edges) {
        if linked? {
            uf.union(uniq[*u].1[0], uniq[*v].1[0]);
        }
    }

    let classes = uf.sets();
    let class_logmass = classes
        .iter()
        .map(|members| {
            let lps: Option<Vec<f64>> = members.iter().map(|i| samples[*i].total_logprob).collect();
            lps.map(|v| log_sum_exp(&v))
        })
        .collect();
    Ok(SemanticPartition {
        classes,
        class_logmass,
        tau,
    })
}

/// Outcome of locating the class consistent with the golden answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenMatch {
    pub class: Option<usize>,
    /// Every class with a member bidirectionally entailed with the golden answer.
    pub candidates: Vec<usize>,
    pub ambiguous: bool,
}

/// Finds the class containing an answer equivalent to `golden`. When several
/// classes match, the one with the largest likelihood mass (then the largest
/// size, then the lowest index) wins and the match is flagged ambiguous.
pub fn find_golden_class(
    partition: &SemanticPartition,
    samples: &[AnswerSample],
    golden: &str,
    judge: &EntailmentJudge,
    question: &str,
) -> Result<GoldenMatch> {
    if golden.trim().is_empty() {
        return Err(ClusterError::InvalidInput("golden answer is empty".into()));
    }
    let mut candidates = Vec::new();
    for (c, members) in partition.classes.iter().enumerate() {
        let mut tried: Vec<&str> = Vec::new();
        for m in members {
            let text = samples[*m].text.trim();
            if tried.contains(&text) {
                continue;
            }
            tried.push(text);
            if judge_pair(judge, question, text, golden, partition.tau)? {
                candidates.push(c);
                break;
            }
        }
    }
    let class = candidates.iter().copied().max_by(|a, b| {
        let ma = partition.class_logmass[*a].unwrap_or(f64::NEG_INFINITY);
        let mb = partition.class_logmass[*b].unwrap_or(f64::NEG_INFINITY);
        ma.total_cmp(&mb)
            .then(partition.classes[*a].len().cmp(&partition.classes[*b].len()))
            .then(b.cmp(a))
    });
    let ambiguous = candidates.len() > 1;
    if ambiguous {
        tracing::warn!(?candidates, chosen = ?class, "golden answer matches several semantic classes");
    }
    Ok(GoldenMatch {
        class,
        candidates,
        ambiguous,
    })
}

//! Semantic information-gain reward.
//!
//! The model is sampled `M` times with the question alone (prior context `B`)
//! and `M` times with the question plus retrieved evidence (posterior context
//! `C`). Each sample set is clustered into semantic classes and turned into a
//! distribution over classes. The step reward is either the drop in semantic
//! entropy or the log-ratio of the probability assigned to the class holding
//! the golden answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::entropy_nats;
use crate::cluster::{build_partition, find_golden_class, ClusterError, SemanticPartition};
use crate::numeric::{log_sum_exp, mean};
use crate::oracle::{EntailmentJudge, GenerationOracle, GenerationRequest, OracleError};
use crate::sample::{AnswerSample, ContextTag, SampleError};
use crate::seeds;

const PRIOR_INSTRUCTION: &str =
    "Answer the question based on your own knowledge. Only give me the answer and do not output any other words.";
const POSTERIOR_INSTRUCTION: &str =
    "Answer the question based on the given document. Only give me the answer and do not output any other words.";

/// Prompt for sampling answers from the question alone.
pub fn prior_prompt(question: &str) -> String {
    format!("{PRIOR_INSTRUCTION}\nQuestion: {question}")
}

/// Prompt for sampling answers given retrieved documents.
pub fn posterior_prompt(question: &str, documents: &str) -> String {
    format!("{POSTERIOR_INSTRUCTION}\nThe following are given documents. {documents}\nQuestion: {question}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgVariant {
    /// `ln p(c* | C) - ln p(c* | B)`.
    #[default]
    GoldenLogratio,
    /// `H_sem(B) - H_sem(C)`.
    EntropyDiff,
}

/// How each sample contributes to its class mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMode {
    /// `exp(total log-likelihood)`.
    #[default]
    RawLikelihood,
    /// `exp(mean per-token log-likelihood)`.
    LengthNormalized,
    /// One unit per sample.
    Frequency,
}

impl MassMode {
    pub fn needs_likelihood(self) -> bool {
        !matches!(self, MassMode::Frequency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    /// Samples drawn per context (`M`).
    pub samples_per_context: usize,
    pub tau: f64,
    pub lambda: f64,
    pub variant: IgVariant,
    pub mass_mode: MassMode,
    pub prob_floor: f64,
    pub temperature: f64,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            samples_per_context: 12,
            tau: crate::cluster::DEFAULT_TAU,
            lambda: 0.6,
            variant: IgVariant::GoldenLogratio,
            mass_mode: MassMode::RawLikelihood,
            prob_floor: 1e-6,
            temperature: 1.0,
        }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RewardError::InvalidConfig(msg));
        if self.samples_per_context < 2 {
            return bad(format!("M = {} < 2", self.samples_per_context));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} not in (0, 1)", self.tau));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda {} < 0", self.lambda));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-2) {
            return bad(format!("prob_floor {} not in (0, 1e-2]", self.prob_floor));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature {} <= 0", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("sample {index} has no likelihood; use frequency mass mode")]
    MissingLikelihood { index: usize },

    #[error("invalid sample {index}: {source}")]
    InvalidSample {
        index: usize,
        #[source]
        source: SampleError,
    },

    #[error("partition does not cover the sample list")]
    PartitionMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unusable evidence: {0}")]
    Evidence(String),

    #[error("{phase} phase: {source}")]
    Generation {
        phase: ContextTag,
        #[source]
        source: OracleError,
    },

    #[error("{phase} phase: {source}")]
    Clustering {
        phase: ContextTag,
        #[source]
        source: ClusterError,
    },
}

pub type Result<T> = std::result::Result<T, RewardError>;

/// Normalized distribution over the semantic classes of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
    pub golden_index: Option<usize>,
    pub context: ContextTag,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>, golden_index: Option<usize>, context: ContextTag) -> Self {
        Self {
            probs,
            golden_index,
            context,
        }
    }

    pub fn golden_prob(&self) -> Option<f64> {
        self.golden_index.map(|g| self.probs[g])
    }
}

/// Class masses renormalized over the sampled set.
pub fn class_probabilities(
    partition: &SemanticPartition,
    samples: &[AnswerSample],
    mass_mode: MassMode,
) -> Result<ClassDistribution> {
    if !partition.is_valid_for(samples.len()) {
        return Err(RewardError::PartitionMismatch);
    }
    let weight = |i: usize| -> Result<f64> {
        let s = &samples[i];
        match mass_mode {
            MassMode::Frequency => Ok(0.0),
            MassMode::RawLikelihood => s.total_logprob.ok_or(RewardError::MissingLikelihood { index: i }),
            MassMode::LengthNormalized => {
                let total = s.total_logprob.ok_or(RewardError::MissingLikelihood { index: i })?;
                let len = s
                    .token_logprobs
                    .as_ref()
                    .map(Vec::len)
                    .filter(|n| *n > 0)
                    .ok_or(RewardError::MissingLikelihood { index: i })?;
                Ok(total / len as f64)
            }
        }
    };
    if mass_mode.needs_likelihood() {
        for (index, s) in samples.iter().enumerate() {
            s.validate().map_err(|source| RewardError::InvalidSample { index, source })?;
        }
    }
    let mut log_masses = Vec::with_capacity(partition.num_classes());
    for members in &partition.classes {
        let ws = members.iter().map(|i| weight(*i)).collect::<Result<Vec<_>>>()?;
        log_masses.push(log_sum_exp(&ws));
    }
    let log_total = log_sum_exp(&log_masses);
    let probs = log_masses.iter().map(|m| (m - log_total).exp()).collect();
    let context = samples.first().map(|s| s.context).unwrap_or(ContextTag::Prior);
    Ok(ClassDistribution::new(probs, None, context))
}

/// Entropy of the class distribution, in nats.
pub fn semantic_entropy(dist: &ClassDistribution) -> f64 {
    entropy_nats(&dist.probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgResult {
    pub ig_value: f64,
    pub variant: IgVariant,
    pub entropy_prior: f64,
    pub entropy_post: f64,
    pub p_golden_prior: Option<f64>,
    pub p_golden_post: Option<f64>,
    pub golden_missing_prior: bool,
    pub golden_missing_post: bool,
}

/// Information gain between the prior and posterior class distributions.
///
/// Under the golden log-ratio, a context whose samples never hit the golden
/// class is assigned `prob_floor` and flagged instead of failing.
pub fn compute_ig(prior: &ClassDistribution, post: &ClassDistribution, cfg: &IgConfig) -> IgResult {
    let entropy_prior = semantic_entropy(prior);
    let entropy_post = semantic_entropy(post);
    let p_golden_prior = prior.golden_prob();
    let p_golden_post = post.golden_prob();
    let floored = |p: Option<f64>| p.unwrap_or(0.0).max(cfg.prob_floor).ln();
    let ig_value = match cfg.variant {
        IgVariant::EntropyDiff => entropy_prior - entropy_post,
        IgVariant::GoldenLogratio => floored(p_golden_post) - floored(p_golden_prior),
    };
    IgResult {
        ig_value,
        variant: cfg.variant,
        entropy_prior,
        entropy_post,
        p_golden_prior,
        p_golden_post,
        golden_missing_prior: p_golden_prior.is_none(),
        golden_missing_post: p_golden_post.is_none(),
    }
}

/// Everything computed for one context while estimating a step reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEstimate {
    pub samples: Vec<AnswerSample>,
    pub partition: SemanticPartition,
    pub distribution: ClassDistribution,
    pub golden_ambiguous: bool,
}

/// Clusters one context's samples and locates the golden class.
pub fn estimate_belief(
    samples: Vec<AnswerSample>,
    question: &str,
    golden: &str,
    judge: &EntailmentJudge,
    cfg: &IgConfig,
) -> std::result::Result<ContextEstimate, ClusterError> {
    let partition = build_partition(&samples, judge, question, cfg.tau)?;
    let golden_match = find_golden_class(&partition, &samples, golden, judge, question)?;
    let mut distribution = class_probabilities(&partition, &samples, cfg.mass_mode)
        .map_err(|e| ClusterError::InvalidInput(e.to_string()))?;
    distribution.golden_index = golden_match.class;
    Ok(ContextEstimate {
        samples,
        partition,
        distribution,
        golden_ambiguous: golden_match.ambiguous,
    })
}

/// Detailed step estimate, keeping both contexts for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEstimate {
    pub prior: ContextEstimate,
    pub posterior: ContextEstimate,
    pub result: IgResult,
}

#[allow(clippy::too_many_arguments)]
fn run_context(
    phase: ContextTag,
    prompt: String,
    question: &str,
    golden: &str,
    sampler: &dyn GenerationOracle,
    judge: &EntailmentJudge,
    cfg: &IgConfig,
    seed: u64,
) -> Result<ContextEstimate> {
    let request = GenerationRequest {
        prompt,
        n: cfg.samples_per_context,
        temperature: cfg.temperature,
        context: phase,
        want_logprobs: cfg.mass_mode.needs_likelihood(),
        seed,
    };
    let mut samples = sampler
        .generate(&request)
        .map_err(|source| RewardError::Generation { phase, source })?;
    for s in &mut samples {
        s.context = phase;
    }
    if cfg.mass_mode.needs_likelihood() {
        if let Some(index) = samples.iter().position(|s| s.total_logprob.is_none()) {
            return Err(RewardError::Generation {
                phase,
                source: OracleError::Capability(format!(
                    "sample {index} has no likelihood; use frequency mass mode"
                )),
            });
        }
    }
    estimate_belief(samples, question, golden, judge, cfg)
        .map_err(|source| RewardError::Clustering { phase, source })
}

/// Estimates the information gain contributed by `evidence` for `question`.
///
/// The two contexts are sampled and clustered concurrently with sub-seeds
/// derived from `seed`.
pub fn estimate_step_ig_detailed(
    question: &str,
    evidence: &[String],
    golden: &str,
    sampler: &dyn GenerationOracle,
    judge: &EntailmentJudge,
    cfg: &IgConfig,
    seed: u64,
) -> Result<StepEstimate> {
    cfg.validate()?;
    let documents = evidence.join("\n");
    let (prior, posterior) = rayon::join(
        || {
            run_context(
                ContextTag::Prior,
                prior_prompt(question),
                question,
                golden,
                sampler,
                judge,
                cfg,
                seeds::derive(seed, 0),
            )
        },
        || {
            run_context(
                ContextTag::Posterior,
                posterior_prompt(question, &documents),
                question,
                golden,
                sampler,
                judge,
                cfg,
                seeds::derive(seed, 1),
            )
        },
    );
    let (prior, posterior) = (prior?, posterior?);
    let result = compute_ig(&prior.distribution, &posterior.distribution, cfg);
    Ok(StepEstimate {
        prior,
        posterior,
        result,
    })
}

pub fn estimate_step_ig(
    question: &str,
    evidence: &[String],
    golden: &str,
    sampler: &dyn GenerationOracle,
    judge: &EntailmentJudge,
    cfg: &IgConfig,
    seed: u64,
) -> Result<IgResult> {
    estimate_step_ig_detailed(question, evidence, golden, sampler, judge, cfg, seed).map(|s| s.result)
}

/// `em + lambda * mean(step_igs)`; without retrieval steps the reward is `em`.
pub fn composite_reward(em: u8, step_igs: &[f64], lambda: f64) -> f64 {
    let em = f64::from(em);
    if step_igs.is_empty() {
        return em;
    }
    em + lambda * mean(step_igs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ExactMatchOracle, FixedGenerator};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn part(classes: Vec<Vec<usize>>) -> SemanticPartition {
        let n = classes.len();
        SemanticPartition {
            classes,
            class_logmass: vec![None; n],
            tau: 0.5,
        }
    }

    fn s(lp: f64) -> AnswerSample {
        AnswerSample::new(ContextTag::Prior, "x", lp)
    }

    #[test]
    fn class_probability_examples() {
        let d = class_probabilities(&part(vec![vec![0], vec![1]]), &[s(-2.0), s(-2.0)], MassMode::RawLikelihood)
            .unwrap();
        assert_abs_diff_eq!(d.probs[0], 0.5, epsilon = 1e-15);

        let samples = vec![s(-1.0); 4];
        let d = class_probabilities(&part(vec![vec![0, 1, 2], vec![3]]), &samples, MassMode::Frequency).unwrap();
        assert_abs_diff_eq!(d.probs[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d.probs[1], 0.25, epsilon = 1e-15);

        let samples = vec![s(-1.0), s(-1.0), s(-2.0)];
        let d = class_probabilities(&part(vec![vec![0, 1], vec![2]]), &samples, MassMode::RawLikelihood).unwrap();
        let a = 2.0 * (-1f64).exp();
        let b = (-2f64).exp();
        assert_abs_diff_eq!(d.probs[0], a / (a + b), epsilon = 1e-12);
        assert!((d.probs[0] - 0.844_637_6).abs() < 1e-7);
    }

    #[test]
    fn length_normalized_mass() {
        let samples = vec![
            AnswerSample::from_tokens(ContextTag::Prior, "a", vec![-1.0, -1.0, -1.0, -1.0]),
            AnswerSample::from_tokens(ContextTag::Prior, "b", vec![-1.0]),
        ];
        let d = class_probabilities(&part(vec![vec![0], vec![1]]), &samples, MassMode::LengthNormalized).unwrap();
        assert_abs_diff_eq!(d.probs[0], 0.5, epsilon = 1e-15);
        let raw = class_probabilities(&part(vec![vec![0], vec![1]]), &samples, MassMode::RawLikelihood).unwrap();
        assert!(raw.probs[0] < 0.1);
    }

    #[test]
    fn missing_likelihood() {
        let samples = vec![AnswerSample::without_likelihood(ContextTag::Prior, "a"), s(-1.0)];
        let p = part(vec![vec![0], vec![1]]);
        assert_eq!(
            class_probabilities(&p, &samples, MassMode::RawLikelihood),
            Err(RewardError::MissingLikelihood { index: 0 })
        );
        assert!(class_probabilities(&p, &samples, MassMode::Frequency).is_ok());
        assert!(matches!(
            class_probabilities(&p, &[s(-1.0)], MassMode::Frequency),
            Err(RewardError::PartitionMismatch)
        ));
    }

    #[test]
    fn entropy_examples() {
        let d = |p: Vec<f64>| ClassDistribution::new(p, None, ContextTag::Prior);
        assert_eq!(semantic_entropy(&d(vec![1.0])), 0.0);
        assert_abs_diff_eq!(semantic_entropy(&d(vec![0.25; 4])), 4f64.ln(), epsilon = 1e-15);
        let a = 2.0 * (-1f64).exp();
        let b = (-2f64).exp();
        let h = semantic_entropy(&d(vec![a / (a + b), b / (a + b)]));
        assert!((h - 0.431_899_04).abs() < 1e-8, "{h}");
        let h = semantic_entropy(&d(vec![0.8455, 0.1545]));
        assert!((h - 0.430_436_02).abs() < 1e-8, "{h}");
    }

    #[test]
    fn ig_examples() {
        let cfg = IgConfig::default();
        let b = ClassDistribution::new(vec![0.25, 0.75], Some(0), ContextTag::Prior);
        let c = ClassDistribution::new(vec![0.5, 0.5], Some(0), ContextTag::Posterior);
        assert_abs_diff_eq!(compute_ig(&b, &c, &cfg).ig_value, 2f64.ln(), epsilon = 1e-15);
        for variant in [IgVariant::GoldenLogratio, IgVariant::EntropyDiff] {
            let cfg = IgConfig { variant, ..IgConfig::default() };
            assert_eq!(compute_ig(&b, &b, &cfg).ig_value, 0.0);
        }

        let cfg = IgConfig { variant: IgVariant::EntropyDiff, ..IgConfig::default() };
        let b = ClassDistribution::new(vec![0.9, 0.1], Some(0), ContextTag::Prior);
        let c = ClassDistribution::new(vec![0.25; 4], Some(0), ContextTag::Posterior);
        let r = compute_ig(&b, &c, &cfg);
        assert_abs_diff_eq!(r.ig_value, 0.325_082_973_391_448_2 - 4f64.ln(), epsilon = 1e-12);
        assert!((r.ig_value + 1.0612).abs() < 1e-4);
    }

    #[test]
    fn missing_golden_is_floored() {
        let cfg = IgConfig::default();
        let b = ClassDistribution::new(vec![1.0], None, ContextTag::Prior);
        let c = ClassDistribution::new(vec![0.5, 0.5], Some(1), ContextTag::Posterior);
        let r = compute_ig(&b, &c, &cfg);
        assert!(r.golden_missing_prior && !r.golden_missing_post);
        assert_abs_diff_eq!(r.ig_value, 0.5f64.ln() - 1e-6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn composite_examples() {
        assert_abs_diff_eq!(composite_reward(1, &[0.8, -0.2], 0.6), 1.18, epsilon = 1e-12);
        assert_eq!(composite_reward(1, &[0.8, -0.2], 0.0), 1.0);
        assert_eq!(composite_reward(0, &[0.8], 0.0), 0.0);
        assert_abs_diff_eq!(composite_reward(0, &[0.808], 0.6), 0.4848, epsilon = 1e-12);
        assert_eq!(composite_reward(1, &[], 0.6), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(IgConfig::default().validate().is_ok());
        assert!(IgConfig { samples_per_context: 1, ..IgConfig::default() }.validate().is_err());
        assert!(IgConfig { prob_floor: 0.5, ..IgConfig::default() }.validate().is_err());
        assert!(IgConfig { lambda: -1.0, ..IgConfig::default() }.validate().is_err());
    }

    fn judge() -> EntailmentJudge {
        EntailmentJudge::new(Arc::new(ExactMatchOracle))
    }

    #[test]
    fn step_identical_contexts() {
        let pool: Vec<_> = ["Paris", "London", "Paris"]
            .iter()
            .map(|t| AnswerSample::new(ContextTag::Prior, *t, -0.5))
            .collect();
        let gen = FixedGenerator { prior: pool.clone(), posterior: pool };
        for variant in [IgVariant::GoldenLogratio, IgVariant::EntropyDiff] {
            let cfg = IgConfig { variant, ..IgConfig::default() };
            let r = estimate_step_ig("q", &["doc".into()], "Paris", &gen, &judge(), &cfg, 1).unwrap();
            assert_eq!(r.ig_value, 0.0);
        }
    }

    #[test]
    fn step_golden_concentrates() {
        let gen = FixedGenerator {
            prior: vec![
                AnswerSample::without_likelihood(ContextTag::Prior, "Paris"),
                AnswerSample::without_likelihood(ContextTag::Prior, "Lyon"),
            ],
            posterior: vec![AnswerSample::without_likelihood(ContextTag::Posterior, "Paris")],
        };
        let cfg = IgConfig { mass_mode: MassMode::Frequency, ..IgConfig::default() };
        let r = estimate_step_ig("q", &["doc".into()], "Paris", &gen, &judge(), &cfg, 1).unwrap();
        assert_abs_diff_eq!(r.ig_value, 2f64.ln(), epsilon = 1e-12);
        assert_eq!(r.p_golden_post, Some(1.0));
    }

    #[test]
    fn step_reports_failing_phase() {
        let gen = FixedGenerator {
            prior: vec![AnswerSample::new(ContextTag::Prior, "a", -1.0)],
            posterior: vec![],
        };
        let err = estimate_step_ig("q", &[], "a", &gen, &judge(), &IgConfig::default(), 0).unwrap_err();
        assert!(matches!(err, RewardError::Generation { phase: ContextTag::Posterior, .. }));

        let gen = FixedGenerator {
            prior: vec![AnswerSample::without_likelihood(ContextTag::Prior, "a")],
            posterior: vec![AnswerSample::without_likelihood(ContextTag::Prior, "a")],
        };
        let err = estimate_step_ig("q", &[], "a", &gen, &judge(), &IgConfig::default(), 0).unwrap_err();
        assert!(matches!(
            err,
            RewardError::Generation { source: OracleError::Capability(_), .. }
        ));
    }

    #[test]
    fn prompts() {
        assert!(prior_prompt("Who?").contains("based on your own knowledge"));
        let p = posterior_prompt("Who?", "Doc 1 (Title: X) y");
        assert!(p.contains("based on the given document"));
        assert!(p.ends_with("Question: Who?"));
    }
}

//! Controlled experiments on the information-gain estimator.
//!
//! Synthetic generators sample answers from known class distributions, so
//! the true information gain is available in closed form and estimator
//! error can be measured directly.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::entropy_nats;
use crate::cluster::ClusterError;
use crate::numeric::{mean, ols_slope, quantile, spearman};
use crate::oracle::{EntailmentJudge, GenerationOracle, GenerationRequest, OracleError};
use crate::reward::{compute_ig, estimate_belief, estimate_step_ig, IgConfig, IgVariant, RewardError};
use crate::sample::{AnswerSample, ContextTag};
use crate::seeds;
use crate::text::normalize_answer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn check_distribution(name: &str, p: &[f64], k: usize) -> Result<()> {
    if p.len() != k {
        return Err(ExperimentError::InvalidInput(format!("{name} has {} entries, expected {k}", p.len())));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(ExperimentError::InvalidInput(format!("{name} is not a distribution")));
    }
    Ok(())
}

fn check_vocabulary(vocabulary: &[String]) -> Result<()> {
    let mut seen: Vec<String> = Vec::new();
    for v in vocabulary {
        let n = normalize_answer(v);
        if n.is_empty() || seen.contains(&n) {
            return Err(ExperimentError::InvalidInput(format!(
                "vocabulary entry {v:?} is empty or collides after normalization"
            )));
        }
        seen.push(n);
    }
    Ok(())
}

/// Surface forms of one canonical answer that normalize to the same string.
fn surface_form(canonical: &str, variant: usize) -> String {
    match variant % 3 {
        0 => canonical.to_owned(),
        1 => canonical.to_lowercase(),
        _ => format!("{canonical}."),
    }
}

/// Draws `n` answers from `probs`. Each sample carries
/// `ln p(class) - ln 3 + noise * z` (capped at 0) as its log-likelihood,
/// split evenly across two pseudo-tokens.
fn draw(
    probs: &[f64],
    vocabulary: &[String],
    noise: f64,
    n: usize,
    context: ContextTag,
    seed: u64,
) -> Vec<AnswerSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut class = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
            for (c, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc && *p > 0.0 {
                    class = c;
                    break;
                }
            }
            let variant = rng.random_range(0..3);
            let z: f64 = normal.sample(&mut rng);
            let lp = (probs[class].ln() - 3f64.ln() + noise * z).min(0.0);
            let mut s = AnswerSample::from_tokens(context, surface_form(&vocabulary[class], variant), vec![lp / 2.0, lp / 2.0]);
            s.total_logprob = Some(lp);
            s
        })
        .collect()
}

/// One sample per supported class with log-likelihood exactly `ln p`.
fn support(probs: &[f64], vocabulary: &[String], n: usize, context: ContextTag) -> std::result::Result<Vec<AnswerSample>, OracleError> {
    let out: Vec<AnswerSample> = probs
        .iter()
        .zip(vocabulary)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| AnswerSample::new(context, v.clone(), p.ln()))
        .collect();
    if n < out.len() {
        return Err(OracleError::Capability(format!(
            "support enumeration needs n >= {} (got {n})",
            out.len()
        )));
    }
    Ok(out)
}

/// Samples answers from a fixed prior and posterior class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAnswerGenerator {
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
    /// Canonical answer per class.
    pub vocabulary: Vec<String>,
    pub golden_class: usize,
    /// Standard deviation of the log-likelihood jitter.
    pub noise: f64,
    /// Emit each supported class once with its exact log-probability
    /// instead of sampling.
    #[serde(default)]
    pub enumerate_support: bool,
}

impl SyntheticAnswerGenerator {
    pub fn new(prior: Vec<f64>, posterior: Vec<f64>, vocabulary: Vec<String>, golden_class: usize) -> Result<Self> {
        let g = Self {
            prior,
            posterior,
            vocabulary,
            golden_class,
            noise: 0.0,
            enumerate_support: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// Classes named `Answer 0`, `Answer 1`, …; class 0 is golden.
    pub fn with_classes(prior: Vec<f64>, posterior: Vec<f64>) -> Result<Self> {
        let vocabulary = (0..prior.len()).map(|c| format!("Answer {c}")).collect();
        Self::new(prior, posterior, vocabulary, 0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.vocabulary.len();
        check_vocabulary(&self.vocabulary)?;
        check_distribution("prior", &self.prior, k)?;
        check_distribution("posterior", &self.posterior, k)?;
        if self.golden_class >= k {
            return Err(ExperimentError::InvalidInput("golden class out of range".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ExperimentError::InvalidInput("noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn golden(&self) -> &str {
        &self.vocabulary[self.golden_class]
    }

    pub fn distribution(&self, context: ContextTag) -> &[f64] {
        match context {
            ContextTag::Prior => &self.prior,
            ContextTag::Posterior => &self.posterior,
        }
    }
}

impl GenerationOracle for SyntheticAnswerGenerator {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<AnswerSample>, OracleError> {
        let probs = self.distribution(request.context);
        if self.enumerate_support {
            return support(probs, &self.vocabulary, request.n, request.context);
        }
        Ok(draw(probs, &self.vocabulary, self.noise, request.n, request.context, request.seed))
    }
}

/// The information gain of `variant` evaluated on the generator's true
/// distributions.
pub fn closed_form_ig(gen: &SyntheticAnswerGenerator, variant: IgVariant, prob_floor: f64) -> f64 {
    match variant {
        IgVariant::EntropyDiff => entropy_nats(&gen.prior) - entropy_nats(&gen.posterior),
        IgVariant::GoldenLogratio => {
            let g = gen.golden_class;
            gen.posterior[g].max(prob_floor).ln() - gen.prior[g].max(prob_floor).ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub m_grid: Vec<usize>,
    pub oracle_n: usize,
    pub bootstrap_reps: usize,
    pub ig: IgConfig,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            m_grid: (1..=15).map(|i| 4 * i).collect(),
            oracle_n: 64,
            bootstrap_reps: 200,
            ig: IgConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub m: usize,
    /// Mean absolute error against the closed form.
    pub mae: f64,
    /// 2.5% and 97.5% percentiles of the per-replicate absolute error.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean absolute error against the full-pool estimate.
    pub mae_vs_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seed: u64,
    pub oracle_n: usize,
    pub bootstrap_reps: usize,
    pub closed_form: f64,
    pub oracle_estimate: f64,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn mae_at(&self, m: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.m == m).map(|r| r.mae)
    }

    /// Spearman correlation between `M` and the MAE.
    pub fn spearman(&self) -> f64 {
        let m: Vec<f64> = self.rows.iter().map(|r| r.m as f64).collect();
        let e: Vec<f64> = self.rows.iter().map(|r| r.mae).collect();
        spearman(&m, &e)
    }

    /// Least-squares slope of `ln MAE` against `ln M`.
    pub fn loglog_slope(&self) -> f64 {
        let x: Vec<f64> = self.rows.iter().map(|r| (r.m as f64).ln()).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.mae.ln()).collect();
        ols_slope(&x, &y)
    }
}

/// Estimator error as a function of the per-context sample count `M`.
///
/// Draws `oracle_n` samples per context once. Each bootstrap replicate fixes
/// one random ordering of each pool and uses its first `M` entries for every
/// `M` in the grid, so the curve for a replicate is computed on nested
/// subsamples drawn without replacement. Errors are measured against the
/// closed form and against the estimate on the full pools.
pub fn sensitivity_curve(
    gen: &SyntheticAnswerGenerator,
    question: &str,
    judge: &EntailmentJudge,
    cfg: &SensitivityConfig,
    seed: u64,
) -> Result<SensitivityReport> {
    gen.validate()?;
    cfg.ig.validate()?;
    let mut grid = cfg.m_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(ExperimentError::InvalidGrid("grid must be non-empty with entries >= 1".into()));
    }
    if let Some(m) = grid.iter().find(|m| **m > cfg.oracle_n) {
        return Err(ExperimentError::InvalidGrid(format!("M = {m} exceeds oracle_n = {}", cfg.oracle_n)));
    }
    if cfg.bootstrap_reps == 0 {
        return Err(ExperimentError::InvalidGrid("bootstrap_reps must be >= 1".into()));
    }

    let pool = |context: ContextTag, stream: u64| -> Result<Vec<AnswerSample>> {
        let req = GenerationRequest {
            prompt: String::new(),
            n: cfg.oracle_n,
            temperature: cfg.ig.temperature,
            context,
            want_logprobs: cfg.ig.mass_mode.needs_likelihood(),
            seed: seeds::derive(seed, stream),
        };
        Ok(gen.generate(&req)?)
    };
    let prior_pool = pool(ContextTag::Prior, 0)?;
    let post_pool = pool(ContextTag::Posterior, 1)?;
    let golden = gen.golden();

    let estimate = |prior: Vec<AnswerSample>, post: Vec<AnswerSample>| -> Result<f64> {
        let b = estimate_belief(prior, question, golden, judge, &cfg.ig)?;
        let c = estimate_belief(post, question, golden, judge, &cfg.ig)?;
        Ok(compute_ig(&b.distribution, &c.distribution, &cfg.ig).ig_value)
    };
    let closed_form = closed_form_ig(gen, cfg.ig.variant, cfg.ig.prob_floor);
    let oracle_estimate = estimate(prior_pool.clone(), post_pool.clone())?;

    // per replicate: one estimate per grid entry
    let per_rep: Vec<Vec<f64>> = (0..cfg.bootstrap_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_path(seed, &[2, r as u64]));
            let mut pi: Vec<usize> = (0..cfg.oracle_n).collect();
            let mut pc: Vec<usize> = (0..cfg.oracle_n).collect();
            pi.shuffle(&mut rng);
            pc.shuffle(&mut rng);
            grid.iter()
                .map(|&m| {
                    let b = pi[..m].iter().map(|i| prior_pool[*i].clone()).collect();
                    let c = pc[..m].iter().map(|i| post_pool[*i].clone()).collect();
                    estimate(b, c)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = grid
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let errs: Vec<f64> = per_rep.iter().map(|r| (r[j] - closed_form).abs()).collect();
            let vs_oracle: Vec<f64> = per_rep.iter().map(|r| (r[j] - oracle_estimate).abs()).collect();
            SensitivityRow {
                m,
                mae: mean(&errs),
                ci_low: quantile(&errs, 0.025),
                ci_high: quantile(&errs, 0.975),
                mae_vs_oracle: mean(&vs_oracle),
            }
        })
        .collect();

    Ok(SensitivityReport {
        seed,
        oracle_n: cfg.oracle_n,
        bootstrap_reps: cfg.bootstrap_reps,
        closed_form,
        oracle_estimate,
        rows,
    })
}

/// Generator whose posterior depends on which of two documents appear in
/// the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHopGenerator {
    pub doc_a: String,
    pub doc_b: String,
    pub vocabulary: Vec<String>,
    pub golden_class: usize,
    pub prior: Vec<f64>,
    pub with_a: Vec<f64>,
    pub with_b: Vec<f64>,
    pub with_both: Vec<f64>,
    pub noise: f64,
}

impl TwoHopGenerator {
    /// Four candidate answers. Each document alone rules out two of them,
    /// keeping the golden answer tied with a different distractor; only
    /// together do they single out the golden answer.
    pub fn bridge() -> Self {
        Self {
            doc_a: "The band that recorded the album was formed in the north of England.".into(),
            doc_b: "The lead singer of that band was born in a town famous for its mills.".into(),
            vocabulary: ["Bolton", "Leeds", "Oldham", "York"].map(String::from).to_vec(),
            golden_class: 0,
            prior: vec![0.25, 0.25, 0.25, 0.25],
            with_a: vec![0.4, 0.4, 0.1, 0.1],
            with_b: vec![0.4, 0.1, 0.4, 0.1],
            with_both: vec![0.94, 0.02, 0.02, 0.02],
            noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.vocabulary.len();
        check_vocabulary(&self.vocabulary)?;
        for (name, p) in [
            ("prior", &self.prior),
            ("with_a", &self.with_a),
            ("with_b", &self.with_b),
            ("with_both", &self.with_both),
        ] {
            check_distribution(name, p, k)?;
        }
        if self.golden_class >= k {
            return Err(ExperimentError::InvalidInput("golden class out of range".into()));
        }
        Ok(())
    }

    pub fn golden(&self) -> &str {
        &self.vocabulary[self.golden_class]
    }

    fn distribution_for(&self, request: &GenerationRequest) -> &[f64] {
        if request.context == ContextTag::Prior {
            return &self.prior;
        }
        let has = |doc: &str| !doc.trim().is_empty() && request.prompt.contains(doc.trim());
        match (has(&self.doc_a), has(&self.doc_b)) {
            (true, true) => &self.with_both,
            (true, false) => &self.with_a,
            (false, true) => &self.with_b,
            (false, false) => &self.prior,
        }
    }
}

impl GenerationOracle for TwoHopGenerator {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<AnswerSample>, OracleError> {
        let probs = self.distribution_for(request);
        Ok(draw(probs, &self.vocabulary, self.noise, request.n, request.context, request.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            median: quantile(xs, 0.5),
            q1: quantile(xs, 0.25),
            q3: quantile(xs, 0.75),
            mean: mean(xs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinationRep {
    pub a_only: f64,
    pub b_only: f64,
    pub sum: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationReport {
    pub question: String,
    pub golden: String,
    pub seed: u64,
    pub reps: Vec<CombinationRep>,
    pub a_only: Summary,
    pub b_only: Summary,
    pub sum: Summary,
    pub combined: Summary,
}

/// Compares the information gain of two documents presented together with
/// the sum of their individual gains, over `reps` seeded repetitions.
#[allow(clippy::too_many_arguments)]
pub fn evidence_combination(
    question: &str,
    doc_a: &str,
    doc_b: &str,
    golden: &str,
    sampler: &dyn GenerationOracle,
    judge: &EntailmentJudge,
    cfg: &IgConfig,
    reps: usize,
    seed: u64,
) -> Result<CombinationReport> {
    if reps == 0 {
        return Err(ExperimentError::InvalidInput("reps must be >= 1".into()));
    }
    let evidence = |docs: &[&str]| -> Vec<String> {
        docs.iter().filter(|d| !d.trim().is_empty()).map(|d| d.to_string()).collect()
    };
    let sets = [evidence(&[doc_a]), evidence(&[doc_b]), evidence(&[doc_a, doc_b])];
    let rows: Vec<CombinationRep> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ig = |which: usize| {
                let s = seeds::derive_path(seed, &[r as u64, which as u64]);
                estimate_step_ig(question, &sets[which], golden, sampler, judge, cfg, s).map(|x| x.ig_value)
            };
            let (a, b, ab) = (ig(0)?, ig(1)?, ig(2)?);
            Ok(CombinationRep {
                a_only: a,
                b_only: b,
                sum: a + b,
                combined: ab,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |f: fn(&CombinationRep) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(CombinationReport {
        question: question.to_owned(),
        golden: golden.to_owned(),
        seed,
        a_only: column(|r| r.a_only),
        b_only: column(|r| r.b_only),
        sum: column(|r| r.sum),
        combined: column(|r| r.combined),
        reps: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::NormalizedMatchOracle;
    use crate::reward::MassMode;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn judge() -> EntailmentJudge {
        EntailmentJudge::new(Arc::new(NormalizedMatchOracle))
    }

    #[test]
    fn closed_form_examples() {
        let g = SyntheticAnswerGenerator::with_classes(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        assert_eq!(closed_form_ig(&g, IgVariant::EntropyDiff, 1e-6), 0.0);
        assert_eq!(closed_form_ig(&g, IgVariant::GoldenLogratio, 1e-6), 0.0);
        let g = SyntheticAnswerGenerator::with_classes(vec![0.5, 0.5], vec![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(closed_form_ig(&g, IgVariant::EntropyDiff, 1e-6), 2f64.ln(), epsilon = 1e-15);
        let g = SyntheticAnswerGenerator::with_classes(vec![0.25, 0.75], vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(closed_form_ig(&g, IgVariant::GoldenLogratio, 1e-6), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_colliding_vocabulary() {
        let v = vec!["The Paris".to_string(), "paris".to_string()];
        assert!(SyntheticAnswerGenerator::new(vec![0.5, 0.5], vec![0.5, 0.5], v, 0).is_err());
    }

    #[test]
    fn support_enumeration_is_exact() {
        let mut g = SyntheticAnswerGenerator::with_classes(vec![0.5, 0.3, 0.2], vec![0.8, 0.15, 0.05]).unwrap();
        g.enumerate_support = true;
        for variant in [IgVariant::EntropyDiff, IgVariant::GoldenLogratio] {
            let cfg = IgConfig { variant, samples_per_context: 3, ..IgConfig::default() };
            let est = estimate_step_ig("q", &["doc".into()], g.golden(), &g, &judge(), &cfg, 0).unwrap();
            assert_abs_diff_eq!(est.ig_value, closed_form_ig(&g, variant, 1e-6), epsilon = 1e-9);
        }
    }

    #[test]
    fn surface_forms_cluster_together() {
        let g = SyntheticAnswerGenerator::with_classes(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let req = GenerationRequest {
            prompt: String::new(),
            n: 40,
            temperature: 1.0,
            context: ContextTag::Prior,
            want_logprobs: true,
            seed: 1,
        };
        let samples = g.generate(&req).unwrap();
        let cfg = IgConfig::default();
        let est = estimate_belief(samples, "q", g.golden(), &judge(), &cfg).unwrap();
        assert_eq!(est.partition.num_classes(), 2);
    }

    fn small_cfg() -> SensitivityConfig {
        SensitivityConfig {
            m_grid: vec![4, 16, 32],
            oracle_n: 32,
            bootstrap_reps: 20,
            ig: IgConfig { mass_mode: MassMode::Frequency, ..IgConfig::default() },
        }
    }

    #[test]
    fn full_pool_has_no_bootstrap_variance() {
        let g = SyntheticAnswerGenerator::with_classes(vec![0.6, 0.2, 0.2], vec![0.9, 0.05, 0.05]).unwrap();
        let r = sensitivity_curve(&g, "q", &judge(), &small_cfg(), 4).unwrap();
        let last = r.rows.last().unwrap();
        assert_eq!(last.m, 32);
        assert_abs_diff_eq!(last.mae, (r.oracle_estimate - r.closed_form).abs(), epsilon = 1e-12);
        // summation order differs between orderings of the same pool
        assert_abs_diff_eq!(last.ci_low, last.ci_high, epsilon = 1e-12);
        assert_abs_diff_eq!(last.mae_vs_oracle, 0.0, epsilon = 1e-12);
        assert_eq!(r, sensitivity_curve(&g, "q", &judge(), &small_cfg(), 4).unwrap());
    }

    #[test]
    fn grid_beyond_pool_is_rejected() {
        let g = SyntheticAnswerGenerator::with_classes(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let cfg = SensitivityConfig { m_grid: vec![4, 40], ..small_cfg() };
        assert!(matches!(
            sensitivity_curve(&g, "q", &judge(), &cfg, 0),
            Err(ExperimentError::InvalidGrid(_))
        ));
    }

    #[test]
    fn two_hop_contexts() {
        let g = TwoHopGenerator::bridge();
        g.validate().unwrap();
        let cfg = IgConfig { mass_mode: MassMode::Frequency, ..IgConfig::default() };
        let r = evidence_combination("Where was he born?", &g.doc_a, "", g.golden(), &g, &judge(), &cfg, 10, 3).unwrap();
        // an empty second document leaves the posterior at the prior
        assert!(r.b_only.median.abs() < 0.5);
        let dup = evidence_combination("Where was he born?", &g.doc_a, &g.doc_a, g.golden(), &g, &judge(), &cfg, 10, 3)
            .unwrap();
        for rep in &dup.reps {
            // identical evidence strings: posterior uses the single-document distribution
            assert!(rep.combined.is_finite());
        }
    }
}

//! A synthetic retrieval bandit for exercising the training loop.
//!
//! Each episode hides a label `y` drawn uniformly from `K` labels. The agent
//! may query one of several observation channels (`<search> channel-j
//! </search>`), each returning a noisy reading of `y`, or answer with the
//! argmax of its belief. The policy is a single softmax over
//! `channels + answer`; on the last allowed turn the agent always answers.
//!
//! Because every channel is an [`ObservationChannel`], the expected
//! information gain of a query is available in closed form.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{bayes_update, expected_ig, BeliefState, ObservationChannel, UncertaintyFunctional};
use crate::grpo::{group_advantages, log_softmax, DifferentiableObjective, GrpoConfig, GrpoError, ToyGrpoObjective, ToyPolicy};
use crate::numeric::mean;
use crate::oracle::{Document, OracleError, Policy, RetrievalEnv};
use crate::reward::RewardError;
use crate::rollout::{run_rollout, score_trajectory, Action, RolloutConfig, RolloutError, StepIgEstimator, Trajectory};
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("invalid bandit: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

/// Step size used by the bandit experiments. The generic default (1e-3) moves
/// the logits by at most a couple of units in 2,000 updates, too little to
/// leave the initial answer-first policy.
pub const TOY_LEARNING_RATE: f64 = 0.05;

pub fn channel_name(j: usize) -> String {
    format!("channel-{j}")
}

pub fn label_name(y: usize) -> String {
    format!("label-{y}")
}

fn parse_suffix(s: &str, prefix: &str) -> Option<usize> {
    s.trim().strip_prefix(prefix)?.parse().ok()
}

/// Parses a rendered document `Doc i (Title: "channel-j") label-o` into
/// `(j, o)`.
pub fn parse_observation(doc: &str) -> Option<(usize, usize)> {
    let start = doc.find("(Title: \"")? + "(Title: \"".len();
    let end = start + doc[start..].find("\")")?;
    let channel = parse_suffix(&doc[start..end], "channel-")?;
    let obs = parse_suffix(&doc[end + 2..], "label-")?;
    Some((channel, obs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBandit {
    pub num_labels: usize,
    pub channels: Vec<ObservationChannel>,
    /// Initial policy logits over `channels` followed by the answer action.
    pub initial_logits: Vec<f64>,
    /// Generation turns per episode, the final one being a forced answer.
    pub max_turns: usize,
}

impl ToyBandit {
    /// Four labels; an uninformative, a weak (50% correct) and an informative
    /// (90% correct) channel. The initial policy prefers answering directly.
    pub fn standard() -> Self {
        let k = 4;
        Self {
            num_labels: k,
            channels: vec![
                ObservationChannel::uninformative(k, k, channel_name(0)).expect("valid channel"),
                ObservationChannel::symmetric(k, 0.5, channel_name(1)).expect("valid channel"),
                ObservationChannel::symmetric(k, 0.1, channel_name(2)).expect("valid channel"),
            ],
            initial_logits: vec![0.0, 0.0, 0.0, 1.5],
            max_turns: 2,
        }
    }

    /// Every channel uninformative and a uniform initial policy.
    pub fn degenerate(num_channels: usize) -> Self {
        let k = 4;
        Self {
            num_labels: k,
            channels: (0..num_channels)
                .map(|j| ObservationChannel::uninformative(k, k, channel_name(j)).expect("valid channel"))
                .collect(),
            initial_logits: vec![0.0; num_channels + 1],
            max_turns: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.num_labels < 2 {
            return Err(ToyError::InvalidInput("need at least two labels".into()));
        }
        if self.channels.len() < 2 {
            return Err(ToyError::InvalidInput("need at least two query channels".into()));
        }
        if self.channels.iter().any(|c| c.num_hypotheses() != self.num_labels) {
            return Err(ToyError::InvalidInput("channel rows must match the label count".into()));
        }
        if self.initial_logits.len() != self.num_actions() {
            return Err(ToyError::InvalidInput(format!(
                "expected {} initial logits, got {}",
                self.num_actions(),
                self.initial_logits.len()
            )));
        }
        if self.max_turns < 2 {
            return Err(ToyError::InvalidInput("max_turns must be >= 2".into()));
        }
        ToyPolicy::new(self.initial_logits.clone())?;
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.channels.len() + 1
    }

    pub fn answer_action(&self) -> usize {
        self.channels.len()
    }

    pub fn prior(&self) -> BeliefState {
        BeliefState::uniform(self.num_labels).expect("num_labels >= 1")
    }

    /// Expected information gain of each channel under the uniform prior.
    pub fn channel_eig(&self) -> Vec<f64> {
        let prior = self.prior();
        self.channels
            .iter()
            .map(|c| expected_ig(&prior, c, UncertaintyFunctional::Shannon).expect("validated channel"))
            .collect()
    }

    /// The channel with the largest expected information gain.
    pub fn informative_channel(&self) -> usize {
        let eig = self.channel_eig();
        (0..eig.len()).fold(0, |best, j| if eig[j] > eig[best] { j } else { best })
    }

    /// Belief after the observations contained in `evidence`.
    pub fn posterior(&self, evidence: &[String]) -> Result<BeliefState, RewardError> {
        let mut b = self.prior();
        for doc in evidence {
            let (j, o) = parse_observation(doc).ok_or_else(|| RewardError::Evidence(format!("unparseable: {doc}")))?;
            let ch = self
                .channels
                .get(j)
                .ok_or_else(|| RewardError::Evidence(format!("unknown channel {j}")))?;
            b = bayes_update(&b, ch, o).map_err(|e| RewardError::Evidence(e.to_string()))?;
        }
        Ok(b)
    }
}

/// Environment for one episode: the hidden label and its observation noise.
pub struct ToyEnv<'a> {
    bandit: &'a ToyBandit,
    label: usize,
    rng: Mutex<ChaCha8Rng>,
}

impl<'a> ToyEnv<'a> {
    pub fn new(bandit: &'a ToyBandit, label: usize, seed: u64) -> Self {
        Self {
            bandit,
            label,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl RetrievalEnv for ToyEnv<'_> {
    fn search(&self, query: &str, _top_k: usize) -> Result<Vec<Document>, OracleError> {
        let j = parse_suffix(query, "channel-")
            .filter(|j| *j < self.bandit.channels.len())
            .ok_or_else(|| OracleError::Protocol(format!("unknown channel query {query:?}")))?;
        let mut rng = self.rng.lock().expect("rng lock");
        let obs = self.bandit.channels[j].sample(self.label, &mut *rng);
        Ok(vec![Document::new(channel_name(j), label_name(obs))])
    }
}

/// Samples actions from a softmax policy; answers with its belief argmax.
pub struct ToyAgent<'a> {
    bandit: &'a ToyBandit,
    log_probs: Vec<f64>,
    seed: u64,
}

impl<'a> ToyAgent<'a> {
    pub fn new(bandit: &'a ToyBandit, policy: &ToyPolicy, seed: u64) -> Self {
        Self {
            bandit,
            log_probs: policy.log_probs(),
            seed,
        }
    }
}

const INFO_OPEN: &str = "\n\n<information>";
const INFO_CLOSE: &str = "</information>";

fn observed_documents(context: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut rest = context;
    while let Some(at) = rest.find(INFO_OPEN) {
        let body = &rest[at + INFO_OPEN.len()..];
        let Some(end) = body.find(INFO_CLOSE) else { break };
        docs.extend(body[..end].lines().filter(|l| !l.trim().is_empty()).map(str::to_owned));
        rest = &body[end..];
    }
    docs
}

impl Policy for ToyAgent<'_> {
    fn act(&self, context: &str, call_index: usize) -> Result<String, OracleError> {
        let turn = context.matches(INFO_OPEN).count() + 1;
        let belief = self
            .bandit
            .posterior(&observed_documents(context))
            .map_err(|e| OracleError::Protocol(e.to_string()))?;
        let action = if turn >= self.bandit.max_turns {
            self.bandit.answer_action()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, call_index as u64));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.log_probs.len() - 1;
            for (a, lp) in self.log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    pick = a;
                    break;
                }
            }
            pick
        };
        let out = if action == self.bandit.answer_action() {
            format!("<think>commit</think><answer> {} </answer>", label_name(belief.argmax()))
        } else {
            format!("<think>query</think><search> {} </search>", channel_name(action))
        };
        Ok(out)
    }
}

/// Golden-class log-ratio computed from exact Bayesian posteriors instead of
/// sampled answers.
#[derive(Debug, Clone)]
pub struct BeliefIgEstimator {
    pub bandit: ToyBandit,
    pub prob_floor: f64,
}

impl BeliefIgEstimator {
    pub fn new(bandit: ToyBandit) -> Self {
        Self { bandit, prob_floor: 1e-6 }
    }
}

impl StepIgEstimator for BeliefIgEstimator {
    fn estimate(&self, _question: &str, evidence: &[String], golden: &str, _step: usize) -> Result<f64, RewardError> {
        if evidence.is_empty() {
            return Err(RewardError::Evidence("no observation".into()));
        }
        let g = parse_suffix(golden, "label-")
            .filter(|g| *g < self.bandit.num_labels)
            .ok_or_else(|| RewardError::Evidence(format!("golden {golden:?} is not a label")))?;
        let post = self.bandit.posterior(evidence)?;
        let prior = self.bandit.prior();
        Ok(post.probs()[g].max(self.prob_floor).ln() - prior.probs()[g].max(self.prob_floor).ln())
    }
}

/// The policy decisions taken in a toy episode. The forced answer on the
/// final turn is not a decision.
pub fn decisions(bandit: &ToyBandit, traj: &Trajectory) -> Vec<usize> {
    traj.steps
        .iter()
        .filter_map(|s| match &s.action {
            Action::Search { query } => parse_suffix(query, "channel-"),
            Action::Answer { .. } if s.turn < bandit.max_turns => Some(bandit.answer_action()),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    /// Updates applied so far (1-based).
    pub step: usize,
    pub em: f64,
    pub ig: f64,
    pub composite: f64,
    /// Policy entropy after this update.
    pub entropy: f64,
    /// Mean number of actions per episode.
    pub episode_len: f64,
    /// Probability of the most informative query after this update.
    pub p_informative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub lambda: f64,
    pub seed: u64,
    pub initial_entropy: f64,
    pub records: Vec<TrainingRecord>,
    pub final_logits: Vec<f64>,
}

impl TrainingLog {
    /// First step after which `p_informative` exceeds `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.p_informative > threshold).map(|r| r.step)
    }

    pub fn peak_entropy(&self) -> f64 {
        self.records.iter().map(|r| r.entropy).fold(self.initial_entropy, f64::max)
    }

    pub fn final_entropy(&self) -> f64 {
        self.records.last().map_or(self.initial_entropy, |r| r.entropy)
    }
}

/// Trains the toy policy with one on-policy GRPO update per step.
///
/// Each step samples `cfg.group_size` episodes (concurrently, each seeded by
/// its `(step, index)` path), scores them with `composite_reward`, computes
/// group advantages and takes a gradient-ascent step on the objective. The
/// reference policy for the KL penalty is the initial policy.
pub fn toy_train(
    bandit: &ToyBandit,
    estimator: &dyn StepIgEstimator,
    cfg: &GrpoConfig,
    lambda: f64,
    seed: u64,
) -> Result<TrainingLog, ToyError> {
    bandit.validate()?;
    cfg.validate()?;
    let rollout_cfg = RolloutConfig {
        max_turns: bandit.max_turns,
        top_k: 1,
        group_size: cfg.group_size,
        ..RolloutConfig::default()
    };
    let reference = ToyPolicy::new(bandit.initial_logits.clone())?;
    let mut policy = reference.clone();
    let informative = bandit.informative_channel();
    let mut records = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let episodes: Vec<Result<(Trajectory, Vec<usize>), RolloutError>> = (0..cfg.group_size)
            .into_par_iter()
            .map(|i| {
                let path_seed = seeds::derive_path(seed, &[step as u64, i as u64]);
                let label = ChaCha8Rng::seed_from_u64(seeds::derive(path_seed, 0)).random_range(0..bandit.num_labels);
                let env = ToyEnv::new(bandit, label, seeds::derive(path_seed, 1));
                let agent = ToyAgent::new(bandit, &policy, seeds::derive(path_seed, 2));
                let question = format!("Which label is hidden in episode {step}.{i}?");
                let traj = run_rollout(&agent, &env, &question, &rollout_cfg)?;
                let scored = score_trajectory(&traj, &label_name(label), estimator, lambda);
                let d = decisions(bandit, &scored);
                Ok((scored, d))
            })
            .collect();
        let episodes = episodes.into_iter().collect::<Result<Vec<_>, _>>()?;

        let rewards: Vec<f64> = episodes.iter().map(|(t, _)| t.composite).collect();
        let advantages = group_advantages(&rewards, cfg.adv_eps);
        let actions: Vec<Vec<usize>> = episodes.iter().map(|(_, d)| d.clone()).collect();
        let objective = ToyGrpoObjective::on_policy(&policy, &reference, actions, advantages, cfg.clone());
        let grad = objective.gradient(&policy.logits);
        for (l, g) in policy.logits.iter_mut().zip(&grad) {
            *l += cfg.learning_rate * g;
        }

        let igs: Vec<f64> = episodes.iter().flat_map(|(t, _)| t.step_igs.iter().copied()).collect();
        let lens: Vec<f64> = episodes.iter().map(|(t, _)| t.len() as f64).collect();
        let ems: Vec<f64> = episodes.iter().map(|(t, _)| f64::from(t.em)).collect();
        let probs = policy.probs();
        records.push(TrainingRecord {
            step: step + 1,
            em: mean(&ems),
            ig: if igs.is_empty() { 0.0 } else { mean(&igs) },
            composite: mean(&rewards),
            entropy: policy.entropy(),
            episode_len: mean(&lens),
            p_informative: probs[informative],
        });
    }

    Ok(TrainingLog {
        lambda,
        seed,
        initial_entropy: reference.entropy(),
        records,
        final_logits: policy.logits,
    })
}

/// Probability vector of the initial policy; convenience for reports.
pub fn initial_probs(bandit: &ToyBandit) -> Vec<f64> {
    log_softmax(&bandit.initial_logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ScriptedPolicy;

    #[test]
    fn observation_round_trip() {
        assert_eq!(parse_observation("Doc 1 (Title: \"channel-2\") label-3"), Some((2, 3)));
        assert_eq!(parse_observation("Doc 1 (Title: \"x\") label-3"), None);
    }

    #[test]
    fn channel_eig_ordering() {
        let b = ToyBandit::standard();
        let eig = b.channel_eig();
        assert!(eig[0].abs() < 1e-12);
        assert!(eig[1] > 0.0 && eig[2] > eig[1]);
        assert_eq!(b.informative_channel(), 2);
        assert!(b.validate().is_ok());
    }

    #[test]
    fn estimator_mean_matches_closed_form() {
        let b = ToyBandit::standard();
        let est = BeliefIgEstimator::new(b.clone());
        let eig = b.channel_eig();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (j, channel) in b.channels.iter().enumerate() {
            let n = 20_000;
            let total: f64 = (0..n)
                .map(|_| {
                    let y = rng.random_range(0..4);
                    let o = channel.sample(y, &mut rng);
                    let doc = format!("Doc 1 (Title: \"{}\") {}", channel_name(j), label_name(o));
                    est.estimate("q", &[doc], &label_name(y), 0).unwrap()
                })
                .sum();
            assert!((total / n as f64 - eig[j]).abs() < 0.03, "channel {j}");
        }
    }

    #[test]
    fn forced_answer_on_last_turn() {
        let b = ToyBandit { initial_logits: vec![-50.0, -50.0, 50.0, -50.0], ..ToyBandit::standard() };
        let policy = ToyPolicy::new(b.initial_logits.clone()).unwrap();
        let agent = ToyAgent::new(&b, &policy, 1);
        let env = ToyEnv::new(&b, 3, 2);
        let cfg = RolloutConfig { max_turns: 2, top_k: 1, ..RolloutConfig::default() };
        let t = run_rollout(&agent, &env, "q", &cfg).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert!(t.steps[0].action.is_search());
        assert!(t.predicted.is_some());
        assert_eq!(decisions(&b, &t), vec![2]);
    }

    #[test]
    fn decisions_skip_forced_answer() {
        let b = ToyBandit::standard();
        let env = ToyEnv::new(&b, 0, 0);
        let cfg = RolloutConfig { max_turns: 2, top_k: 1, ..RolloutConfig::default() };
        let t = run_rollout(&ScriptedPolicy::new(["<answer>label-0</answer>"]), &env, "q", &cfg).unwrap();
        assert_eq!(decisions(&b, &t), vec![3]);
    }

    #[test]
    fn training_is_reproducible() {
        let b = ToyBandit::standard();
        let est = BeliefIgEstimator::new(b.clone());
        let cfg = GrpoConfig { steps: 50, learning_rate: 0.1, ..GrpoConfig::default() };
        let a = toy_train(&b, &est, &cfg, 0.6, 9).unwrap();
        let c = toy_train(&b, &est, &cfg, 0.6, 9).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.records.len(), 50);
        let d = toy_train(&b, &est, &cfg, 0.6, 10).unwrap();
        assert_ne!(a.final_logits, d.final_logits);
    }

    #[test]
    fn initial_probs_sum_to_one() {
        let p = initial_probs(&ToyBandit::standard());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

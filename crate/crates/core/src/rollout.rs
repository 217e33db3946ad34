//! Agentic search loop.
//!
//! The policy reasons inside `<think>` tags and either issues a
//! `<search>query</search>` or commits to `<answer>text</answer>`. Retrieved
//! documents are appended to the running context inside `<information>`
//! tags. Malformed outputs trigger a correction prompt and a bounded retry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{Document, EntailmentJudge, GenerationOracle, OracleError, Policy, RetrievalEnv};
use crate::reward::{composite_reward, estimate_step_ig, IgConfig, RewardError};
use crate::seeds;
use crate::text::{exact_match, truncate_chars};

/// Instruction given to the acting model; `{question}` is substituted.
pub const SYSTEM_PROMPT: &str = "Answer the given question. You must conduct reasoning inside <think> and </think> first every time you get new information. After reasoning, if you find you lack some knowledge, you can call a search engine by <search> query </search>, and it will return the top searched results between <information> and </information>. You can search as many times as you want. If you find no further external knowledge needed, you can directly provide the answer inside <answer> and </answer> without detailed illustrations. For example, <answer> xxx </answer>. Question: {question}.";

/// Appended after an output that contains neither a search nor an answer.
pub const INVALID_ACTION_PROMPT: &str = "My previous action is invalid. If I want to search, I should put the query between <search> and </search>. If I want to give the final answer, I should put the answer between <answer> and </answer>. Let me try again.";

pub fn system_prompt(question: &str) -> String {
    SYSTEM_PROMPT.replace("{question}", question)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Search { query: String },
    Answer { text: String },
    Invalid { raw: String },
}

impl Action {
    pub fn search(query: impl Into<String>) -> Self {
        Action::Search { query: query.into() }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Action::Answer { text: text.into() }
    }

    pub fn is_search(&self) -> bool {
        matches!(self, Action::Search { .. })
    }

    /// Tag form of the action. Parsing the result yields the same action.
    pub fn render(&self) -> String {
        match self {
            Action::Search { query } => format!("<search> {query} </search>"),
            Action::Answer { text } => format!("<answer> {text} </answer>"),
            Action::Invalid { raw } => raw.clone(),
        }
    }
}

/// Byte range of the first `<tag>…</tag>` starting at or after `from`:
/// (start of the opening tag, inner start, inner end, end of the closing tag).
fn find_tag(s: &str, tag: &str, from: usize) -> Option<(usize, usize, usize, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = from + s[from..].find(&open)?;
    let inner = start + open.len();
    let end = inner + s[inner..].find(&close)?;
    Some((start, inner, end, end + close.len()))
}

/// Parsed model output: reasoning text, the action and the byte offset where
/// the action's closing tag ends (or the output length for invalid output).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub think: String,
    pub action: Action,
    pub consumed: usize,
}

/// Splits a model output into its reasoning and its first complete action.
/// Malformed output maps to [`Action::Invalid`].
pub fn parse_output(output: &str) -> ParsedOutput {
    let (think, after_think) = match find_tag(output, "think", 0) {
        Some((_, inner, end, close_end)) => (output[inner..end].trim().to_owned(), close_end),
        None => (String::new(), 0),
    };
    let search = find_tag(output, "search", after_think);
    let answer = find_tag(output, "answer", after_think);
    let pick = match (search, answer) {
        (Some(s), Some(a)) => Some(if s.0 < a.0 { ("search", s) } else { ("answer", a) }),
        (Some(s), None) => Some(("search", s)),
        (None, Some(a)) => Some(("answer", a)),
        (None, None) => None,
    };
    match pick {
        Some((kind, (_, inner, end, close_end))) => {
            let content = output[inner..end].trim().to_owned();
            let action = if kind == "search" {
                Action::Search { query: content }
            } else {
                Action::Answer { text: content }
            };
            ParsedOutput {
                think,
                action,
                consumed: close_end,
            }
        }
        None => ParsedOutput {
            think,
            action: Action::Invalid { raw: output.to_owned() },
            consumed: output.len(),
        },
    }
}

pub fn parse_action(output: &str) -> (String, Action) {
    let p = parse_output(output);
    (p.think, p.action)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Generation turns allowed (`T`); a search or an answer each uses one.
    pub max_turns: usize,
    pub top_k: usize,
    /// Character budget for the documents of one search.
    pub max_observation_chars: usize,
    pub group_size: usize,
    /// Correction prompts allowed per turn before the rollout is abandoned.
    pub max_invalid_retries: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 2,
            top_k: 3,
            max_observation_chars: 2000,
            group_size: 3,
            max_invalid_retries: 2,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let counts = [
            ("max_turns", self.max_turns),
            ("top_k", self.top_k),
            ("max_observation_chars", self.max_observation_chars),
            ("group_size", self.group_size),
            ("max_invalid_retries", self.max_invalid_retries),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(RolloutError::InvalidInput(format!("{name} must be >= 1"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub turn: usize,
    pub think: String,
    pub action: Action,
    /// Rendered documents exactly as appended to the policy context.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub evidence_truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: String,
    pub steps: Vec<TrajectoryStep>,
    pub predicted: Option<String>,
    pub em: u8,
    pub step_igs: Vec<f64>,
    pub composite: f64,
    pub truncated_by_max_turns: bool,
    #[serde(default)]
    pub exhausted_invalid_retries: bool,
}

impl Trajectory {
    fn new(question: &str) -> Self {
        Self {
            question: question.to_owned(),
            steps: Vec::new(),
            predicted: None,
            em: 0,
            step_igs: Vec::new(),
            composite: 0.0,
            truncated_by_max_turns: false,
            exhausted_invalid_retries: false,
        }
    }

    pub fn search_steps(&self) -> impl Iterator<Item = &TrajectoryStep> {
        self.steps.iter().filter(|s| s.action.is_search())
    }

    /// Actions taken, counting invalid outputs.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error("retrieval environment unavailable: {source}")]
    EnvUnavailable {
        #[source]
        source: OracleError,
        partial: Box<Trajectory>,
    },

    #[error("policy unavailable: {source}")]
    PolicyUnavailable {
        #[source]
        source: OracleError,
        partial: Box<Trajectory>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Renders documents as `Doc i (Title: "…") text`, spending at most
/// `max_chars` characters across all of them.
pub fn render_evidence(docs: &[Document], max_chars: usize) -> (Vec<String>, bool) {
    let mut budget = max_chars;
    let mut out = Vec::with_capacity(docs.len());
    let mut truncated = false;
    for (i, d) in docs.iter().enumerate() {
        if budget == 0 {
            truncated = true;
            break;
        }
        let full = format!("Doc {} (Title: \"{}\") {}", i + 1, d.title, d.text);
        let (kept, cut) = truncate_chars(&full, budget);
        budget -= kept.chars().count();
        truncated |= cut;
        out.push(kept.to_owned());
    }
    (out, truncated)
}

pub fn information_block(evidence: &[String]) -> String {
    format!("\n\n<information>{}</information>\n\n", evidence.join("\n"))
}

/// Runs one rollout.
///
/// Each of the `max_turns` turns asks the policy for an output. A search
/// retrieves `top_k` documents; an answer ends the rollout. An invalid output
/// gets the correction prompt and is retried within the same turn up to
/// `max_invalid_retries` times, after which the rollout ends without a
/// prediction. Rewards are left empty; see [`score_trajectory`].
pub fn run_rollout(
    policy: &dyn Policy,
    env: &dyn RetrievalEnv,
    question: &str,
    cfg: &RolloutConfig,
) -> Result<Trajectory, RolloutError> {
    cfg.validate()?;
    if question.trim().is_empty() {
        return Err(RolloutError::InvalidInput("question is empty".into()));
    }
    let mut traj = Trajectory::new(question);
    let mut context = system_prompt(question);
    let mut calls = 0;

    'turns: for turn in 1..=cfg.max_turns {
        let mut retries = 0;
        loop {
            let output = match policy.act(&context, calls) {
                Ok(o) => o,
                Err(source) => {
                    return Err(RolloutError::PolicyUnavailable {
                        source,
                        partial: Box::new(traj),
                    })
                }
            };
            calls += 1;
            let parsed = parse_output(&output);
            match parsed.action {
                Action::Search { ref query } => {
                    let docs = match env.search(query, cfg.top_k) {
                        Ok(d) => d,
                        Err(source) => {
                            return Err(RolloutError::EnvUnavailable {
                                source,
                                partial: Box::new(traj),
                            })
                        }
                    };
                    let (evidence, truncated) = render_evidence(&docs, cfg.max_observation_chars);
                    context.push_str(&output[..parsed.consumed]);
                    context.push_str(&information_block(&evidence));
                    traj.steps.push(TrajectoryStep {
                        turn,
                        think: parsed.think,
                        action: parsed.action,
                        evidence,
                        evidence_truncated: truncated,
                        ig: None,
                    });
                    continue 'turns;
                }
                Action::Answer { ref text } => {
                    traj.predicted = Some(text.clone());
                    traj.steps.push(TrajectoryStep {
                        turn,
                        think: parsed.think,
                        action: parsed.action,
                        evidence: Vec::new(),
                        evidence_truncated: false,
                        ig: None,
                    });
                    break 'turns;
                }
                Action::Invalid { .. } => {
                    traj.steps.push(TrajectoryStep {
                        turn,
                        think: parsed.think,
                        action: parsed.action,
                        evidence: Vec::new(),
                        evidence_truncated: false,
                        ig: None,
                    });
                    if retries == cfg.max_invalid_retries {
                        traj.exhausted_invalid_retries = true;
                        break 'turns;
                    }
                    retries += 1;
                    context.push_str(&output);
                    context.push('\n');
                    context.push_str(INVALID_ACTION_PROMPT);
                    context.push('\n');
                }
            }
        }
    }
    traj.truncated_by_max_turns = traj.predicted.is_none() && !traj.exhausted_invalid_retries;
    Ok(traj)
}

/// Runs `cfg.group_size` independent rollouts, concurrently. Results are in
/// rollout-index order.
pub fn run_group<P, E>(
    policy_for: impl Fn(usize) -> P + Sync,
    env_for: impl Fn(usize) -> E + Sync,
    question: &str,
    cfg: &RolloutConfig,
) -> Vec<Result<Trajectory, RolloutError>>
where
    P: Policy,
    E: RetrievalEnv,
{
    (0..cfg.group_size)
        .into_par_iter()
        .map(|i| run_rollout(&policy_for(i), &env_for(i), question, cfg))
        .collect()
}

/// Per-step information-gain estimator used when scoring trajectories.
pub trait StepIgEstimator: Send + Sync {
    fn estimate(&self, question: &str, evidence: &[String], golden: &str, step: usize) -> Result<f64, RewardError>;
}

/// Estimates step rewards by sampling and clustering answers.
pub struct SemanticIgEstimator<'a> {
    pub sampler: &'a dyn GenerationOracle,
    pub judge: &'a EntailmentJudge,
    pub cfg: IgConfig,
    pub seed: u64,
}

impl StepIgEstimator for SemanticIgEstimator<'_> {
    fn estimate(&self, question: &str, evidence: &[String], golden: &str, step: usize) -> Result<f64, RewardError> {
        estimate_step_ig(
            question,
            evidence,
            golden,
            self.sampler,
            self.judge,
            &self.cfg,
            seeds::derive(self.seed, step as u64),
        )
        .map(|r| r.ig_value)
    }
}

/// Fills exact match, per-step information gain and the composite reward.
///
/// Re-scoring overwrites earlier rewards. A step whose estimate fails keeps
/// `ig = None`, is left out of the mean and logged.
pub fn score_trajectory(
    traj: &Trajectory,
    golden: &str,
    estimator: &dyn StepIgEstimator,
    lambda: f64,
) -> Trajectory {
    let mut out = traj.clone();
    out.em = out.predicted.as_deref().map_or(0, |p| exact_match(p, golden));

    let search_idx: Vec<usize> = (0..out.steps.len())
        .filter(|i| out.steps[*i].action.is_search())
        .collect();
    let estimates: Vec<Result<f64, RewardError>> = search_idx
        .par_iter()
        .map(|i| estimator.estimate(&out.question, &out.steps[*i].evidence, golden, *i))
        .collect();

    out.step_igs.clear();
    for (i, est) in search_idx.iter().zip(estimates) {
        match est {
            Ok(ig) => {
                out.steps[*i].ig = Some(ig);
                out.step_igs.push(ig);
            }
            Err(e) => {
                out.steps[*i].ig = None;
                tracing::warn!(step = *i, error = %e, "information-gain estimate failed; step excluded");
            }
        }
    }
    out.composite = composite_reward(out.em, &out.step_igs, lambda);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ScriptedPolicy, StubRetrievalEnv};

    #[test]
    fn parse_examples() {
        let (think, a) = parse_action("<think>need the band</think><search> band Love Bites album </search>");
        assert_eq!(think, "need the band");
        assert_eq!(a, Action::search("band Love Bites album"));
        let (_, a) = parse_action("<think>done</think><answer> Bolton, England </answer>");
        assert_eq!(a, Action::answer("Bolton, England"));
        let (think, a) = parse_action("The answer is Paris.");
        assert_eq!(think, "");
        assert_eq!(a, Action::Invalid { raw: "The answer is Paris.".into() });
    }

    #[test]
    fn parse_first_complete_tag() {
        let (_, a) = parse_action("<search>open <answer>x</answer>");
        assert_eq!(a, Action::answer("x"));
        let (_, a) = parse_action("<answer>a</answer><search>b</search>");
        assert_eq!(a, Action::answer("a"));
        // actions inside the reasoning block do not count
        let (_, a) = parse_action("<think><answer>no</answer></think><search>yes</search>");
        assert_eq!(a, Action::search("yes"));
        let (_, a) = parse_action("<think>unterminated <search>q</search>");
        assert_eq!(a, Action::search("q"));
    }

    #[test]
    fn evidence_budget() {
        let docs = vec![Document::new("A", "aaaa"), Document::new("B", "bbbb")];
        let (ev, cut) = render_evidence(&docs, 10_000);
        assert_eq!(ev[0], "Doc 1 (Title: \"A\") aaaa");
        assert!(!cut);
        let (ev, cut) = render_evidence(&docs, 20);
        assert!(cut);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].chars().count(), 20);
        let (ev, cut) = render_evidence(&docs, ev_len(&docs[0]));
        assert_eq!(ev.len(), 1);
        assert!(cut);
    }

    fn ev_len(d: &Document) -> usize {
        format!("Doc 1 (Title: \"{}\") {}", d.title, d.text).chars().count()
    }

    fn env() -> StubRetrievalEnv {
        StubRetrievalEnv::new().with("q", "T", "text")
    }

    #[test]
    fn turn_budget() {
        let script = ScriptedPolicy::new([
            "<search>q1</search>",
            "<search>q2</search>",
            "<answer>a</answer>",
        ]);
        let cfg = RolloutConfig { max_turns: 2, ..RolloutConfig::default() };
        let t = run_rollout(&script, &env(), "question", &cfg).unwrap();
        assert_eq!(t.search_steps().count(), 2);
        assert_eq!(t.predicted, None);
        assert!(t.truncated_by_max_turns);

        let cfg = RolloutConfig { max_turns: 3, ..RolloutConfig::default() };
        let t = run_rollout(&script, &env(), "question", &cfg).unwrap();
        assert_eq!(t.predicted.as_deref(), Some("a"));
        assert!(!t.truncated_by_max_turns);
    }

    #[derive(Default)]
    struct Recording(std::sync::Mutex<Vec<String>>);
    impl Policy for Recording {
        fn act(&self, context: &str, call_index: usize) -> Result<String, OracleError> {
            self.0.lock().unwrap().push(context.to_owned());
            Ok(match call_index {
                0 | 1 => "I think it is Paris".into(),
                _ => "<answer>Paris</answer>".into(),
            })
        }
    }

    #[test]
    fn invalid_retry_path() {
        let policy = Recording::default();
        let t = run_rollout(&policy, &env(), "question", &RolloutConfig::default()).unwrap();
        assert_eq!(t.predicted.as_deref(), Some("Paris"));
        let contexts = policy.0.lock().unwrap();
        assert_eq!(contexts.last().unwrap().matches(INVALID_ACTION_PROMPT).count(), 2);
        assert_eq!(t.steps.len(), 3);
        assert!(t.steps.iter().all(|s| s.turn == 1));
    }

    #[test]
    fn invalid_retries_exhausted() {
        let policy = ScriptedPolicy::new(["x", "y", "z", "<answer>late</answer>"]);
        let cfg = RolloutConfig { max_invalid_retries: 2, ..RolloutConfig::default() };
        let t = run_rollout(&policy, &env(), "question", &cfg).unwrap();
        assert_eq!(t.predicted, None);
        assert!(t.exhausted_invalid_retries);
        assert!(!t.truncated_by_max_turns);
        assert_eq!(t.steps.len(), 3);
    }

    struct DownEnv;
    impl RetrievalEnv for DownEnv {
        fn search(&self, _: &str, _: usize) -> Result<Vec<Document>, OracleError> {
            Err(OracleError::Unavailable("connection refused".into()))
        }
    }

    #[test]
    fn env_failure_keeps_partial() {
        let policy = ScriptedPolicy::new(["<think>hm</think><search>q</search>"]);
        let err = run_rollout(&policy, &DownEnv, "question", &RolloutConfig::default()).unwrap_err();
        match err {
            RolloutError::EnvUnavailable { partial, .. } => assert!(partial.steps.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct FixedIg(Vec<Option<f64>>);
    impl StepIgEstimator for FixedIg {
        fn estimate(&self, _: &str, _: &[String], _: &str, step: usize) -> Result<f64, RewardError> {
            self.0[step].ok_or(RewardError::InvalidConfig("boom".into()))
        }
    }

    fn traj_with(actions: Vec<Action>, predicted: Option<&str>) -> Trajectory {
        let mut t = Trajectory::new("q");
        for (i, a) in actions.into_iter().enumerate() {
            t.steps.push(TrajectoryStep {
                turn: i + 1,
                think: String::new(),
                action: a,
                evidence: vec!["Doc 1 (Title: \"x\") y".into()],
                evidence_truncated: false,
                ig: None,
            });
        }
        t.predicted = predicted.map(Into::into);
        t
    }

    #[test]
    fn scoring_examples() {
        let t = traj_with(vec![Action::answer("Paris")], Some("Paris"));
        let s = score_trajectory(&t, "paris", &FixedIg(vec![]), 0.6);
        assert_eq!(s.em, 1);
        assert_eq!(s.composite, 1.0);

        let t = traj_with(vec![Action::search("q"), Action::answer("Gary Oldman")], Some("Gary Oldman"));
        let s = score_trajectory(&t, "Samuel L. Jackson", &FixedIg(vec![Some(0.808), None]), 0.6);
        assert_eq!(s.em, 0);
        assert!((s.composite - 0.4848).abs() < 1e-12);
        assert_eq!(s.steps[0].ig, Some(0.808));

        let t = traj_with(
            vec![Action::search("a"), Action::search("b"), Action::answer("x")],
            Some("x"),
        );
        let s = score_trajectory(&t, "x", &FixedIg(vec![Some(0.5), Some(0.1), None]), 0.6);
        assert!((s.composite - 1.18).abs() < 1e-12);
        // idempotent
        let again = score_trajectory(&s, "x", &FixedIg(vec![Some(0.5), Some(0.1), None]), 0.6);
        assert_eq!(again, s);
    }

    #[test]
    fn failed_step_is_excluded() {
        let t = traj_with(vec![Action::search("a"), Action::search("b")], None);
        let s = score_trajectory(&t, "x", &FixedIg(vec![Some(0.4), None]), 1.0);
        assert_eq!(s.step_igs, vec![0.4]);
        assert_eq!(s.steps[1].ig, None);
        assert!((s.composite - 0.4).abs() < 1e-12);
    }

    #[test]
    fn trajectory_json_round_trip() {
        let t = traj_with(vec![Action::search("a"), Action::answer("b")], Some("b"));
        let line = serde_json::to_string(&t).unwrap();
        assert!(line.contains(r#""kind":"search""#));
        let back: Trajectory = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t);
    }
}

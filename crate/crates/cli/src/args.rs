use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use semgain::remote::{NliLayout, OracleEndpointConfig};
use semgain::reward::{IgConfig, IgVariant, MassMode};

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "semgain", version, about = "Semantic information-gain rewards: estimation, rollouts and experiments")]
pub struct Cli {
    /// Run directory for artifacts and the manifest (default: runs/<command>-<run id>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Partition answer samples into semantic classes.
    Cluster(ClusterArgs),
    /// Information gain of evidence, from sample files or a generation endpoint.
    Ig(IgArgs),
    /// Run the belief-state property suites.
    Simulate(SimulateArgs),
    /// Run a group of agent rollouts and write their trajectories.
    Rollout(RolloutArgs),
    /// Train the toy softmax policy with GRPO and log its dynamics.
    GrpoToy(GrpoToyArgs),
    /// Estimator error against the number of samples per context.
    Sensitivity(SensitivityArgs),
    /// Information gain of two documents alone and together.
    Combine(CombineArgs),
    /// Summarize a run directory and verify its artifact digests.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cluster(_) => "cluster",
            Command::Ig(_) => "ig",
            Command::Simulate(_) => "simulate",
            Command::Rollout(_) => "rollout",
            Command::GrpoToy(_) => "grpo-toy",
            Command::Sensitivity(_) => "sensitivity",
            Command::Combine(_) => "combine",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[value(alias = "golden_logratio")]
    GoldenLogratio,
    #[value(alias = "entropy_diff")]
    EntropyDiff,
}

impl From<Variant> for IgVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::GoldenLogratio => IgVariant::GoldenLogratio,
            Variant::EntropyDiff => IgVariant::EntropyDiff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mass {
    #[value(alias = "raw_likelihood")]
    RawLikelihood,
    #[value(alias = "length_normalized")]
    LengthNormalized,
    Frequency,
}

impl From<Mass> for MassMode {
    fn from(m: Mass) -> Self {
        match m {
            Mass::RawLikelihood => MassMode::RawLikelihood,
            Mass::LengthNormalized => MassMode::LengthNormalized,
            Mass::Frequency => MassMode::Frequency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[value(alias = "context_prepended")]
    ContextPrepended,
    #[value(alias = "separate_field")]
    SeparateField,
}

/// Settings shared by every remote oracle of a command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EndpointArgs {
    /// Per-request timeout for remote oracles, in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Environment variable holding a bearer token for remote oracles.
    #[arg(long)]
    pub auth_env: Option<String>,
    /// How the question reaches a remote entailment model.
    #[arg(long, value_enum, default_value_t = Layout::ContextPrepended)]
    pub nli_layout: Layout,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
}

impl EndpointArgs {
    pub fn endpoint(&self, base_url: &str) -> OracleEndpointConfig {
        OracleEndpointConfig {
            base_url: base_url.to_owned(),
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            auth_env: self.auth_env.clone(),
            nli_layout: match self.nli_layout {
                Layout::ContextPrepended => NliLayout::ContextPrepended,
                Layout::SeparateField => NliLayout::SeparateField,
            },
            max_tokens: self.max_tokens,
            ..OracleEndpointConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IgOptions {
    /// Answers sampled per context.
    #[arg(long, default_value_t = 12)]
    pub samples_per_context: usize,
    /// Bidirectional entailment threshold.
    #[arg(long, default_value_t = semgain::cluster::DEFAULT_TAU)]
    pub tau: f64,
    /// Weight of the mean step information gain in the composite reward.
    #[arg(long, default_value_t = 0.6)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = Variant::GoldenLogratio)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Mass::RawLikelihood)]
    pub mass_mode: Mass,
    #[arg(long, default_value_t = 1e-6)]
    pub prob_floor: f64,
    /// Sampling temperature sent to generation endpoints.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

impl IgOptions {
    pub fn config(&self) -> IgConfig {
        IgConfig {
            samples_per_context: self.samples_per_context,
            tau: self.tau,
            lambda: self.lambda,
            variant: self.variant.into(),
            mass_mode: self.mass_mode.into(),
            prob_floor: self.prob_floor,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// samples.jsonl to partition.
    #[arg(long)]
    pub samples: PathBuf,
    /// Entailment oracle: stub:normalized, stub:exact, table:<file.jsonl> or remote:<url>.
    #[arg(long, default_value = "stub:normalized")]
    pub oracle: String,
    #[arg(long, default_value_t = semgain::cluster::DEFAULT_TAU)]
    pub tau: f64,
    /// Question given to the entailment oracle as context.
    #[arg(long, default_value = "")]
    pub question: String,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["samples", "generator"])))]
pub struct IgArgs {
    #[arg(long)]
    pub question: String,
    /// Golden answer.
    #[arg(long)]
    pub golden: String,
    /// samples.jsonl holding both contexts (B = without evidence, C = with).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Generation oracle: remote:<url> or fixed:<samples.jsonl>.
    #[arg(long, requires = "seed")]
    pub generator: Option<String>,
    /// One retrieved document; repeat for several.
    #[arg(long)]
    pub evidence: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "stub:normalized")]
    pub oracle: String,
    #[command(flatten)]
    pub ig: IgOptions,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub suite: SimulateSuite,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "suite", rename_all = "kebab-case")]
pub enum SimulateSuite {
    /// Uncertainty axioms plus the non-negativity, telescoping and garbling checks.
    Props(PropsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PropsArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    /// Steps per simulated belief trajectory.
    #[arg(long, default_value_t = 8)]
    pub horizon: usize,
    /// Largest number of hypotheses or observations drawn.
    #[arg(long, default_value_t = 6)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub question: String,
    /// Golden answer; enables exact match and reward scoring.
    #[arg(long)]
    pub golden: Option<String>,
    /// Acting policy: script:<outputs.json> (a JSON array of strings) or remote:<url>.
    #[arg(long)]
    pub policy: String,
    /// Retrieval environment: stub:<docs.jsonl> or remote:<url>.
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub max_turns: usize,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_observation_chars: usize,
    #[arg(long, default_value_t = 3)]
    pub group_size: usize,
    #[arg(long, default_value_t = 2)]
    pub max_invalid_retries: usize,
    #[arg(long, default_value_t = 1.0)]
    pub policy_temperature: f64,
    /// Generation oracle for step information gain (remote:<url> or fixed:<samples.jsonl>).
    #[arg(long, requires = "golden")]
    pub generator: Option<String>,
    #[arg(long, default_value = "stub:normalized")]
    pub oracle: String,
    #[command(flatten)]
    pub ig: IgOptions,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("seeding").required(true).multiple(true).args(["seed", "seeds"])))]
pub struct GrpoToyArgs {
    #[arg(long, default_value_t = 0.6)]
    pub lambda: f64,
    /// Comparison run without the information-gain term.
    #[arg(long, default_value_t = 0.0)]
    pub baseline_lambda: f64,
    #[arg(long)]
    pub no_baseline: bool,
    /// First seed (default 0 when only --seeds is given).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to train.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = semgain::toy::TOY_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub kl_coef: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip_eps: f64,
    /// Probability of the informative query that counts as learned.
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
}

impl GrpoToyArgs {
    pub fn seed_list(&self) -> Vec<u64> {
        let first = self.seed.unwrap_or(0);
        (0..self.seeds.unwrap_or(1)).map(|k| first + k).collect()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Class distribution without evidence; the first class is golden.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.2,0.1")]
    pub prior: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.05,0.05")]
    pub posterior: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,12,16,20,24,28,32,36,40,44,48,52,56,60")]
    pub m_grid: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub oracle_n: usize,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Log-likelihood noise of the synthetic generator.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = Variant::GoldenLogratio)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Mass::Frequency)]
    pub mass_mode: Mass,
    #[arg(long, default_value_t = semgain::cluster::DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CombineArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value = "In what city was the singer of the band born?")]
    pub question: String,
    #[arg(long, default_value_t = 12)]
    pub samples_per_context: usize,
    #[arg(long, value_enum, default_value_t = Variant::GoldenLogratio)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Mass::Frequency)]
    pub mass_mode: Mass,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Run directory containing manifest.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Re-execute the recorded command and compare artifact digests.
    #[arg(long)]
    pub rerun: bool,
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
}

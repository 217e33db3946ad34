//! Information-gain rewards for retrieval-augmented reasoning agents.
//!
//! The crate is organized bottom-up:
//!
//! - [`belief`]: finite belief states, Bayes updates, realized and expected
//!   information gain, plus executable checks of their core properties.
//! - [`cluster`]: semantic equivalence classes of sampled answers via
//!   bidirectional entailment and connected components.
//! - [`reward`]: class distributions, semantic entropy, the two step-level
//!   information-gain variants and the composite trajectory reward.
//! - [`rollout`]: the tag-grammar search/answer loop and trajectory scoring.
//! - [`grpo`] and [`toy`]: group-relative advantages, the clipped surrogate,
//!   and a softmax-policy trainer on a synthetic retrieval bandit.
//! - [`experiments`]: group-size sensitivity and evidence-combination studies.
//! - [`remote`] and [`records`]: HTTP oracle clients and file formats.

pub mod belief;
pub mod cluster;
pub mod numeric;
pub mod experiments;
pub mod grpo;
pub mod oracle;
pub mod remote;
pub mod records;
pub mod reward;
pub mod rollout;
pub mod sample;
pub mod seeds;
pub mod text;
pub mod toy;
pub mod union_find;

pub use belief::{BeliefState, GarblingKernel, ObservationChannel, UncertaintyFunctional};
pub use cluster::SemanticPartition;
pub use oracle::{EntailmentJudge, EntailmentOracle, GenerationOracle, OracleError};
pub use reward::{IgConfig, IgResult, IgVariant, MassMode};
pub use sample::{AnswerSample, ContextTag};
pub use rollout::{Action, RolloutConfig, Trajectory};

use std::path::Path;

use semgain::belief::BeliefError;
use semgain::cluster::ClusterError;
use semgain::experiments::ExperimentError;
use semgain::grpo::GrpoError;
use semgain::oracle::OracleError;
use semgain::records::RecordError;
use semgain::reward::RewardError;
use semgain::rollout::RolloutError;
use semgain::toy::ToyError;

/// Failure of a command, carrying its exit status: 1 for invalid input or
/// configuration, 2 when an oracle or transport failed.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Oracle(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Invalid(format!("{}: {err}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Oracle(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Oracle { .. } => CliError::Oracle(e.to_string()),
            ClusterError::InvalidInput(_) => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match &e {
            RewardError::Generation { .. } | RewardError::Clustering { source: ClusterError::Oracle { .. }, .. } => {
                CliError::Oracle(e.to_string())
            }
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        match e {
            RolloutError::InvalidInput(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Oracle(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Oracle(o) => o.into(),
            ExperimentError::Cluster(c) => c.into(),
            ExperimentError::Reward(r) => r.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::Rollout(r) => r.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<BeliefError> for CliError {
    fn from(e: BeliefError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

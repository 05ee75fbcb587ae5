use hag_core::baselines::BaselineError;
use hag_core::bench::BenchError;
use hag_core::grounding::GroundingError;
use hag_core::pace::PaceError;
use hag_core::persona::PersonaError;
use hag_core::tree::TreeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("{0}")]
    Data(String),
    #[error("unknown artifact type at byte {offset}: {reason}")]
    UnknownArtifactType { offset: usize, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Provider(_) => 2,
            CliError::Data(_) | CliError::UnknownArtifactType { .. } => 3,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PersonaError> for CliError {
    fn from(e: PersonaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::Provider(_) | TreeError::PartialTree { .. } => CliError::Provider(e.to_string()),
            TreeError::EmptyTopic | TreeError::InvalidThreshold(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GroundingError> for CliError {
    fn from(e: GroundingError) -> Self {
        match e {
            GroundingError::Provider(_) | GroundingError::AugmentationExhausted { .. } => {
                CliError::Provider(e.to_string())
            }
            GroundingError::InvalidSize => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Tree(t) => t.into(),
            BaselineError::Grounding(g) => g.into(),
            BaselineError::InvalidSize => CliError::Usage(e.to_string()),
            BaselineError::EmptyDatabase | BaselineError::DatabaseTooSmall { .. } => CliError::Data(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Provider { .. } => CliError::Provider(e.to_string()),
            BenchError::InvalidPolicy(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PaceError> for CliError {
    fn from(e: PaceError) -> Self {
        match e {
            PaceError::Judge(_) | PaceError::Embedder(_) | PaceError::MalformedJudgeResponse(_) => {
                CliError::Provider(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

use thiserror::Error;
use vcplan_core::CoreError;
use vcplan_numerics::NumericsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 0 success, 1 failed check, 2 usage or validation, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.root() {
                CoreError::Training(_)
                | CoreError::Numerics(NumericsError::NonFiniteGradient { .. }) => 3,
                _ => 2,
            },
        }
    }
}

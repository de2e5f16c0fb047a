use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Unusable record directory (empty, mixed schema versions, corrupt files).
    #[error("input error: {0}")]
    Input(String),
    /// NaN abort or a step size outside the stable range.
    #[error("numerical abort: {0}")]
    Diverged(String),
    #[error(transparent)]
    Core(#[from] dboot_core::Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => EXIT_CONFIG,
            CliError::Core(dboot_core::Error::InvalidConfig(_) | dboot_core::Error::InvalidSpec(_)) => EXIT_CONFIG,
            CliError::Diverged(_) => EXIT_ABORT,
            CliError::Core(_) | CliError::Other(_) => EXIT_OTHER,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

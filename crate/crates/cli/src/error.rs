use icpm::IcpmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] IcpmError),

    #[error("design is not stabilizing: {0}")]
    Unstable(String),

    #[error("simulation diverged: {0}")]
    Divergence(String),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                IcpmError::InvalidInput(_)
                | IcpmError::InvalidWeights(_)
                | IcpmError::Model(_)
                | IcpmError::InvalidOrbit(_)
                | IcpmError::SectionMismatch { .. } => 2,
                IcpmError::OrbitEscape { .. } => 5,
                _ => 3,
            },
            CliError::Unstable(_) => 4,
            CliError::Divergence(_) => 5,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "unstable",
            5 => "divergence",
            _ => "numeric",
        }
    }
}

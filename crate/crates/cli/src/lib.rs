//! Batch driver for the transport engine: JSON configs in, CSV/JSON/binary out.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, RunConfig, ScenarioKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(qtransport::Error),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Engine(qtransport::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<qtransport::Error> for CliError {
    fn from(e: qtransport::Error) -> Self {
        use qtransport::Error as E;
        match e {
            e if e.is_nonconvergence() => CliError::Solver(e),
            E::InvalidParameter(m) | E::Dimension(m) | E::Config(m) => CliError::Config(m),
            E::Io(io) => CliError::Io(io),
            other => CliError::Engine(other),
        }
    }
}

impl CliError {
    /// 2 config, 3 solver nonconvergence, 4 verification failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Engine(_) | CliError::Io(_) => 1,
        }
    }
}

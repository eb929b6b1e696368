use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] spin1_eth::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 1 usage, 2 invariant violation, 3 resource refusal.
    pub fn exit_code(&self) -> i32 {
        use spin1_eth::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::ResourceLimit { .. }) => 3,
            CliError::Core(
                E::InvalidChain(_) | E::InvalidObservable(_) | E::SiteOutOfRange { .. } | E::InvalidParameter(_),
            ) => 1,
            CliError::Invariant(_) | CliError::Core(_) | CliError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

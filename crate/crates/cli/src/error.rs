use mmfuse::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG_INVALID: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => exit::CONFIG_INVALID,
            Self::Io { .. } => exit::IO,
            Self::Core(e) => match e {
                CoreError::Config(_) | CoreError::Parse { .. } => exit::CONFIG_INVALID,
                CoreError::Diverged { .. } | CoreError::NonFinite(_) => exit::DIVERGED,
                CoreError::Io(_) => exit::IO,
                _ => exit::FAILURE,
            },
            Self::Other(_) => exit::FAILURE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

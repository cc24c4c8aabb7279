use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{}", config_message(.key, .line, .message))]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: pfedpm_core::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("replay mismatch: {0}")]
    Replay(String),
}

fn config_message(key: &str, line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("config line {l}: `{key}`: {message}"),
        None => format!("config `{key}`: {message}"),
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

impl SimError {
    pub fn config(key: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use pfedpm_core::Error as E;
        match self {
            SimError::Config { .. } => 2,
            SimError::Io { .. } | SimError::Data { .. } | SimError::Json { .. } | SimError::Replay(_) => 3,
            SimError::Core { source, .. } => match source {
                E::Format { .. } | E::Label { .. } | E::EmptyInput(_) => 3,
                E::NumericOverflow(_) => 4,
                E::Contract(_) | E::Protocol(_) | E::Dimension { .. } => 2,
            },
        }
    }
}

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for pfedpm_core::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| SimError::Core {
            context: context(),
            source,
        })
    }
}

//! Error type shared by every command, with its process exit code.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AarError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed or invalid input data, located as precisely as possible.
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AarError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AarError::Usage(_) | AarError::Config(_) => 2,
            AarError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
            AarError::Io { .. } | AarError::Data(_) => 3,
            AarError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        AarError::Io { path: path.to_path_buf(), source }
    }

    pub fn data_at(path: &Path, line: usize, msg: impl std::fmt::Display) -> Self {
        AarError::Data(format!("{}:{line}: {msg}", path.display()))
    }

    /// Prefixes the message with the command or stage that failed.
    pub fn context(self, what: &str) -> Self {
        match self {
            AarError::Usage(m) => AarError::Usage(format!("{what}: {m}")),
            AarError::Config(m) => AarError::Config(format!("{what}: {m}")),
            AarError::Data(m) => AarError::Data(format!("{what}: {m}")),
            AarError::Numerical(m) => AarError::Numerical(format!("{what}: {m}")),
            io @ AarError::Io { .. } => io,
        }
    }
}

impl From<aar_core::trainer::AatError> for AarError {
    fn from(e: aar_core::trainer::AatError) -> Self {
        use aar_core::trainer::AatError;
        match e {
            AatError::InvalidConfig(_) | AatError::CorpusMismatch(_) => AarError::Config(e.to_string()),
            AatError::Diverged { .. } => AarError::Numerical(e.to_string()),
            AatError::Encoder(ref inner) if matches!(inner, aar_core::encoder::EncoderError::NonFiniteGradient { .. }) => {
                AarError::Numerical(e.to_string())
            }
            _ => AarError::Data(e.to_string()),
        }
    }
}

impl From<aar_core::IndexError> for AarError {
    fn from(e: aar_core::IndexError) -> Self {
        use aar_core::IndexError;
        match e {
            IndexError::TooManyLists { .. } | IndexError::InvalidProbe { .. } | IndexError::ZeroK => {
                AarError::Config(e.to_string())
            }
            _ => AarError::Data(e.to_string()),
        }
    }
}

impl From<aar_core::reader::ReaderError> for AarError {
    fn from(e: aar_core::reader::ReaderError) -> Self {
        AarError::Data(e.to_string())
    }
}

impl From<aar_core::CorpusError> for AarError {
    fn from(e: aar_core::CorpusError) -> Self {
        AarError::Data(e.to_string())
    }
}

impl From<aar_core::metrics::MetricError> for AarError {
    fn from(e: aar_core::metrics::MetricError) -> Self {
        AarError::Data(e.to_string())
    }
}

pub type Result<T, E = AarError> = std::result::Result<T, E>;

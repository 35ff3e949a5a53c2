use std::path::{Path, PathBuf};

use kid_core::decoder::DecoderError;
use kid_core::lm::LmError;
use kid_core::metrics::MetricError;
use kid_core::retriever::RetrievalError;
use serde_json::json;

/// Every failure the command-line tools can report, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum KidError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = KidError> = std::result::Result<T, E>;

impl KidError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::Protocol(_) => "protocol",
            Self::Internal(_) => "internal",
        }
    }

    /// 2 bad config or input, 3 io, 4 protocol, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Format { .. } => 2,
            Self::Io { .. } => 3,
            Self::Protocol(_) => 4,
            Self::Internal(_) => 5,
        }
    }

    /// One-line machine-readable form written to standard error.
    pub fn to_json(&self) -> String {
        let mut body = json!({
            "kind": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Self::Format { path, line, .. } = self {
            body["path"] = json!(path.display().to_string());
            body["line"] = json!(line);
        }
        json!({ "error": body }).to_string()
    }
}

impl From<LmError> for KidError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Unavailable(_) | LmError::Protocol(_) | LmError::LogitLength { .. } | LmError::NonFinite(_) => {
                Self::Protocol(e.to_string())
            }
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<DecoderError> for KidError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Lm(lm) => lm.into(),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<RetrievalError> for KidError {
    fn from(e: RetrievalError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<MetricError> for KidError {
    fn from(e: MetricError) -> Self {
        Self::Config(e.to_string())
    }
}

use glyco::ErrorKind;
use serde::Serialize;

/// A failed command: what went wrong and which exit code it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: &'a str,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.kind_name(),
            exit_code: self.exit_code(),
            message: &self.message,
        })
        .expect("error line serializes")
    }
}

impl From<glyco::Error> for CliError {
    fn from(e: glyco::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

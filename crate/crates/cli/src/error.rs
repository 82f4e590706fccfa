use std::fmt;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    /// A required input file that is not there.
    pub fn missing(what: &str, path: &std::path::Path) -> Self {
        CliError::data(format!("missing {what} artifact: {}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<bofex::Error> for CliError {
    fn from(e: bofex::Error) -> Self {
        use bofex::Error::*;
        let code = match &e {
            Usage(_) | Config(_) => EXIT_USAGE,
            Io { .. } | Schema(_) | Format(_) | Gap(_) | Window(_) | ModelIntegrity(_) | Serde(_)
            | Training(_) | Evaluation(_) | Embedding(_) => EXIT_DATA,
            Capacity(_) => EXIT_INTERNAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(format!("malformed JSON: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

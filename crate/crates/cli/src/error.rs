use serde_json::json;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            kind,
            message: message.into(),
        }
    }

    pub fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            kind,
            message: message.into(),
        }
    }

    /// One JSON object on a single line.
    pub fn to_line(&self) -> String {
        json!({"error": self.kind, "message": self.message, "exit_code": self.code}).to_string()
    }
}

impl From<exbl_core::Error> for CliError {
    fn from(e: exbl_core::Error) -> Self {
        let code = if e.is_validation() || matches!(e, exbl_core::Error::Unsupported(_)) {
            EXIT_VALIDATION
        } else {
            EXIT_RUNTIME
        };
        CliError {
            code,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime("json", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}", fmt_config(.path, *.line, .field, .message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        field: String,
        message: String,
    },

    #[error("baseline policy `{0}` not found in runs")]
    MissingBaseline(String),

    #[error(transparent)]
    Core(#[from] bldp_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),

    #[error("{failed} verification check(s) failed")]
    ChecksFailed { failed: usize },
}

fn fmt_config(path: &Option<PathBuf>, line: Option<usize>, field: &str, message: &str) -> String {
    let mut s = String::from("config error");
    if let Some(p) = path {
        s.push_str(&format!(" in {}", p.display()));
    }
    if let Some(l) = line {
        s.push_str(&format!(" at line {l}"));
    }
    if !field.is_empty() {
        s.push_str(&format!(" (field `{field}`)"));
    }
    s.push_str(": ");
    s.push_str(message);
    s
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            path: None,
            line: None,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and input problems, 3 for
    /// numerical failures and failed checks.
    pub fn exit_code(&self) -> i32 {
        use bldp_core::Error as E;
        match self {
            HarnessError::Core(e) => match e {
                E::InvalidParameter { .. }
                | E::DimensionMismatch { .. }
                | E::InvalidAllocation(_)
                | E::InvalidContexts(_)
                | E::InfeasibleConstraint(_)
                | E::MalformedInstance(_) => 2,
                _ => 3,
            },
            HarnessError::ChecksFailed { .. } => 3,
            _ => 2,
        }
    }
}

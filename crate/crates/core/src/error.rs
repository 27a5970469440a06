//! Error type shared by every engine module.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, FlorError>;

#[derive(Debug, thiserror::Error)]
pub enum FlorError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unsupported value type for '{name}': {detail}")]
    Type { name: String, detail: String },

    #[error("referential integrity violation: {0}")]
    Integrity(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("unknown value name '{name}'; known names: {}", known.join(", "))]
    UnknownName { name: String, known: Vec<String> },

    #[error("git: {0}")]
    Git(String),

    #[error("makefile parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported makefile construct at line {line}: {construct}")]
    Unsupported { line: usize, construct: String },

    #[error("dependency cycle: {}", cycle.join(" -> "))]
    Cycle { cycle: Vec<String> },

    #[error("unknown build target '{0}'")]
    UnknownTarget(String),

    #[error("missing source file named in deps: {0}")]
    MissingSource(String),

    #[error("event protocol error at event {ordinal}: {msg}")]
    Protocol { ordinal: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("project is locked by another writer: {0}")]
    Locked(String),

    #[error("step '{target}' exited with code {code}")]
    StepFailed { target: String, code: i32 },

    #[error("unresolved merge conflicts for {filename} at version {vid}")]
    UnresolvedConflict { vid: String, filename: String },

    #[error("{0}")]
    Invalid(String),
}

impl FlorError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlorError::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Which half of the dual-stage test a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Necessity,
    Sufficiency,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Necessity => f.write_str("necessity"),
            Side::Sufficiency => f.write_str("sufficiency"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FansError {
    #[error("input shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capability unavailable: {0}")]
    Capability(&'static str),

    #[error("readout class {index} out of range for a model with {classes} output(s)")]
    Readout { index: usize, classes: usize },

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("invalid model, layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for dimension {dim}")]
    Index { index: usize, dim: usize },

    #[error("no in-neighborhood samples on the {side} side; increase b or the sample-set size")]
    EmptySupport { side: Side },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("{metric}: {message}")]
    Degenerate { metric: &'static str, message: String },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    Magic { path: PathBuf, expected: u32, found: u32 },

    #[error("row {row} has {found} fields, expected {expected}")]
    RowLength { row: usize, expected: usize, found: usize },

    #[error("row {row}: label {label} out of range")]
    Label { row: usize, label: String },

    #[error("truncated file {path}: {message}")]
    Truncated { path: PathBuf, message: String },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FansError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FansError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        FansError::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FansError::Config(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FansError::Numeric(_) | FansError::Divergence { .. } => 3,
            FansError::EmptySupport { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = FansError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FansError::Shape { what, expected, got })
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("self-loop on vertex {0}")]
    SelfLoop(String),

    #[error("edge ({from}, {to}) references undeclared vertex {missing}")]
    UndeclaredVertex {
        from: String,
        to: String,
        missing: String,
    },

    #[error("vertex {0} declared twice with conflicting attributes")]
    ConflictingAttributes(String),

    #[error("unknown vertex {0}")]
    UnknownVertex(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("condition code {code} out of range at {context}")]
    CodeOutOfRange { code: i64, context: String },

    #[error("timestamp {0} is not on the 5-minute lattice")]
    OffLattice(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing path {}", .0.display())]
    MissingPath(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Process exit status classes used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Data = 3,
    Numerical = 4,
}

impl Error {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Config(_) | Error::MissingPath(_) | Error::InvalidArgument(_) => {
                ExitClass::Config
            }
            Error::NonFinite(_) | Error::Shape { .. } | Error::Degenerate(_) => {
                ExitClass::Numerical
            }
            _ => ExitClass::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the library.
///
/// The variants split into two families that callers (notably the CLI) map
/// onto different exit codes: I/O problems, and configuration or validation
/// problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(String),

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate column header {0:?}")]
    DuplicateHeader(String),

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("category {category:?} on column {column:?} does not accept parameter {param:?}")]
    UnknownParam {
        category: String,
        column: String,
        param: String,
    },

    #[error("family tree recursion exceeded depth {0} (cyclic definition?)")]
    TreeDepth(usize),

    #[error("entropy seed bank exhausted after {consumed} seeds and extra_seed_generator is off")]
    SeedExhausted { consumed: usize },

    #[error("basis format version {found} is not supported (expected {expected})")]
    BasisVersion { found: u32, expected: u32 },

    #[error("malformed basis: {0}")]
    BasisFormat(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

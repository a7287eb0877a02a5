// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by bank I/O, fitting, interventions and analysis.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// The file does not start with the expected magic bytes.
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic {
        /// Magic the reader was looking for.
        expected: &'static str,
        /// Bytes actually present (lossy UTF-8).
        found: String,
    },

    /// The declared header length runs past the end of the file.
    #[error("header length mismatch at offset {offset}: declared {declared} bytes, {available} available")]
    HeaderLength {
        /// Offset where the header starts.
        offset: usize,
        /// Length declared in the prefix.
        declared: usize,
        /// Bytes left in the file.
        available: usize,
    },

    /// The header is not valid UTF-8 JSON of the expected shape.
    #[error("invalid header at offset {offset}: {reason}")]
    InvalidHeader {
        /// Offset where the header starts.
        offset: usize,
        /// Parser message.
        reason: String,
    },

    /// Payload size disagrees with `count * dim * width`.
    #[error(
        "payload length mismatch at offset {offset}: expected {expected} bytes, found {found}"
    )]
    PayloadLength {
        /// Offset where the payload starts.
        offset: usize,
        /// Bytes required by the header.
        expected: usize,
        /// Bytes present.
        found: usize,
    },

    /// Two rows share the same ID.
    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    /// An ID is empty or longer than the 256-byte limit.
    #[error("invalid id {id:?}: {reason}")]
    InvalidId {
        /// The offending ID.
        id: String,
        /// What is wrong with it.
        reason: &'static str,
    },

    /// NaN or infinity in a row.
    #[error("non-finite value in row {id:?}, column {column}{}", offset.map(|o| format!(" (byte offset {o})")).unwrap_or_default())]
    NonFinite {
        /// ID of the row (or a row label for unnamed matrices).
        id: String,
        /// Column index within the row.
        column: usize,
        /// Byte offset in the file, when the value came from disk.
        offset: Option<usize>,
    },

    /// Row or vector dimensions disagree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        /// Dimension required by the first operand.
        expected: usize,
        /// Dimension supplied.
        found: usize,
    },

    /// Shape of a flat buffer does not match `count * dim`.
    #[error("shape mismatch: {count} rows of dim {dim} need {expected} values, got {found}")]
    Shape {
        /// Row count.
        count: usize,
        /// Row dimension.
        dim: usize,
        /// `count * dim`.
        expected: usize,
        /// Values supplied.
        found: usize,
    },

    /// Two banks share no IDs.
    #[error("banks share no ids")]
    EmptyIntersection,

    /// A bank carries the wrong kind tag for the operation.
    #[error("kind mismatch for {role} bank: expected {expected}, found {found}")]
    KindMismatch {
        /// Which argument was wrong.
        role: &'static str,
        /// Accepted kinds.
        expected: String,
        /// Kind present.
        found: String,
    },

    /// An operation that needs data got none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A parameter is out of its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The SVD iteration did not converge.
    #[error("singular value decomposition did not converge ({rows}x{cols})")]
    SvdNonConvergence {
        /// Rows of the decomposed matrix.
        rows: usize,
        /// Columns of the decomposed matrix.
        cols: usize,
    },

    /// Degenerate covariance in a diagnostic (e.g. all rows identical).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Filesystem error with the path that caused it.
    #[error("{}: {source}", path.display())]
    Io {
        /// Path being read or written.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization of side files.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent data, as opposed
    /// to numerical failure.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::SvdNonConvergence { .. })
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

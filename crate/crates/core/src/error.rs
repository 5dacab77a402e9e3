//! Error taxonomy shared by every module.
//!
//! The CLI maps these onto its exit codes: contract/routing problems are
//! usage errors, format/data/io problems are data errors, and divergence
//! gets its own code so shell harnesses can tell the classes apart.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not line up (channel mismatch, inner-product extent, ...).
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Window/stride/padding geometry produces an empty or invalid output.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A binary file is malformed. `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A (phase, skill) pair outside the seven routable domains.
    #[error("routing error: {0}")]
    Routing(String),

    /// Checkpoint architecture/config does not match what the caller expects.
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    /// Manifest/dataset-level problem (missing split, single-class labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A bug: states the library promises are unreachable.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

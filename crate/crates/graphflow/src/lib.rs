//! Scene-graph conditioned rectified flow at desk scale.
//!
//! A scene is a set of nodes (furniture-like objects) with predicate-labeled
//! directed edges. Three generative branches share one recipe: linear
//! interpolation paths between data and Gaussian noise, a velocity MLP trained
//! by mean squared error, and an Euler sampler that re-reads the graph through
//! a message-passing exchange unit at every step.
//!
//! Layout states are 8-vectors (translation, per-axis half-extent, yaw as
//! cos/sin). Shape states are 16-dim codec latents for 8x8x8 occupancy grids.
//! Texture states are per-voxel feature vectors anchored to a fixed
//! active-voxel set.

pub mod branches;
pub mod eval;
pub mod exchange;
pub mod flow;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod tensor;

pub mod cli;

/// Crate-wide error. Variants map onto the failure kinds the public
/// operations document: shape mismatches, contract violations, bad input
/// files, and runtime failures carrying enough context to act on.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dim { op: String, lhs: String, rhs: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown category: {0}")]
    Vocabulary(String),
    #[error("validation failed ({rule}): {detail}")]
    Validation { rule: String, detail: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("training failed at step {step}: {msg}")]
    Training { step: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dim {
            op: op.to_string(),
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Exit-code classification for the command line front end.
/// Usage problems exit 1, runtime failures exit 2.
pub fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::Config(_))
}

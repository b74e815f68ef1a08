//! Error type shared by all modules of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Construction parameters violate a type invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Operands live on different grids or geometries.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Every ray of the requested geometry misses the image grid.
    #[error("empty system matrix")]
    EmptySystemMatrix,

    /// Simulated line integrals too large to produce finite photon counts.
    #[error("photon starvation: line integral > {limit} on {} rays (first: {})", .rays.len(), .rays[0])]
    PhotonStarvation { limit: f64, rays: Vec<usize> },

    /// Training data admits only trivial solutions.
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    /// An iterative solver increased its objective beyond tolerance.
    #[error("solver diverged: {context} (trace: {trace:?})")]
    Divergence { context: String, trace: Vec<f64> },

    /// Conjugate gradient produced a non-finite iterate or breakdown.
    #[error("conjugate gradient breakdown at iteration {iter}: {context} (trace: {trace:?})")]
    CgBreakdown {
        context: String,
        iter: usize,
        trace: Vec<f64>,
    },

    /// A denoiser or network produced non-finite values.
    #[error("non-finite values: {0}")]
    NonFinite(String),

    /// Pipeline sub-step failure, tagged with block index and step label.
    #[error("pipeline block {block} step '{step}': {source}")]
    PipelineStep {
        block: usize,
        step: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    /// Stored artifact fails its self-description checks.
    #[error("corrupt artifact {path}: {reason}")]
    CorruptArtifact { path: String, reason: String },

    /// Artifact was produced under a different geometry/grid.
    #[error("geometry hash mismatch: expected {expected}, found {found}")]
    GeometryMismatch { expected: String, found: String },

    /// External denoiser protocol failure.
    #[error("external denoiser: {0}")]
    ExternalDenoiser(String),
}

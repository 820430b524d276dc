use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("triangle index {index} out of range (mesh has {count} triangles)")]
    TriangleOutOfRange { index: usize, count: usize },

    #[error("vertex index {index} out of range (mesh has {count} vertices)")]
    VertexOutOfRange { index: usize, count: usize },

    #[error("invalid barycentric coordinates {0:?}: components must lie in [0, 1] and sum to 1")]
    InvalidBarycentric([f64; 3]),

    #[error("exp map trace exceeded {0} edge crossings (degenerate mesh?)")]
    TraceLimit(usize),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("connectivity mismatch: {0}")]
    ConnectivityMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing color data on mesh '{0}'; run in lesion-only mode (texture weight 0)")]
    MissingColor(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown lesion id '{0}'")]
    UnknownId(String),

    #[error("cannot place {requested} lesions with minimum spacing {spacing} mm (placed {placed}); lower the count or spacing")]
    SpacingInfeasible {
        requested: usize,
        placed: usize,
        spacing: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("point cloud has no scan origins")]
    MissingScanOrigins,

    #[error("degenerate neighborhood around point {index}: zero covariance")]
    DegenerateNeighborhood { index: usize },

    #[error("degenerate node star at node {index}")]
    DegenerateStar { index: usize },

    #[error("nodes {0} and {1} are not connected by an edge")]
    NotAnEdge(usize, usize),

    #[error("point {0:?} lies outside the mesh")]
    OutsideMesh(Vec<f64>),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("internal assertion failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

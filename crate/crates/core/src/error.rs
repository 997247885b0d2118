use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("dimension error at node `{node}`: {msg}")]
    NodeDimension { node: String, msg: String },

    #[error("map domain must be Euclidean (l2) for `{0}`")]
    NonEuclidean(String),

    #[error("Enflo iterate would have domain dimension {0}, above the limit 16384")]
    DimensionOverflow(usize),

    #[error("zero-sum sampling rejected {0} consecutive draws")]
    RejectionLimit(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid extension: {0}")]
    InvalidExtension(String),

    #[error("spaces do not match: {0}")]
    SpaceMismatch(String),

    #[error("map is not a selection: residual {residual:e} outside the image of i")]
    NotASelection { residual: f64 },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("subspace is not invariant under element {element}: residual {residual:e}")]
    NotInvariant { element: usize, residual: f64 },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),

    #[error("cocycle value for element {element} escapes the image of i: residual {residual:e}")]
    EscapesSubspace { element: usize, residual: f64 },

    #[error("reconstructed action is not a homomorphism: residual {residual:e}")]
    Incompatible { residual: f64 },

    #[error("factor system has no known potential h with phi = rho h")]
    NoPotential,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

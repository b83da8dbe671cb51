use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A point or window lies outside the region where the object is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A geometric hypothesis failed and no override was given.
    #[error("geometry hypothesis violated: {0}")]
    Hypothesis(String),

    /// Hard geometric failure (non-positive gap width).
    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("solver failure: {msg} (last relative residual {residual:.3e})")]
    Solver {
        msg: String,
        residual: f64,
        history: Vec<f64>,
    },

    /// An a-posteriori verification gate did not pass.
    #[error("verification gate failed: {0}")]
    Gate(String),
}

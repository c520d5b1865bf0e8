use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DrapeError {
    #[error("degenerate triangle (|signed area| = {area:e})")]
    DegenerateTriangle { area: f64 },
    #[error("uv point ({u}, {v}) is not covered by the garment parametrization")]
    InvalidUvPoint { u: f64, v: f64 },
    #[error("uv point ({u}, {v}) lies outside [0,1]^2")]
    OutOfDomain { u: f64, v: f64 },
    #[error("inconsistent dimensions: {0}")]
    InconsistentDims(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported or unrecognized format: {0}")]
    FormatVersionMismatch(String),
    #[error("sampling structure around ({u}, {v}) leaves the valid uv region")]
    InvalidStructure { u: f64, v: f64 },
    #[error("edge {edge} has zero rest length")]
    ZeroRestLength { edge: usize },
    #[error("collider has no vertices")]
    EmptyCollider,
    #[error("mesh is degenerate: {0}")]
    DegenerateMesh(String),
    #[error("every sampled point produced an invalid structure")]
    AllPointsInvalid,
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("parameter budgets differ by more than 0.5%: {0}")]
    BudgetMismatch(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = DrapeError> = std::result::Result<T, E>;

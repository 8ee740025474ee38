use thiserror::Error;

use crate::minimizer::Reconstruction;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("fields live on different grids or masks")]
    GridMismatch,

    #[error("negative weight {value} at node ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, value: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular system: row for node ({i}, {j}) has no conducting neighbours")]
    SingularSystem { i: usize, j: usize },

    #[error("perfectly conducting component {component} is not equipotential (spread {spread:e} > {tolerance:e})")]
    InclusionSpreadExceeded {
        component: u32,
        spread: f64,
        tolerance: f64,
    },

    #[error("step sizes violate tau*sigma*L^2 <= 1 (got {product})")]
    InvalidStep { product: f64 },

    #[error("minimizer stopped after {} iterations with relative gap {:e}", .0.report.iterations, .0.report.relative_gap())]
    NotConverged(Box<Reconstruction>),

    #[error("point ({x}, {y}) lies outside the closed unit disk")]
    OutsideDomain { x: f64, y: f64 },

    #[error("unknown phantom '{0}'")]
    UnknownPhantom(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

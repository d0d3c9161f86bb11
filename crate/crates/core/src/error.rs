use thiserror::Error;

use crate::regime_solver::WellPosednessReport;

/// Errors produced by the numerical library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state {value} is outside the state space ({lower}, {upper})")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not a Z-matrix: entry ({row}, {col}) = {value} is positive")]
    NotZMatrix { row: usize, col: usize, value: f64 },

    #[error("matrix is not a nonsingular M-matrix (first failing index {index})")]
    NotMMatrix { index: usize },

    #[error("singular matrix: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("exponent p = {p} is outside (-1, 1); use the Newton solver instead")]
    ExponentOutOfRange { p: f64 },

    #[error("{method} did not converge after {iterations} iterations (last error {last_error:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        last_error: f64,
        last_iterate: Vec<f64>,
    },

    #[error("factor volatility vanishes at grid node {node} (y = {y})")]
    DegenerateVolatility { node: usize, y: f64 },

    #[error("central scheme requires h < h* = {h_star:e}, got h = {h:e}")]
    CentralSchemeUnstable { h: f64, h_star: f64 },

    #[error("problem is ill-posed: {}", .0.summary())]
    IllPosed(Box<WellPosednessReport>),

    #[error("bound ordering g1 <= eta <= g2 violated at nodes {nodes:?}")]
    BoundOrdering { nodes: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;

//! Well-posedness certificates, HJB solvers and Monte-Carlo checks for
//! infinite-horizon power-utility investment problems driven by a
//! stochastic factor.
//!
//! The factor is either a finite-state Markov chain ([`model::RegimeModel`])
//! or a one-dimensional diffusion ([`model::DiffusionModel`]). In both cases
//! the value function is `V(x, y) = x^{1-R} / (1-R) f(y)` and the optimal
//! consumption rate is `u = f^{-1/R}`.

pub mod analysis;
pub mod diffusion_solver;
pub mod discretizer;
pub mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod regime_solver;

pub use error::{Error, Result};

//! Numerical laboratory for the Cauchy problem ∂ₜu + (−Δ)^{θ/2}u = F(u), u(0) = μ.

pub mod asymptotics;
pub mod classifier;
pub mod error;
pub mod frac_kernel;
pub mod grid;
pub mod harness;
pub mod initial_data;
pub mod mild_solver;
pub mod nonlinearity;
pub mod quad;
pub mod spline;
pub mod supersolution;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};

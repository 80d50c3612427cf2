//! Numerical laboratory for time-periodic scalar reaction–diffusion
//! equations `u_t = u_xx + f(t, u, u_x)` on the circle.

pub mod asymptotics;
pub mod error;
pub mod expr;
pub mod floquet;
pub mod grid;
pub mod linalg;
pub mod manifolds;
pub mod recursion;
pub mod stepper;
pub mod zeroes;

pub use error::{Error, Result};
pub use grid::{CircleGrid, StateVector, DEFAULT_ALPHA};

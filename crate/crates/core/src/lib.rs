//! Market-entry reinforcement learning with many agents: a direct agent
//! simulation, an exact enumeration oracle for the closure coefficients and a
//! finite-volume solver for the resulting kinetic equation, plus the
//! diagnostics that tie them together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abm;
pub mod closure;
pub mod csv;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod model;
pub mod pde;
pub mod prob;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::ModelParams;
pub use prob::ProbabilityFn;

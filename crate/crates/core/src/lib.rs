//! Structured-grid solver for the compressible damped elastic
//! Navier-Stokes-Poisson system on a periodic slab, with runtime
//! diagnostics for constraint propagation and energy dissipation.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod grid;
pub mod init;
pub mod ops;
pub mod model_full;
pub mod model_reduced;
pub mod poisson;
pub mod real;
pub mod runner;
pub mod runtime;
pub mod snapshot;
pub mod timestep;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;

/// Double-precision instantiations used by the driver.
pub mod f64_types {
    pub type Grid = crate::grid::Grid<f64>;
    pub type ScalarField = crate::field::ScalarField<f64>;
    pub type VectorField = crate::field::VectorField<f64>;
    pub type TensorField = crate::field::TensorField<f64>;
    pub type FullState = crate::model_full::FullState<f64>;
    pub type BipolarState = crate::model_full::BipolarState<f64>;
    pub type ReducedState = crate::model_reduced::ReducedState<f64>;
    pub type PoissonSolver = crate::poisson::PoissonSolver<f64>;
}

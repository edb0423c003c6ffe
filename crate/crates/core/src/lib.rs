//! Effective bending energies of thin plates with two-scale periodic microstructure.

pub mod app;
pub mod cell_inner;
pub mod cell_outer;
pub mod error;
pub mod gamma;
pub mod linsolve;
pub mod mesh;
pub mod microstructure;
pub mod plate;
pub mod quadrature;
pub mod tensor;

pub use error::{Error, Result};

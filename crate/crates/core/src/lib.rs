//! Coupled-dipole simulation of collective spontaneous emission from dilute,
//! disordered clouds of motionless two-level (J=0 → J=1) atoms.
//!
//! Units throughout: ħ = k = γ = 1. Lengths are in 1/k, frequencies in γ and
//! times in the single-atom lifetime 1/γ.
//!
//! The pipeline for one disorder realization is
//! [`ensemble::sample_cube`] → [`kernel::build_coupling_matrix`] →
//! [`dynamics::steady_state`] → [`dynamics::make_propagator`] → observables.
//! [`harness`] repeats it over many realizations and averages in a fixed order.

pub mod dimer;
pub mod diffusion;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kernel;
mod linalg;
pub mod observables;
pub mod output;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

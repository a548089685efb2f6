//! Spectral laboratory for the Moore–Gibson–Thompson equation
//! τψ_ttt + ψ_tt − Δψ − (δ+τ)Δψ_t = f(ψ) on ℝⁿ.

pub mod error;
pub mod model;
pub mod ode;
pub mod spectral;
pub mod fields;
pub mod linear;
pub mod nonlinear;
pub mod limit;
pub mod cli;

pub use error::{LabError, Result};

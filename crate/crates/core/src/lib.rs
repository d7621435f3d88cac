//! Local spectral deformation of fiber Hamiltonians `H(ξ) = ω_ξ + T_V`.
//!
//! The pipeline runs from dispersion relations and their dilation field,
//! through the flow and the deformed operator `H_θ(ξ)`, to spectra,
//! Mourre constants, thresholds and band tracking. [`commlab`] checks the
//! abstract commutator estimates on finite matrices.

pub mod commlab;
pub mod dispersion;
pub mod error;
pub mod flow;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod mourre;
pub mod operator;
pub mod potential;
pub mod spectra;
pub mod thresholds;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

//! Spectral solver and asymptotic analysis for silent linear wave equations on the torus.

pub mod coeffexpr;
pub mod dop853;
mod dop853_tableau;
pub mod error;
pub mod fourier;
pub mod kasner;
pub mod linalg;
pub mod modeode;
pub mod quad;
pub mod silentpde;
pub mod spectral;

pub use error::{Error, Result};

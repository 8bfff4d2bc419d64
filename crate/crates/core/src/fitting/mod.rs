//! Fitting the Gaussian model to spectral data and measuring color error.

mod eval;
mod lm;
mod mixture;

pub use eval::*;
pub use mixture::*;

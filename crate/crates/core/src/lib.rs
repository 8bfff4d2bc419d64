//! Diffuse fluorescent materials for non-spectral rendering.
//!
//! Bispectral reradiation matrices are split into a reflectance diagonal and a
//! normalized fluorescence term, the latter modeled as a sum of axis-aligned 2D
//! Gaussians. Against Gaussian sensitivity functions (the CIE 2006 XYZ
//! observer approximated by Gaussians, optionally with a UV band) the model
//! reduces to a small K×K matrix in closed form, so colors can be transported
//! with a single matrix-vector product.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod colorimetry;
pub mod error;
pub mod fitting;
pub mod image_io;
pub mod io;
pub mod palette;
pub mod render;
pub mod reradiation;
pub mod spectral;

/// Library version embedded in service responses and exports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use analytic::{FluorescenceLobe, FluorescentMaterial};
pub use colorimetry::{Illuminant, IlluminantRegistry};
pub use error::{Error, Result};
pub use palette::{Component, MaterialReducer, Palette, PaletteAxes, PaletteContext};
pub use reradiation::{ComposedRerad, ReducedExport, ReducedRerad, SpectralReradMatrix};
pub use spectral::{Gaussian1D, Gaussian2D, Quadrature, SensitivityBasis, Spectrum, WavelengthGrid};

//! Wavelength grids, tabulated spectra, Gaussian primitives and Gaussian
//! sensitivity bases.
//!
//! # Gaussian convention
//!
//! Every Gaussian in this crate is *unnormalized*: a 1D Gaussian with
//! amplitude `α`, mean `μ` and standard deviation `σ` evaluates to
//!
//! ```text
//! g(λ) = α · exp(−(λ − μ)² / (2σ²))
//! ```
//!
//! so `α` is the peak value, not the area. The area over ℝ is `α·σ·√(2π)`.
//! Gaussians have infinite support; analytic integrals run over the whole
//! real line and are never clamped to the grid range.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid bounds (nm).
pub const DEFAULT_LAMBDA_MIN: f64 = 300.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 800.0;
pub const DEFAULT_LAMBDA_STEP: f64 = 1.0;

/// Gaussian fits of the CIE 2006 2° observer and the UV band.
pub mod gaussian_cmf {
    use super::Gaussian1D;

    /// Short-wavelength lobe of x̄.
    pub const X_BAR_SHORT: Gaussian1D = Gaussian1D::new(0.35087, 443.412226, 20.838149);
    /// Long-wavelength lobe of x̄.
    pub const X_BAR_LONG: Gaussian1D = Gaussian1D::new(1.141263, 596.813847, 33.276659);
    pub const Y_BAR: Gaussian1D = Gaussian1D::new(1.024335, 560.186336, 43.898132);
    pub const Z_BAR: Gaussian1D = Gaussian1D::new(1.915863, 447.268188, 23.542626);
    /// Extra sensitivity band capturing UV to visible reradiation.
    pub const UV_BAND: Gaussian1D = Gaussian1D::new(1.0, 382.535501, 57.432550);

    /// Atoms of the XYZU basis, in transfer-matrix row order.
    pub const XYZU_ATOMS: [Gaussian1D; 5] = [X_BAR_SHORT, X_BAR_LONG, Y_BAR, Z_BAR, UV_BAND];

    /// Atom-to-channel transfer matrix for XYZU (5×4, row-major).
    pub const XYZU_TRANSFER: [[f64; 4]; 5] = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
}

/// Quadrature rule used for every discrete inner product on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Every sample weighted by the nominal step.
    Rectangle,
}

/// A uniform wavelength sampling `min, min + step, …`, with the last sample
/// clamped to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WavelengthGrid {
    min: f64,
    max: f64,
    step: f64,
    #[serde(skip)]
    len: usize,
}

#[derive(Deserialize)]
struct GridSpec {
    min: f64,
    max: f64,
    step: f64,
}

impl WavelengthGrid {
    pub fn new(lambda_min: f64, lambda_max: f64, step: f64) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_max.is_finite() && step.is_finite()) {
            return Err(Error::InvalidGrid("bounds and step must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if lambda_min >= lambda_max {
            return Err(Error::InvalidGrid(format!(
                "inverted range: min {lambda_min} >= max {lambda_max}"
            )));
        }
        let len = ((lambda_max - lambda_min) / step).round() as usize + 1;
        Ok(WavelengthGrid {
            min: lambda_min,
            max: lambda_max,
            step,
            len,
        })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Wavelength of sample `i` (nm).
    pub fn wavelength(&self, i: usize) -> f64 {
        (self.min + i as f64 * self.step).min(self.max)
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.wavelength(i))
    }

    /// Index of the sample closest to `lambda`, clamped to the grid.
    pub fn nearest_index(&self, lambda: f64) -> usize {
        let idx = ((lambda - self.min) / self.step).round();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.len - 1)
        }
    }

    /// Quadrature weights for integrating a sampled function over the grid.
    pub fn weights(&self, rule: Quadrature) -> Vec<f64> {
        let n = self.len;
        match rule {
            Quadrature::Rectangle => vec![self.step; n],
            Quadrature::Trapezoid => (0..n)
                .map(|i| {
                    let left = if i > 0 { self.wavelength(i) - self.wavelength(i - 1) } else { 0.0 };
                    let right = if i + 1 < n { self.wavelength(i + 1) - self.wavelength(i) } else { 0.0 };
                    0.5 * (left + right)
                })
                .collect(),
        }
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        WavelengthGrid::new(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_STEP)
            .expect("default grid is valid")
    }
}

impl<'de> Deserialize<'de> for WavelengthGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = GridSpec::deserialize(d)?;
        WavelengthGrid::new(spec.min, spec.max, spec.step).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for WavelengthGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{} nm step {} ({} samples)", self.min, self.max, self.step, self.len)
    }
}

pub(crate) fn check_grid(expected: &WavelengthGrid, found: &WavelengthGrid) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

/// A function tabulated on a [`WavelengthGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("values", format!("non-finite sample at index {i}")));
        }
        Ok(Spectrum { grid, values })
    }

    pub fn from_fn(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.wavelengths().map(f).collect();
        Spectrum { grid, values }
    }

    pub fn constant(grid: WavelengthGrid, value: f64) -> Self {
        Spectrum {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Linear interpolation of a `(wavelength, value)` table onto `grid`;
    /// zero outside the tabulated range.
    pub fn resample(grid: WavelengthGrid, table: &[(f64, f64)]) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Empty("spectral table".into()));
        }
        if table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::param("wavelength_nm", "table wavelengths must strictly increase"));
        }
        let first = table[0].0;
        let last = table[table.len() - 1].0;
        let values = grid
            .wavelengths()
            .map(|l| {
                if l < first || l > last {
                    return 0.0;
                }
                let hi = table.partition_point(|&(x, _)| x < l);
                if hi == 0 {
                    return table[0].1;
                }
                let (x0, y0) = table[hi - 1];
                let (x1, y1) = table[hi];
                y0 + (y1 - y0) * (l - x0) / (x1 - x0)
            })
            .collect();
        Spectrum::new(grid, values)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_reflectance(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    pub fn integrate(&self, rule: Quadrature) -> f64 {
        self.grid
            .weights(rule)
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Spectrum {
        Spectrum {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Unnormalized 1D Gaussian `α·exp(−(λ−μ)²/(2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub amplitude: f64,
    #[serde(rename = "mean_nm")]
    pub mean: f64,
    #[serde(rename = "std_nm")]
    pub std: f64,
}

impl Gaussian1D {
    pub const fn new(amplitude: f64, mean: f64, std: f64) -> Self {
        Gaussian1D { amplitude, mean, std }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let d = lambda - self.mean;
        self.amplitude * (-d * d / (2.0 * self.std * self.std)).exp()
    }

    /// Pointwise product, itself an unnormalized Gaussian.
    pub fn product(&self, other: &Gaussian1D) -> Gaussian1D {
        let v1 = self.std * self.std;
        let v2 = other.std * other.std;
        let var = 1.0 / (1.0 / v1 + 1.0 / v2);
        let mean = var * (self.mean / v1 + other.mean / v2);
        let d = self.mean - other.mean;
        let amplitude = self.amplitude * other.amplitude * (-d * d / (2.0 * (v1 + v2))).exp();
        Gaussian1D {
            amplitude,
            mean,
            std: var.sqrt(),
        }
    }

    /// Integral over ℝ.
    pub fn integral(&self) -> f64 {
        self.amplitude * self.std * (2.0 * PI).sqrt()
    }

    pub fn discretize(&self, grid: &WavelengthGrid) -> Spectrum {
        Spectrum::from_fn(*grid, |l| self.eval(l))
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if !(self.amplitude.is_finite() && self.mean.is_finite() && self.std.is_finite()) {
            return Err(Error::param(field, "non-finite Gaussian parameter"));
        }
        if self.std <= 0.0 {
            return Err(Error::param(field, format!("std must be positive, got {}", self.std)));
        }
        Ok(())
    }
}

/// Axis-aligned unnormalized 2D Gaussian over (λi, λo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub amplitude: f64,
    /// Mean along the absorption (incoming) axis.
    pub mean_a: f64,
    pub std_a: f64,
    /// Mean along the emission (outgoing) axis.
    pub mean_e: f64,
    pub std_e: f64,
}

impl Gaussian2D {
    pub fn eval(&self, lambda_i: f64, lambda_o: f64) -> f64 {
        let da = (lambda_i - self.mean_a) / self.std_a;
        let de = (lambda_o - self.mean_e) / self.std_e;
        self.amplitude * (-0.5 * (da * da + de * de)).exp()
    }

    /// Unit-peak marginal factor along λi.
    pub fn absorption(&self) -> Gaussian1D {
        Gaussian1D::new(self.amplitude, self.mean_a, self.std_a)
    }

    /// Unit-peak factor along λo; `eval = absorption(λi) · emission(λo)`.
    pub fn emission(&self) -> Gaussian1D {
        Gaussian1D::new(1.0, self.mean_e, self.std_e)
    }
}

/// Serialized form of a Gaussian basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub atoms: Vec<Gaussian1D>,
    pub transfer: Vec<Vec<f64>>,
    pub grid: WavelengthGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "is_default_rule")]
    pub quadrature: Quadrature,
}

fn is_default_rule(q: &Quadrature) -> bool {
    *q == Quadrature::Trapezoid
}

/// Sensitivity functions `S = G·T_G` built from Gaussian atoms, with their
/// duals `S̃ = S (SᵀS)⁻¹`.
///
/// Matrices are `N×K` with one column per channel. Inner products `SᵀS`
/// carry the grid quadrature weights.
#[derive(Debug, Clone)]
pub struct SensitivityBasis {
    grid: WavelengthGrid,
    quadrature: Quadrature,
    weights: Vec<f64>,
    atoms: Vec<Gaussian1D>,
    transfer: DMatrix<f64>,
    s: DMatrix<f64>,
    dual: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    labels: Vec<String>,
}

/// Smallest admissible eigenvalue ratio of the Gram matrix.
const GRAM_RCOND: f64 = 1e-12;

impl SensitivityBasis {
    pub fn build(
        atoms: Vec<Gaussian1D>,
        transfer: DMatrix<f64>,
        grid: WavelengthGrid,
        labels: Vec<String>,
    ) -> Result<Self> {
        Self::build_with(atoms, transfer, grid, labels, Quadrature::Trapezoid)
    }

    pub fn build_with(
        atoms: Vec<Gaussian1D>,
        transfer: DMatrix<f64>,
        grid: WavelengthGrid,
        labels: Vec<String>,
        quadrature: Quadrature,
    ) -> Result<Self> {
        let m = atoms.len();
        let k = transfer.ncols();
        if m == 0 || k == 0 {
            return Err(Error::Empty("basis atoms".into()));
        }
        if transfer.nrows() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: transfer.nrows(),
            });
        }
        if m < k {
            return Err(Error::param("transfer", format!("need at least K={k} atoms, got {m}")));
        }
        if labels.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: labels.len(),
            });
        }
        for (i, a) in atoms.iter().enumerate() {
            a.validate(&format!("atoms[{i}]"))?;
        }

        let n = grid.len();
        let g = DMatrix::from_fn(n, m, |i, j| atoms[j].eval(grid.wavelength(i)));
        let s = &g * &transfer;
        let weights = grid.weights(quadrature);
        let gram = weighted_gram(&s, &s, &weights);

        let eig = gram.clone().symmetric_eigen();
        let max_ev = eig.eigenvalues.max();
        let min_ev = eig.eigenvalues.min();
        if !(max_ev > 0.0) || min_ev <= GRAM_RCOND * max_ev {
            return Err(Error::SingularBasis);
        }
        let gram_inv = gram.cholesky().ok_or(Error::SingularBasis)?.inverse();
        let gram_inv = (&gram_inv + gram_inv.transpose()) * 0.5;
        let dual = &s * &gram_inv;

        Ok(SensitivityBasis {
            grid,
            quadrature,
            weights,
            atoms,
            transfer,
            s,
            dual,
            gram_inv,
            labels,
        })
    }

    /// Gaussian CIE 2006 XYZ basis (four atoms, K = 3).
    pub fn xyz(grid: WavelengthGrid) -> Self {
        let atoms = gaussian_cmf::XYZU_ATOMS[..4].to_vec();
        let transfer = DMatrix::from_fn(4, 3, |i, j| gaussian_cmf::XYZU_TRANSFER[i][j]);
        Self::build(atoms, transfer, grid, labels(&["X", "Y", "Z"])).expect("XYZ basis is well conditioned")
    }

    /// Gaussian XYZ basis augmented with the default UV band (K = 4).
    pub fn xyzu(grid: WavelengthGrid) -> Self {
        Self::xyz_with_uv(grid, gaussian_cmf::UV_BAND).expect("XYZU basis is well conditioned")
    }

    /// `"xyz"` or `"xyzu"` (case-insensitive).
    pub fn by_name(name: &str, grid: WavelengthGrid) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "xyz" => Ok(Self::xyz(grid)),
            "xyzu" => Ok(Self::xyzu(grid)),
            _ => Err(Error::Unknown {
                kind: "basis",
                name: name.to_string(),
            }),
        }
    }

    /// Hex SHA-256 of the descriptor JSON; identifies the basis in outputs.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.descriptor()).expect("descriptor serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// XYZU basis with a custom UV atom.
    pub fn xyz_with_uv(grid: WavelengthGrid, uv: Gaussian1D) -> Result<Self> {
        let mut atoms = gaussian_cmf::XYZU_ATOMS.to_vec();
        atoms[4] = uv;
        let transfer = DMatrix::from_fn(5, 4, |i, j| gaussian_cmf::XYZU_TRANSFER[i][j]);
        Self::build(atoms, transfer, grid, labels(&["X", "Y", "Z", "U"]))
    }

    pub fn from_descriptor(desc: &BasisDescriptor) -> Result<Self> {
        let m = desc.atoms.len();
        let k = desc.transfer.first().map_or(0, Vec::len);
        if desc.transfer.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: desc.transfer.len(),
            });
        }
        if let Some(row) = desc.transfer.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
            });
        }
        let transfer = DMatrix::from_fn(m, k, |i, j| desc.transfer[i][j]);
        let labels = match &desc.labels {
            Some(l) => l.clone(),
            None => (0..k).map(|i| format!("c{i}")).collect(),
        };
        Self::build_with(desc.atoms.clone(), transfer, desc.grid, labels, desc.quadrature)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            atoms: self.atoms.clone(),
            transfer: self.transfer.row_iter().map(|r| r.iter().copied().collect()).collect(),
            grid: self.grid,
            labels: Some(self.labels.clone()),
            quadrature: self.quadrature,
        }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[Gaussian1D] {
        &self.atoms
    }

    /// `T_G`, M×K.
    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }

    /// Discretized sensitivities `S`, N×K.
    pub fn sensitivities(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Dual sensitivities `S̃`, N×K.
    pub fn duals(&self) -> &DMatrix<f64> {
        &self.dual
    }

    /// `C = (SᵀS)⁻¹`, K×K.
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Channel count K.
    pub fn channels(&self) -> usize {
        self.s.ncols()
    }

    /// Max-abs deviation of `SᵀS̃` from the identity.
    pub fn dual_identity_error(&self) -> f64 {
        let p = weighted_gram(&self.s, &self.dual, &self.weights);
        let k = self.channels();
        (&p - DMatrix::<f64>::identity(k, k)).amax()
    }

    /// Project a spectrum onto the sensitivities: `SᵀL`.
    pub fn project(&self, spectrum: &Spectrum) -> Result<DVector<f64>> {
        check_grid(&self.grid, spectrum.grid())?;
        Ok(self.project_values(spectrum.values()))
    }

    pub(crate) fn project_values(&self, values: &[f64]) -> DVector<f64> {
        let k = self.channels();
        DVector::from_fn(k, |c, _| {
            self.s
                .column(c)
                .iter()
                .zip(values)
                .zip(&self.weights)
                .map(|((s, v), w)| s * v * w)
                .sum()
        })
    }

    /// `∫S_Y`, the Y coordinate of a unit reflectance under equal-energy
    /// light. Albedo colors are relative to it, so a perfect white has Y = 1.
    pub fn white_y(&self) -> f64 {
        let c = if self.channels() > 1 { 1 } else { 0 };
        self.s.column(c).iter().zip(&self.weights).map(|(s, w)| s * w).sum()
    }

    /// Reflectance spectrum `k·S̃·ρ` of a relative albedo color, `k = white_y()`.
    pub fn albedo_spectrum(&self, rho: &[f64]) -> Result<Spectrum> {
        let k = self.white_y();
        let scaled: Vec<f64> = rho.iter().map(|r| r * k).collect();
        self.reconstruct(&scaled)
    }

    /// Spectrum `S̃·c` reconstructed from channel coordinates.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<Spectrum> {
        if coords.len() != self.channels() {
            return Err(Error::DimensionMismatch {
                expected: self.channels(),
                found: coords.len(),
            });
        }
        let v = &self.dual * DVector::from_column_slice(coords);
        Spectrum::new(self.grid, v.iter().copied().collect())
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `Aᵀ W B` for N×p and N×q matrices and diagonal weights W.
pub(crate) fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let wb = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * w[i]);
    a.transpose() * wb
}

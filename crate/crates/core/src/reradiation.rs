//! Spectral reradiation matrices, their reflectance / normalized-fluorescence
//! split, and reduction to K×K matrices acting on colors.
//!
//! Layout: rows are indexed by the outgoing wavelength λo, columns by the
//! incoming wavelength λi, both ascending. Reradiation only goes toward longer
//! wavelengths, so every entry above the diagonal in energy (row < column) is
//! zero.
//!
//! The diagonal is a reflectance (a Dirac along λo = λi) and carries a single
//! grid measure when integrated; off-diagonal entries are densities and carry
//! one measure per wavelength axis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{check_grid, Quadrature, SensitivityBasis, Spectrum, WavelengthGrid};

/// Reflectances within this distance of 1 are clamped before normalization.
pub const RHO_EPSILON: f64 = 1e-4;

/// Sampled sensor responses (CMFs or a sensitivity basis) used for direct
/// spectral integration.
#[derive(Debug, Clone)]
pub struct Observer {
    grid: WavelengthGrid,
    weights: Vec<f64>,
    curves: DMatrix<f64>,
}

impl Observer {
    pub fn new(grid: WavelengthGrid, curves: DMatrix<f64>, quadrature: Quadrature) -> Result<Self> {
        if curves.nrows() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: curves.nrows(),
            });
        }
        Ok(Observer {
            weights: grid.weights(quadrature),
            grid,
            curves,
        })
    }

    /// The first `channels` sensitivities of a basis (e.g. XYZ out of XYZU).
    pub fn from_basis(basis: &SensitivityBasis, channels: usize) -> Self {
        let k = channels.min(basis.channels());
        Observer {
            grid: *basis.grid(),
            weights: basis.weights().to_vec(),
            curves: basis.sensitivities().columns(0, k).into_owned(),
        }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn channels(&self) -> usize {
        self.curves.ncols()
    }

    /// `∫ L(λ) s(λ) dλ`, the color of a light seen directly.
    pub fn integrate(&self, spectrum: &Spectrum) -> Result<Vec<f64>> {
        check_grid(&self.grid, spectrum.grid())?;
        Ok((0..self.channels())
            .map(|c| {
                self.curves
                    .column(c)
                    .iter()
                    .zip(spectrum.values())
                    .zip(&self.weights)
                    .map(|((s, v), w)| s * v * w)
                    .sum()
            })
            .collect())
    }
}

/// Counts of entries altered while loading a measured matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Non-zero entries with λo < λi that were zeroed.
    pub zeroed_upward: usize,
    /// Negative entries clamped to zero.
    pub clamped_negative: usize,
}

/// Bispectral reradiation matrix `P(λi, λo)` sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReradMatrix {
    grid: WavelengthGrid,
    entries: DMatrix<f64>,
}

impl SpectralReradMatrix {
    /// Validates and cleans raw entries: upward (anti-Stokes) entries are
    /// zeroed and negative noise is clamped, both counted in the report.
    pub fn new(grid: WavelengthGrid, mut entries: DMatrix<f64>) -> Result<(Self, LoadReport)> {
        let n = grid.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if entries.nrows() != n { entries.nrows() } else { entries.ncols() },
            });
        }
        let mut report = LoadReport::default();
        for i in 0..n {
            for o in 0..n {
                let v = entries[(o, i)];
                if !v.is_finite() {
                    return Err(Error::NonPhysical(format!("non-finite entry at (λo={o}, λi={i})")));
                }
                if o < i {
                    if v != 0.0 {
                        report.zeroed_upward += 1;
                        entries[(o, i)] = 0.0;
                    }
                } else if v < 0.0 {
                    report.clamped_negative += 1;
                    entries[(o, i)] = 0.0;
                }
            }
        }
        Ok((SpectralReradMatrix { grid, entries }, report))
    }

    pub fn zeros(grid: WavelengthGrid) -> Self {
        let n = grid.len();
        SpectralReradMatrix {
            grid,
            entries: DMatrix::zeros(n, n),
        }
    }

    /// Non-fluorescent matrix with `ρ` on the diagonal.
    pub fn from_reflectance(rho: &Spectrum) -> Self {
        SpectralReradMatrix {
            grid: *rho.grid(),
            entries: DMatrix::from_diagonal(&DVector::from_column_slice(rho.values())),
        }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    /// Entries, rows = λo, columns = λi.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn diagonal(&self) -> Spectrum {
        Spectrum::from_fn_indexed(self.grid, |i| self.entries[(i, i)])
    }

    /// `∫ P(λi, λo) dλo` for every incoming sample λi.
    pub fn energy_per_input(&self, quadrature: Quadrature) -> Vec<f64> {
        let w = self.grid.weights(quadrature);
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                let off: f64 = (i + 1..n).map(|o| self.entries[(o, i)] * w[o]).sum();
                self.entries[(i, i)] + off
            })
            .collect()
    }

    pub fn has_fluorescence(&self) -> bool {
        let n = self.grid.len();
        (0..n).any(|i| (i + 1..n).any(|o| self.entries[(o, i)] != 0.0))
    }
}

/// Reflectance diagonal plus normalized fluorescence,
/// `P = R + F̄·(1 − ρ(λi))` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedRerad {
    pub rho: Spectrum,
    /// Normalized fluorescence, rows = λo, columns = λi; zero on and above
    /// the diagonal in energy.
    pub fbar: DMatrix<f64>,
    /// Indices where `ρ` was clamped to `1 − ε`.
    pub clamped: Vec<usize>,
}

pub fn decompose(p: &SpectralReradMatrix) -> Result<DecomposedRerad> {
    let n = p.grid.len();
    let mut rho = Vec::with_capacity(n);
    let mut clamped = Vec::new();
    for i in 0..n {
        let r = p.entries[(i, i)];
        if r > 1.0 {
            return Err(Error::NonPhysical(format!(
                "reflectance {r} > 1 at {} nm",
                p.grid.wavelength(i)
            )));
        }
        if r < 0.0 {
            return Err(Error::NonPhysical(format!(
                "negative reflectance {r} at {} nm",
                p.grid.wavelength(i)
            )));
        }
        if r > 1.0 - RHO_EPSILON {
            clamped.push(i);
            rho.push(1.0 - RHO_EPSILON);
        } else {
            rho.push(r);
        }
    }
    let fbar = DMatrix::from_fn(n, n, |o, i| if o > i { p.entries[(o, i)] / (1.0 - rho[i]) } else { 0.0 });
    Ok(DecomposedRerad {
        rho: Spectrum::new(p.grid, rho)?,
        fbar,
        clamped,
    })
}

pub fn recompose(d: &DecomposedRerad) -> SpectralReradMatrix {
    let grid = *d.rho.grid();
    let rho = d.rho.values();
    let n = grid.len();
    let entries = DMatrix::from_fn(n, n, |o, i| match o.cmp(&i) {
        std::cmp::Ordering::Equal => rho[i],
        std::cmp::Ordering::Greater => d.fbar[(o, i)] * (1.0 - rho[i]),
        std::cmp::Ordering::Less => 0.0,
    });
    SpectralReradMatrix { grid, entries }
}

/// K×K reradiation matrix acting on colors: `c_o = P·c_i`.
///
/// Rows index outgoing channels, columns incoming channels. Entries may be
/// negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReducedWire", into = "ReducedWire")]
pub struct ReducedRerad {
    entries: DMatrix<f64>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ReducedWire {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ReducedWire> for ReducedRerad {
    type Error = Error;

    fn try_from(w: ReducedWire) -> Result<Self> {
        let k = w.rows.len();
        if let Some(r) = w.rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: r.len(),
            });
        }
        ReducedRerad::new(DMatrix::from_fn(k, k, |i, j| w.rows[i][j]), w.labels)
    }
}

impl From<ReducedRerad> for ReducedWire {
    fn from(r: ReducedRerad) -> Self {
        ReducedWire {
            rows: r.entries.row_iter().map(|row| row.iter().copied().collect()).collect(),
            labels: r.labels,
        }
    }
}

impl ReducedRerad {
    pub fn new(entries: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let k = entries.nrows();
        if entries.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: entries.ncols(),
            });
        }
        if labels.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: labels.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonPhysical("non-finite reduced entry".into()));
        }
        Ok(ReducedRerad { entries, labels })
    }

    pub(crate) fn from_parts(entries: DMatrix<f64>, labels: Vec<String>) -> Self {
        debug_assert_eq!(entries.nrows(), labels.len());
        ReducedRerad { entries, labels }
    }

    pub fn zeros(labels: Vec<String>) -> Self {
        let k = labels.len();
        ReducedRerad {
            entries: DMatrix::zeros(k, k),
            labels,
        }
    }

    pub fn identity(labels: Vec<String>) -> Self {
        let k = labels.len();
        ReducedRerad {
            entries: DMatrix::identity(k, k),
            labels,
        }
    }

    pub fn channels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    /// `c_o = P·c_i`.
    pub fn apply(&self, color: &[f64]) -> Result<Vec<f64>> {
        let k = self.channels();
        if color.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: color.len(),
            });
        }
        Ok((0..k)
            .map(|r| (0..k).map(|c| self.entries[(r, c)] * color[c]).sum())
            .collect())
    }

    /// Max-abs entry difference.
    pub fn max_abs_diff(&self, other: &ReducedRerad) -> f64 {
        (&self.entries - &other.entries).amax()
    }

    pub fn scaled(&self, factor: f64) -> ReducedRerad {
        ReducedRerad::from_parts(&self.entries * factor, self.labels.clone())
    }

    pub fn add(&self, other: &ReducedRerad) -> Result<ReducedRerad> {
        self.check_same_k(other)?;
        Ok(ReducedRerad::from_parts(&self.entries + &other.entries, self.labels.clone()))
    }

    fn check_same_k(&self, other: &ReducedRerad) -> Result<()> {
        if self.channels() != other.channels() {
            return Err(Error::DimensionMismatch {
                expected: self.channels(),
                found: other.channels(),
            });
        }
        Ok(())
    }
}

/// Reduced reflectance and normalized fluorescence, kept apart so either can
/// be edited without re-reducing the other.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedRerad {
    pub reflectance: ReducedRerad,
    pub fluorescence: ReducedRerad,
    /// `R + F̄·(I − R)`.
    pub total: ReducedRerad,
}

/// Outgoing color split into its reflected and fluorescent parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitColor {
    pub reflected: Vec<f64>,
    pub fluorescent: Vec<f64>,
}

impl SplitColor {
    pub fn total(&self) -> Vec<f64> {
        self.reflected.iter().zip(&self.fluorescent).map(|(a, b)| a + b).collect()
    }
}

impl ComposedRerad {
    /// `c_{o,r} = R·c_i` and `c_{o,f} = F̄·(I − R)·c_i`.
    pub fn apply_split(&self, color: &[f64]) -> Result<SplitColor> {
        let reflected = self.reflectance.apply(color)?;
        let remaining: Vec<f64> = color.iter().zip(&reflected).map(|(c, r)| c - r).collect();
        let fluorescent = self.fluorescence.apply(&remaining)?;
        Ok(SplitColor { reflected, fluorescent })
    }
}

/// JSON export of a reduced material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedExport {
    pub version: String,
    pub basis: String,
    pub basis_hash: String,
    pub reflectance: ReducedRerad,
    pub fluorescence: ReducedRerad,
    pub total: ReducedRerad,
}

impl ReducedExport {
    pub fn new(basis_name: &str, basis: &SensitivityBasis, p: &ComposedRerad) -> Self {
        ReducedExport {
            version: crate::VERSION.to_string(),
            basis: basis_name.to_ascii_lowercase(),
            basis_hash: basis.fingerprint(),
            reflectance: p.reflectance.clone(),
            fluorescence: p.fluorescence.clone(),
            total: p.total.clone(),
        }
    }
}

/// `P = R + F̄·(I − R)`.
pub fn compose_reduced(reflectance: &ReducedRerad, fbar: &ReducedRerad) -> Result<ComposedRerad> {
    reflectance.check_same_k(fbar)?;
    let k = reflectance.channels();
    let remaining = DMatrix::<f64>::identity(k, k) - &reflectance.entries;
    let total = &reflectance.entries + &fbar.entries * remaining;
    Ok(ComposedRerad {
        reflectance: reflectance.clone(),
        fluorescence: fbar.clone(),
        total: ReducedRerad::from_parts(total, reflectance.labels.clone()),
    })
}

/// `Sᵀ·M·S̃` for a spectral matrix, with the diagonal integrated once and
/// off-diagonal densities integrated over both wavelengths.
pub fn reduce_matrix(m: &SpectralReradMatrix, basis: &SensitivityBasis) -> Result<ReducedRerad> {
    reduce_entries(&m.grid, &m.entries, basis)
}

/// [`reduce_matrix`] on raw N×N entries (e.g. a normalized fluorescence).
pub fn reduce_entries(grid: &WavelengthGrid, entries: &DMatrix<f64>, basis: &SensitivityBasis) -> Result<ReducedRerad> {
    check_grid(basis.grid(), grid)?;
    let n = grid.len();
    if entries.nrows() != n || entries.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: entries.nrows(),
        });
    }
    let w = basis.weights();
    let s = basis.sensitivities();
    let dual = basis.duals();
    let k = basis.channels();

    // Y = (measure-weighted M) · S̃, N×K.
    let mut y = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        for o in 0..n {
            let v = entries[(o, i)];
            if v == 0.0 {
                continue;
            }
            let scale = if o == i { v * w[o] } else { v * w[o] * w[i] };
            for c in 0..k {
                y[(o, c)] += scale * dual[(i, c)];
            }
        }
    }
    let reduced = s.transpose() * y;
    Ok(ReducedRerad::from_parts(reduced, basis.labels().to_vec()))
}

/// `c_o = ∬ P(λi, λo) L(λi) s(λo) dλi dλo`, the diagonal integrated once.
pub fn outgoing_color_spectral(p: &SpectralReradMatrix, illuminant: &Spectrum, observer: &Observer) -> Result<Vec<f64>> {
    check_grid(&p.grid, illuminant.grid())?;
    check_grid(&p.grid, observer.grid())?;
    let n = p.grid.len();
    let w = &observer.weights;
    let l = illuminant.values();
    // Outgoing spectral radiance per λo.
    let radiance: Vec<f64> = (0..n)
        .map(|o| {
            let off: f64 = (0..o).map(|i| p.entries[(o, i)] * l[i] * w[i]).sum();
            p.entries[(o, o)] * l[o] + off
        })
        .collect();
    Ok((0..observer.channels())
        .map(|c| {
            observer
                .curves
                .column(c)
                .iter()
                .zip(&radiance)
                .zip(w)
                .map(|((s, r), w)| s * r * w)
                .sum()
        })
        .collect())
}

impl Spectrum {
    pub(crate) fn from_fn_indexed(grid: WavelengthGrid, f: impl Fn(usize) -> f64) -> Spectrum {
        Spectrum::new(grid, (0..grid.len()).map(f).collect()).expect("finite by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Gaussian1D;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> WavelengthGrid {
        WavelengthGrid::new(300.0, 800.0, 10.0).unwrap()
    }

    fn random_decomposed(grid: WavelengthGrid, seed: u64) -> DecomposedRerad {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let rho: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.95)).collect();
        let fbar = DMatrix::from_fn(n, n, |o, i| if o > i { rng.random_range(0.0..0.002) } else { 0.0 });
        DecomposedRerad {
            rho: Spectrum::new(grid, rho).unwrap(),
            fbar,
            clamped: vec![],
        }
    }

    #[test]
    fn diagonal_matrix_has_no_fluorescence() {
        let grid = small_grid();
        let rho = Spectrum::from_fn(grid, |l| 0.2 + 0.5 * ((l - 300.0) / 500.0));
        let d = decompose(&SpectralReradMatrix::from_reflectance(&rho)).unwrap();
        assert!(d.fbar.iter().all(|&v| v == 0.0));
        assert_eq!(d.rho, rho);
    }

    #[test]
    fn single_entry_normalization() {
        let grid = small_grid();
        let n = grid.len();
        let i = grid.nearest_index(400.0);
        let o = grid.nearest_index(600.0);
        let mut e = DMatrix::zeros(n, n);
        e[(i, i)] = 0.5;
        e[(o, i)] = 0.3;
        let (p, _) = SpectralReradMatrix::new(grid, e).unwrap();
        let d = decompose(&p).unwrap();
        assert!((d.fbar[(o, i)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn decompose_recovers_synthesized_parts() {
        let d = random_decomposed(small_grid(), 7);
        let back = decompose(&recompose(&d)).unwrap();
        assert!((&back.fbar - &d.fbar).amax() <= 1e-12);
        for (a, b) in back.rho.values().iter().zip(d.rho.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn reflectance_above_one_is_rejected() {
        let grid = small_grid();
        let rho = Spectrum::constant(grid, 1.2);
        assert!(matches!(
            decompose(&SpectralReradMatrix::from_reflectance(&rho)),
            Err(Error::NonPhysical(_))
        ));
    }

    #[test]
    fn reflectance_near_one_is_clamped() {
        let grid = small_grid();
        let n = grid.len();
        let mut e = DMatrix::from_diagonal_element(n, n, 0.5);
        e[(3, 3)] = 1.0;
        e[(10, 3)] = 0.01;
        let (p, _) = SpectralReradMatrix::new(grid, e).unwrap();
        let d = decompose(&p).unwrap();
        assert_eq!(d.clamped, vec![3]);
        assert!((d.rho.values()[3] - (1.0 - RHO_EPSILON)).abs() < 1e-15);
        assert!((d.fbar[(10, 3)] - 0.01 / RHO_EPSILON).abs() < 1e-9);
    }

    #[test]
    fn recompose_special_cases() {
        let grid = small_grid();
        let n = grid.len();
        let rho = Spectrum::from_fn(grid, |l| (l - 300.0) / 1000.0);
        let d = DecomposedRerad {
            rho: rho.clone(),
            fbar: DMatrix::zeros(n, n),
            clamped: vec![],
        };
        let p = recompose(&d);
        assert_eq!(p.diagonal(), rho);
        assert!(!p.has_fluorescence());

        let mut d = random_decomposed(grid, 3);
        d.rho = Spectrum::constant(grid, 0.0);
        let p = recompose(&d);
        for o in 0..n {
            for i in 0..o {
                assert_eq!(p.entries()[(o, i)], d.fbar[(o, i)]);
            }
        }
    }

    #[test]
    fn loading_zeroes_upward_entries() {
        let grid = small_grid();
        let n = grid.len();
        let mut e = DMatrix::from_element(n, n, 0.001);
        e[(5, 5)] = -0.01;
        let (p, report) = SpectralReradMatrix::new(grid, e).unwrap();
        assert_eq!(report.zeroed_upward, n * (n - 1) / 2);
        assert_eq!(report.clamped_negative, 1);
        assert_eq!(p.entries()[(2, 7)], 0.0);
        assert_eq!(p.entries()[(5, 5)], 0.0);
    }

    #[test]
    fn white_reflector_reduces_to_identity() {
        let grid = WavelengthGrid::default();
        let basis = SensitivityBasis::xyzu(grid);
        let p = SpectralReradMatrix::from_reflectance(&Spectrum::constant(grid, 1.0));
        let r = reduce_matrix(&p, &basis).unwrap();
        assert!((r.entries() - DMatrix::<f64>::identity(4, 4)).amax() <= 1e-6);
        let z = reduce_matrix(&SpectralReradMatrix::zeros(grid), &basis).unwrap();
        assert_eq!(z.entries().amax(), 0.0);
    }

    #[test]
    fn reduce_rejects_grid_mismatch() {
        let basis = SensitivityBasis::xyz(WavelengthGrid::default());
        let p = SpectralReradMatrix::zeros(small_grid());
        assert!(matches!(reduce_matrix(&p, &basis), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn apply_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 4;
        let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let c: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let p = ReducedRerad::new(m.clone(), vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
        let out = p.apply(&c).unwrap();
        for r in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += m[(r, j)] * c[j];
            }
            assert!((out[r] - acc).abs() < 1e-15);
        }
        assert_eq!(p.apply(&[0.0; 4]).unwrap(), vec![0.0; 4]);
        let id = ReducedRerad::identity(p.labels().to_vec());
        assert_eq!(id.apply(&c).unwrap(), c);
        assert!(p.apply(&[1.0; 3]).is_err());
    }

    #[test]
    fn compose_special_cases() {
        let labels: Vec<String> = ["X", "Y", "Z"].iter().map(|s| s.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rand = |rng: &mut ChaCha8Rng| {
            ReducedRerad::new(DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5)), labels.clone()).unwrap()
        };
        let r = rand(&mut rng);
        let f = rand(&mut rng);
        let zero = ReducedRerad::zeros(labels.clone());
        let id = ReducedRerad::identity(labels.clone());
        assert_eq!(compose_reduced(&r, &zero).unwrap().total, r);
        assert_eq!(compose_reduced(&zero, &f).unwrap().total, f);
        assert!(compose_reduced(&id, &f).unwrap().total.max_abs_diff(&id) < 1e-15);

        let c = [0.4, 0.9, 1.3];
        let composed = compose_reduced(&r, &f).unwrap();
        let split = composed.apply_split(&c).unwrap();
        let direct = composed.total.apply(&c).unwrap();
        for (a, b) in split.total().iter().zip(direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reduced_json_is_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = ReducedRerad::new(m, vec!["a".into(), "b".into()]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["rows"][0][1], 2.0);
        let back: ReducedRerad = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn spectral_color_of_zero_matrix() {
        let grid = WavelengthGrid::default();
        let basis = SensitivityBasis::xyz(grid);
        let obs = Observer::from_basis(&basis, 3);
        let c = outgoing_color_spectral(&SpectralReradMatrix::zeros(grid), &Spectrum::constant(grid, 1.0), &obs).unwrap();
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn white_reflector_returns_light_color() {
        let grid = WavelengthGrid::default();
        let basis = SensitivityBasis::xyz(grid);
        let obs = Observer::from_basis(&basis, 3);
        let e = Spectrum::constant(grid, 1.0);
        let p = SpectralReradMatrix::from_reflectance(&e);
        let c = outgoing_color_spectral(&p, &e, &obs).unwrap();
        let direct = obs.integrate(&e).unwrap();
        for (a, b) in c.iter().zip(direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recomposed_energy_stays_bounded() {
        // Rows of F̄ integrating to at most one must keep P within one.
        let grid = WavelengthGrid::new(300.0, 800.0, 5.0).unwrap();
        let n = grid.len();
        let w = grid.weights(Quadrature::Trapezoid);
        let mut d = random_decomposed(grid, 19);
        for i in 0..n {
            let row: f64 = (i + 1..n).map(|o| d.fbar[(o, i)] * w[o]).sum();
            if row > 1.0 {
                for o in i + 1..n {
                    d.fbar[(o, i)] /= row;
                }
            }
        }
        let p = recompose(&d);
        assert!(p.energy_per_input(Quadrature::Trapezoid).iter().all(|&e| e <= 1.0 + 1e-3));
    }

    #[test]
    fn reduced_decomposition_residual_is_small_but_not_zero() {
        // F = F̄(I−R) holds exactly only for spectra in span(S); measure it.
        let grid = WavelengthGrid::default();
        let basis = SensitivityBasis::xyzu(grid);
        let n = grid.len();
        let rho = Spectrum::from_fn(grid, |l| 0.3 + 0.2 * Gaussian1D::new(1.0, 550.0, 60.0).eval(l));
        let lobe = crate::spectral::Gaussian2D {
            amplitude: 0.004,
            mean_a: 420.0,
            std_a: 30.0,
            mean_e: 560.0,
            std_e: 40.0,
        };
        let fbar = DMatrix::from_fn(n, n, |o, i| {
            if o > i {
                lobe.eval(grid.wavelength(i), grid.wavelength(o))
            } else {
                0.0
            }
        });
        let d = DecomposedRerad {
            rho: rho.clone(),
            fbar: fbar.clone(),
            clamped: vec![],
        };
        let p = recompose(&d);
        let full = reduce_matrix(&p, &basis).unwrap();
        let r = reduce_matrix(&SpectralReradMatrix::from_reflectance(&rho), &basis).unwrap();
        let fb = reduce_entries(&grid, &fbar, &basis).unwrap();
        let composed = compose_reduced(&r, &fb).unwrap().total;
        let residual = full.max_abs_diff(&composed);
        assert!(residual < 5e-2, "residual {residual}");
        assert!(residual > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn decompose_recompose_identity(seed in 0u64..1000) {
            let d = random_decomposed(small_grid(), seed);
            let p = recompose(&d);
            let back = recompose(&decompose(&p).unwrap());
            prop_assert!((back.entries() - p.entries()).amax() <= 1e-12);
        }

        #[test]
        fn reduction_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let grid = WavelengthGrid::new(300.0, 800.0, 5.0).unwrap();
            let basis = SensitivityBasis::xyzu(grid);
            let m1 = recompose(&random_decomposed(grid, seed));
            let m2 = recompose(&random_decomposed(grid, seed + 1));
            let combo = m1.entries() * a + m2.entries() * b;
            let lhs = reduce_entries(&grid, &combo, &basis).unwrap();
            let r1 = reduce_matrix(&m1, &basis).unwrap();
            let r2 = reduce_matrix(&m2, &basis).unwrap();
            let rhs = r1.scaled(a).add(&r2.scaled(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
        }
    }
}

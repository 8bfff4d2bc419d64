//! Colors, illuminants, transfer matrices, CIELAB / CIEDE2000 and display.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_spectrum_csv, parse_table};
use crate::reradiation::{Observer, ReducedRerad};
use crate::spectral::{
    check_grid, gaussian_cmf, weighted_gram, Gaussian1D, Quadrature, SensitivityBasis, Spectrum, WavelengthGrid,
};

/// Environment variable pointing at extra illuminant and CMF tables.
pub const DATA_DIR_ENV: &str = "FLUORO_DATA_DIR";

/// Last row of `T_U`, the XYZ to XYZU albedo lift.
pub const T_U_ROW: [f64; 3] = [-0.0145415, 0.0267372, 0.397627];

/// Names of the eight standard illuminants used for color statistics.
pub const STANDARD_ILLUMINANTS: [&str; 8] = ["E", "A", "D50", "D65", "D75", "FL2", "FL7", "FL11"];

/// Stand-in SPD for the ultraviolet lamp.
pub const UV_LAMP: Gaussian1D = Gaussian1D::new(1.0, 370.0, 20.0);

const BUILTIN_TABLES: [(&str, &str); 7] = [
    ("A", include_str!("../assets/illuminant_A.csv")),
    ("D50", include_str!("../assets/illuminant_D50.csv")),
    ("D65", include_str!("../assets/illuminant_D65.csv")),
    ("D75", include_str!("../assets/illuminant_D75.csv")),
    ("FL2", include_str!("../assets/illuminant_FL2.csv")),
    ("FL7", include_str!("../assets/illuminant_FL7.csv")),
    ("FL11", include_str!("../assets/illuminant_FL11.csv")),
];

const CIE2006_XYZ: &str = include_str!("../assets/cie2006_2deg_xyz.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Xyz,
    Xyzu,
    Lab,
    /// Channels of a custom sensitivity basis.
    Sensor,
}

impl ColorSpace {
    pub fn channels(self) -> Option<usize> {
        match self {
            ColorSpace::Xyz | ColorSpace::Lab => Some(3),
            ColorSpace::Xyzu => Some(4),
            ColorSpace::Sensor => None,
        }
    }

    pub fn for_basis(basis: &SensitivityBasis) -> Self {
        match basis.labels().iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["X", "Y", "Z"] => ColorSpace::Xyz,
            ["X", "Y", "Z", "U"] => ColorSpace::Xyzu,
            _ => ColorSpace::Sensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Color {
    space: ColorSpace,
    values: Vec<f64>,
}

impl Color {
    pub fn new(space: ColorSpace, values: Vec<f64>) -> Result<Self> {
        if let Some(k) = space.channels() {
            if values.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: values.len(),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("color", "non-finite channel"));
        }
        Ok(Color { space, values })
    }

    pub fn xyz(v: [f64; 3]) -> Self {
        Color {
            space: ColorSpace::Xyz,
            values: v.to_vec(),
        }
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// XYZ part (`T·c`); fails for Lab or colors with fewer than three channels.
    pub fn to_xyz(&self) -> Result<[f64; 3]> {
        if self.space == ColorSpace::Lab {
            return Err(Error::param("color", "Lab colors have no XYZ part"));
        }
        project_xyz(&self.values)
    }
}

/// `T = [I₃ | 0]`: drops every channel past Z.
pub fn project_xyz(c: &[f64]) -> Result<[f64; 3]> {
    match c {
        [x, y, z, ..] => Ok([*x, *y, *z]),
        _ => Err(Error::DimensionMismatch {
            expected: 3,
            found: c.len(),
        }),
    }
}

/// `ρ_XYZU = T_U·ρ_XYZ`.
pub fn lift_albedo_u(rho: [f64; 3]) -> [f64; 4] {
    let u = T_U_ROW[0] * rho[0] + T_U_ROW[1] * rho[1] + T_U_ROW[2] * rho[2];
    [rho[0], rho[1], rho[2], u]
}

/// `T_U = S_XYZUᵀ S̃_XYZ`, 4×3.
pub fn compute_t_u(xyzu: &SensitivityBasis, xyz: &SensitivityBasis) -> Result<DMatrix<f64>> {
    check_grid(xyzu.grid(), xyz.grid())?;
    Ok(weighted_gram(xyzu.sensitivities(), xyz.duals(), xyzu.weights()))
}

/// The fixed matrices relating Gaussian atoms, XYZU and XYZ.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrices {
    /// 5×4 atom to channel pattern.
    pub t_g: DMatrix<f64>,
    /// 3×4 XYZU to XYZ.
    pub t: DMatrix<f64>,
    /// 4×3 XYZ to XYZU albedo lift.
    pub t_u: DMatrix<f64>,
}

impl TransferMatrices {
    pub fn standard() -> Self {
        let t_g = DMatrix::from_fn(5, 4, |i, j| gaussian_cmf::XYZU_TRANSFER[i][j]);
        let t = DMatrix::from_fn(3, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let t_u = DMatrix::from_fn(4, 3, |i, j| if i < 3 { f64::from(u8::from(i == j)) } else { T_U_ROW[j] });
        TransferMatrices { t_g, t, t_u }
    }
}

/// A light source with relative spectral power.
#[derive(Debug, Clone, PartialEq)]
pub struct Illuminant {
    name: String,
    spectrum: Spectrum,
}

impl Illuminant {
    pub fn new(name: impl Into<String>, spectrum: Spectrum) -> Result<Self> {
        let name = name.into();
        if spectrum.values().iter().any(|v| *v < 0.0) {
            return Err(Error::param(&name, "illuminant power must be non-negative"));
        }
        Ok(Illuminant { name, spectrum })
    }

    /// Built-in illuminant by name (case-insensitive).
    pub fn builtin(name: &str, grid: WavelengthGrid) -> Result<Self> {
        let upper = name.to_ascii_uppercase();
        let spectrum = match upper.as_str() {
            "E" => Spectrum::constant(grid, 1.0),
            "UV" => UV_LAMP.discretize(&grid),
            _ => {
                let (_, text) = BUILTIN_TABLES
                    .iter()
                    .find(|(n, _)| *n == upper)
                    .ok_or_else(|| Error::Unknown {
                        kind: "illuminant",
                        name: name.to_string(),
                    })?;
                Spectrum::resample(grid, &parse_spectrum_csv(text)?)?
            }
        };
        Illuminant::new(upper, spectrum)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Incoming color `c_i = SᵀL`.
    pub fn color(&self, basis: &SensitivityBasis) -> Result<Vec<f64>> {
        Ok(illuminant_to_color(&self.spectrum, basis)?.values)
    }

    /// Scale that maps the illuminant to unit display brightness: `1/Y` of
    /// its color, or `1/U` for lamps whose Y is under a tenth of their U.
    pub fn display_scale(&self, basis: &SensitivityBasis) -> Result<f64> {
        let c = self.color(basis)?;
        let y = c.get(1).copied().unwrap_or(0.0);
        let u = c.get(3).copied().unwrap_or(0.0);
        let m = if y < 0.1 * u { u } else { y };
        Ok(if m > 0.0 { 1.0 / m } else { 1.0 })
    }
}

/// `c_i = SᵀL` with the basis quadrature.
pub fn illuminant_to_color(l: &Spectrum, basis: &SensitivityBasis) -> Result<Color> {
    let c = basis.project(l)?;
    Ok(Color {
        space: ColorSpace::for_basis(basis),
        values: c.iter().copied().collect(),
    })
}

/// Named illuminants on a common grid.
#[derive(Debug, Clone)]
pub struct IlluminantRegistry {
    grid: WavelengthGrid,
    items: Vec<Illuminant>,
}

impl IlluminantRegistry {
    /// The shipped set: E, A, D50, D65, D75, FL2, FL7, FL11 and UV.
    pub fn builtin(grid: WavelengthGrid) -> Self {
        let items = STANDARD_ILLUMINANTS
            .iter()
            .chain(&["UV"])
            .map(|n| Illuminant::builtin(n, grid).expect("shipped illuminant tables parse"))
            .collect();
        IlluminantRegistry { grid, items }
    }

    /// Built-ins plus every `illuminants/*.csv` under `data_dir`. A file whose
    /// stem matches a built-in replaces it.
    pub fn load(grid: WavelengthGrid, data_dir: Option<&Path>) -> Result<Self> {
        let mut reg = Self::builtin(grid);
        let Some(dir) = data_dir else {
            return Ok(reg);
        };
        let ill_dir = dir.join("illuminants");
        if !ill_dir.is_dir() {
            return Ok(reg);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&ill_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
            .collect();
        paths.sort();
        for p in paths {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let spectrum = Spectrum::resample(grid, &parse_spectrum_csv(&fs::read_to_string(&p)?)?)?;
            reg.insert(Illuminant::new(name, spectrum)?);
        }
        Ok(reg)
    }

    /// [`IlluminantRegistry::load`] with the directory from `FLUORO_DATA_DIR`.
    pub fn from_env(grid: WavelengthGrid) -> Result<Self> {
        let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        Self::load(grid, dir.as_deref())
    }

    pub fn insert(&mut self, ill: Illuminant) {
        match self.items.iter_mut().find(|i| i.name.eq_ignore_ascii_case(&ill.name)) {
            Some(slot) => *slot = ill,
            None => self.items.push(ill),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Illuminant> {
        self.items
            .iter()
            .find(|i| i.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Unknown {
                kind: "illuminant",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Illuminant> {
        self.items.iter()
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }
}

/// Precomputed `R_k = k_w·Sᵀ diag(S̃_k) S̃` so that `R_ρ = Σ_k ρ_k R_k`, with
/// `k_w` the basis white (albedo colors are relative, white has Y = 1).
#[derive(Debug, Clone)]
pub struct AlbedoReducer {
    parts: Vec<DMatrix<f64>>,
    labels: Vec<String>,
}

impl AlbedoReducer {
    pub fn new(basis: &SensitivityBasis) -> Self {
        let s = basis.sensitivities();
        let dual = basis.duals();
        let w = basis.weights();
        let white = basis.white_y();
        let parts = (0..basis.channels())
            .map(|k| {
                let scaled = DMatrix::from_fn(dual.nrows(), dual.ncols(), |n, j| dual[(n, j)] * dual[(n, k)] * w[n]);
                s.transpose() * scaled * white
            })
            .collect();
        AlbedoReducer {
            parts,
            labels: basis.labels().to_vec(),
        }
    }

    /// Reduced reflectance for an albedo color. A 3-channel albedo used with
    /// a 4-channel basis is lifted by `T_U` first.
    pub fn reduce(&self, rho: &[f64]) -> Result<ReducedRerad> {
        let k = self.parts.len();
        let lifted;
        let rho = if rho.len() == 3 && k == 4 {
            lifted = lift_albedo_u([rho[0], rho[1], rho[2]]);
            &lifted[..]
        } else {
            rho
        };
        if rho.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: rho.len(),
            });
        }
        let mut acc = DMatrix::zeros(k, k);
        for (r, part) in rho.iter().zip(&self.parts) {
            acc += part * *r;
        }
        ReducedRerad::new(acc, self.labels.clone())
    }

    pub fn part(&self, k: usize) -> &DMatrix<f64> {
        &self.parts[k]
    }
}

pub fn albedo_to_reduced_r(rho: &[f64], basis: &SensitivityBasis) -> Result<ReducedRerad> {
    AlbedoReducer::new(basis).reduce(rho)
}

/// Tabulated CIE 2006 2° observer as `(λ, [x̄, ȳ, z̄])` rows.
pub fn cie2006_table(data_dir: Option<&Path>) -> Result<Vec<(f64, [f64; 3])>> {
    let text = match data_dir.map(|d| d.join("cmf").join("cie2006_2deg_xyz.csv")) {
        Some(p) if p.is_file() => fs::read_to_string(p)?,
        _ => CIE2006_XYZ.to_string(),
    };
    let table = parse_table(&text)?;
    if table.rows[0].len() != 4 {
        return Err(Error::parse(1, "CMF table needs 4 columns"));
    }
    Ok(table.rows.iter().map(|r| (r[0], [r[1], r[2], r[3]])).collect())
}

/// One CMF channel (0 = x̄, 1 = ȳ, 2 = z̄) resampled onto `grid`.
pub fn cie2006_curve(channel: usize, grid: WavelengthGrid, data_dir: Option<&Path>) -> Result<Spectrum> {
    if channel > 2 {
        return Err(Error::param("channel", "must be 0, 1 or 2"));
    }
    let rows: Vec<(f64, f64)> = cie2006_table(data_dir)?.iter().map(|(l, c)| (*l, c[channel])).collect();
    Spectrum::resample(grid, &rows)
}

/// Tabulated CIE 2006 observer integrating spectra to XYZ.
pub fn cie2006_observer(grid: WavelengthGrid, quadrature: Quadrature, data_dir: Option<&Path>) -> Result<Observer> {
    let n = grid.len();
    let mut curves = DMatrix::zeros(n, 3);
    for c in 0..3 {
        let s = cie2006_curve(c, grid, data_dir)?;
        curves.set_column(c, &nalgebra::DVector::from_column_slice(s.values()));
    }
    Observer::new(grid, curves, quadrature)
}

/// CIE 1976 L*a*b* relative to `white`.
pub fn xyz_to_lab(xyz: [f64; 3], white: [f64; 3]) -> Result<[f64; 3]> {
    if white.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::param("white", format!("white point must be positive, got {white:?}")));
    }
    let f = |t: f64| {
        const D: f64 = 6.0 / 29.0;
        if t > D * D * D {
            t.cbrt()
        } else {
            t / (3.0 * D * D) + 4.0 / 29.0
        }
    };
    let fx = f(xyz[0] / white[0]);
    let fy = f(xyz[1] / white[1]);
    let fz = f(xyz[2] / white[2]);
    Ok([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)])
}

/// CIEDE2000 color difference with `kL = kC = kH = 1`.
pub fn delta_e2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let pow7 = |x: f64| x.powi(7);
    let c1 = a1.hypot(b1);
    let c2 = a2.hypot(b2);
    let c_bar = 0.5 * (c1 + c2);
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt());
    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = a1p.hypot(b1);
    let c2p = a2p.hypot(b2);
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            let h = b.atan2(a).to_degrees();
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hue(b1, a1p);
    let h2p = hue(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh_angle = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * (c1p * c2p).sqrt() * (dh_angle.to_radians() / 2.0).sin();

    let l_bar = 0.5 * (l1 + l2);
    let c_bar_p = 0.5 * (c1p + c2p);
    let h_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        0.5 * (h1p + h2p)
    } else if h1p + h2p < 360.0 {
        0.5 * (h1p + h2p + 360.0)
    } else {
        0.5 * (h1p + h2p - 360.0)
    };
    let t = 1.0 - 0.17 * (h_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_bar).to_radians().cos()
        + 0.32 * (3.0 * h_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let r_c = 2.0 * (pow7(c_bar_p) / (pow7(c_bar_p) + pow7(25.0))).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * c_bar_p;
    let s_h = 1.0 + 0.015 * c_bar_p * t;
    let r_t = -(2.0 * d_theta * PI / 180.0).sin() * r_c;

    let (tl, tc, th) = (dl / s_l, dc / s_c, dh / s_h);
    (tl * tl + tc * tc + th * th + r_t * tc * th).sqrt()
}

/// ΔE2000 between two XYZ colors seen under the same white.
pub fn delta_e2000_xyz(a: [f64; 3], b: [f64; 3], white: [f64; 3]) -> Result<f64> {
    Ok(delta_e2000(xyz_to_lab(a, white)?, xyz_to_lab(b, white)?))
}

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

/// Tolerance on linear RGB before a pixel counts as clipped.
const CLIP_TOLERANCE: f64 = 1e-4;

/// 8-bit display pixel and whether gamut clipping was needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisplayPixel {
    pub rgb: [u8; 3],
    pub clipped: bool,
}

/// Linear sRGB (D65) of an exposure-scaled XYZ color, unclipped.
pub fn xyz_to_linear_srgb(xyz: [f64; 3], exposure: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(&XYZ_TO_SRGB) {
        *o = exposure * (row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    }
    out
}

/// sRGB transfer function on `[0, 1]`.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn xyz_to_srgb_display(xyz: [f64; 3], exposure: f64) -> DisplayPixel {
    let lin = xyz_to_linear_srgb(xyz, exposure);
    let clipped = lin.iter().any(|v| !(-CLIP_TOLERANCE..=1.0 + CLIP_TOLERANCE).contains(v));
    let rgb = lin.map(|v| (srgb_encode(v.clamp(0.0, 1.0)) * 255.0).round() as u8);
    DisplayPixel { rgb, clipped }
}

/// CIE xy chromaticity; `None` for black.
pub fn chromaticity(xyz: [f64; 3]) -> Option<[f64; 2]> {
    let s = xyz[0] + xyz[1] + xyz[2];
    (s > 0.0).then(|| [xyz[0] / s, xyz[1] / s])
}

/// Convex hull (counterclockwise) of the chromaticities of monochromatic
/// stimuli seen through the first three channels of `basis`, over grid
/// samples in `[lambda_min, lambda_max]`. The Gaussian observer's locus
/// curls inward at the blue end, so the hull is used as the gamut boundary.
pub fn spectral_locus(basis: &SensitivityBasis, lambda_min: f64, lambda_max: f64) -> Result<Vec<[f64; 2]>> {
    if basis.channels() < 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: basis.channels(),
        });
    }
    let s = basis.sensitivities();
    let grid = basis.grid();
    let locus: Vec<[f64; 2]> = (0..grid.len())
        .filter(|&n| (lambda_min..=lambda_max).contains(&grid.wavelength(n)))
        .filter_map(|n| chromaticity([s[(n, 0)], s[(n, 1)], s[(n, 2)]]))
        .collect();
    let hull = convex_hull(locus);
    if hull.len() < 3 {
        return Err(Error::Empty("spectral locus".into()));
    }
    Ok(hull)
}

/// Andrew's monotone chain.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Excitation purity `|c − w| / |b − w|`, with `b` where the ray from the
/// white point `w` through `c` leaves the locus polygon (closed by the purple
/// line). `None` when `c` equals the white point or the ray misses.
pub fn excitation_purity(xy: [f64; 2], white: [f64; 2], locus: &[[f64; 2]]) -> Option<f64> {
    let d = [xy[0] - white[0], xy[1] - white[1]];
    if d[0] == 0.0 && d[1] == 0.0 {
        return None;
    }
    let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
    let mut hit = f64::INFINITY;
    for (i, &a) in locus.iter().enumerate() {
        let b = locus[(i + 1) % locus.len()];
        let e = [b[0] - a[0], b[1] - a[1]];
        let denom = cross(d, e);
        if denom.abs() < 1e-300 {
            continue;
        }
        let aw = [a[0] - white[0], a[1] - white[1]];
        let t = cross(aw, e) / denom;
        let u = cross(aw, d) / denom;
        if t > 0.0 && (0.0..=1.0).contains(&u) {
            hit = hit.min(t);
        }
    }
    hit.is_finite().then(|| 1.0 / hit)
}

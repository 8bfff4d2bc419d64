//! Fluorescence palettes over emission parameters `(μe, σe)`, pick-back to
//! parameters, and HSV → parameter mapping for textured fluorescence.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{alpha_max_conservative, reduce_diagonal_analytic, FluorescenceLobe, FluorescentMaterial};
use crate::colorimetry::{project_xyz, xyz_to_srgb_display, AlbedoReducer, DisplayPixel, Illuminant};
use crate::fitting::MaterialModel;
use crate::reradiation::{compose_reduced, ComposedRerad, ReducedRerad};
use crate::{Error, Quadrature, Result, SensitivityBasis};

/// Image pixels per palette cell edge used by the CLI and the service.
pub const DEFAULT_CELL_PX: u32 = 4;

/// Admissible emission mean range for palette axes.
pub const MU_E_BOUNDS: [f64; 2] = [300.0, 800.0];
/// Admissible emission spread range for palette axes.
pub const SIGMA_E_BOUNDS: [f64; 2] = [1.0, 200.0];

/// Which part of the outgoing color is displayed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// `c_o = c_{o,r} + c_{o,f}`.
    #[default]
    Full,
    /// `c_{o,f} = F̄·(I − R)·c_i` only.
    Fluorescent,
    /// `c_{o,r} = R·c_i` only.
    Reflected,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Full => "full",
            Component::Fluorescent => "fluorescent",
            Component::Reflected => "reflected",
        })
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Component::Full),
            "fluorescent" => Ok(Component::Fluorescent),
            "reflected" => Ok(Component::Reflected),
            _ => Err(Error::Unknown {
                kind: "component",
                name: s.to_string(),
            }),
        }
    }
}

/// Reduces materials against one basis, sharing the precomputed albedo parts.
#[derive(Debug, Clone)]
pub struct MaterialReducer {
    basis: SensitivityBasis,
    albedo: AlbedoReducer,
}

impl MaterialReducer {
    pub fn new(basis: SensitivityBasis) -> Self {
        let albedo = AlbedoReducer::new(&basis);
        MaterialReducer { basis, albedo }
    }

    pub fn basis(&self) -> &SensitivityBasis {
        &self.basis
    }

    /// `R` from the diagonal model when present, else from the albedo color.
    pub fn reflectance(&self, m: &FluorescentMaterial) -> Result<ReducedRerad> {
        match &m.diagonal {
            Some(d) => Ok(reduce_diagonal_analytic(d, &self.basis)),
            None => self.albedo.reduce(&m.albedo_xyz),
        }
    }

    pub fn reduce(&self, m: &FluorescentMaterial) -> Result<ComposedRerad> {
        compose_reduced(&self.reflectance(m)?, &m.reduce_fluorescence(&self.basis))
    }
}

/// XYZ of the selected component of `P·c_i`.
pub fn outgoing_xyz(p: &ComposedRerad, incoming: &[f64], component: Component) -> Result<[f64; 3]> {
    let c = match component {
        Component::Full => p.total.apply(incoming)?,
        Component::Fluorescent => p.apply_split(incoming)?.fluorescent,
        Component::Reflected => p.reflectance.apply(incoming)?,
    };
    project_xyz(&c)
}

/// Evenly spaced axis; a single step sits at `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Axis { min, max, steps }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.steps <= 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
        }
    }

    fn validate(&self, field: &str, bounds: [f64; 2]) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Empty(format!("{field} axis has no steps")));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::param(field, format!("empty range [{}, {}]", self.min, self.max)));
        }
        if self.min < bounds[0] || self.max > bounds[1] {
            return Err(Error::param(
                field,
                format!("[{}, {}] outside [{}, {}]", self.min, self.max, bounds[0], bounds[1]),
            ));
        }
        Ok(())
    }
}

/// Horizontal `μe` axis and vertical `σe` axis (top row is `σe.min`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaletteAxes {
    pub mu_e: Axis,
    pub sigma_e: Axis,
}

impl Default for PaletteAxes {
    fn default() -> Self {
        PaletteAxes {
            mu_e: Axis::new(380.0, 720.0, 64),
            sigma_e: Axis::new(5.0, 120.0, 64),
        }
    }
}

impl PaletteAxes {
    /// Default ranges at `res × res` cells.
    pub fn with_resolution(res: usize) -> Self {
        let d = PaletteAxes::default();
        PaletteAxes {
            mu_e: Axis { steps: res, ..d.mu_e },
            sigma_e: Axis { steps: res, ..d.sigma_e },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mu_e.validate("mu_e_nm", MU_E_BOUNDS)?;
        self.sigma_e.validate("sigma_e_nm", SIGMA_E_BOUNDS)
    }
}

/// Everything a palette cell depends on besides `(μe, σe)`.
#[derive(Debug, Clone)]
pub struct PaletteContext {
    reducer: MaterialReducer,
    illuminant: Illuminant,
    incoming: Vec<f64>,
    albedo: [f64; 3],
    mu_a: f64,
    sigma_a: f64,
    alpha_bar: f64,
    component: Component,
    exposure: f64,
}

/// Serializable summary of a [`PaletteContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteInfo {
    pub illuminant: String,
    pub basis: Vec<String>,
    pub albedo_xyz: [f64; 3],
    pub mu_a_nm: f64,
    pub sigma_a_nm: f64,
    pub alpha_bar: f64,
    pub component: Component,
    /// Display multiplier applied to XYZ before sRGB encoding.
    pub exposure: f64,
}

impl PaletteContext {
    /// Context with `ᾱ = 1`, the full component and an exposure that maps
    /// the illuminant to unit brightness.
    pub fn new(basis: SensitivityBasis, illuminant: Illuminant, albedo: [f64; 3], mu_a: f64, sigma_a: f64) -> Result<Self> {
        let incoming = illuminant.color(&basis)?;
        let exposure = illuminant.display_scale(&basis)?;
        let ctx = PaletteContext {
            reducer: MaterialReducer::new(basis),
            illuminant,
            incoming,
            albedo,
            mu_a,
            sigma_a,
            alpha_bar: 1.0,
            component: Component::Full,
            exposure,
        };
        ctx.material(500.0, 50.0)?;
        Ok(ctx)
    }

    pub fn with_alpha_bar(mut self, alpha_bar: f64) -> Result<Self> {
        self.alpha_bar = alpha_bar;
        self.material(500.0, 50.0)?;
        Ok(self)
    }

    pub fn with_component(mut self, component: Component) -> Self {
        self.component = component;
        self
    }

    /// Multiplies the automatic exposure.
    pub fn with_exposure(mut self, factor: f64) -> Self {
        self.exposure *= factor;
        self
    }

    pub fn basis(&self) -> &SensitivityBasis {
        self.reducer.basis()
    }

    pub fn illuminant(&self) -> &Illuminant {
        &self.illuminant
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn info(&self) -> PaletteInfo {
        PaletteInfo {
            illuminant: self.illuminant.name().to_string(),
            basis: self.basis().labels().to_vec(),
            albedo_xyz: self.albedo,
            mu_a_nm: self.mu_a,
            sigma_a_nm: self.sigma_a,
            alpha_bar: self.alpha_bar,
            component: self.component,
            exposure: self.exposure,
        }
    }

    pub fn lobe(&self, mu_e: f64, sigma_e: f64) -> FluorescenceLobe {
        FluorescenceLobe {
            alpha_bar: self.alpha_bar,
            mu_a: self.mu_a,
            sigma_a: self.sigma_a,
            mu_e,
            sigma_e,
        }
    }

    /// Single-Gaussian material behind a cell.
    pub fn material(&self, mu_e: f64, sigma_e: f64) -> Result<FluorescentMaterial> {
        FluorescentMaterial::new(self.albedo, vec![self.lobe(mu_e, sigma_e)])
    }

    /// Displayed XYZ (before exposure) of any material under this context.
    pub fn material_xyz(&self, m: &FluorescentMaterial) -> Result<[f64; 3]> {
        outgoing_xyz(&self.reducer.reduce(m)?, &self.incoming, self.component)
    }

    /// Display pixel of a uniformly lit swatch of `m`.
    pub fn swatch(&self, m: &FluorescentMaterial) -> Result<DisplayPixel> {
        Ok(xyz_to_srgb_display(self.material_xyz(m)?, self.exposure))
    }
}

/// Parameters and colors of one palette cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaletteCell {
    pub row: usize,
    pub col: usize,
    pub mu_e_nm: f64,
    pub sigma_e_nm: f64,
    pub alpha_bar: f64,
    /// Resolved intensity `ᾱ·α̂_max(μe, σe)`.
    pub alpha: f64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub clipped: bool,
}

/// Cell parameters returned by [`Palette::pick`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub mu_e_nm: f64,
    pub sigma_e_nm: f64,
    pub alpha: f64,
}

/// An immutable grid of achievable colors over `(μe, σe)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub axes: PaletteAxes,
    pub context: PaletteInfo,
    /// Row-major, `rows × cols`.
    pub cells: Vec<PaletteCell>,
}

/// JSON sidecar written next to a palette image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteSidecar {
    /// Image pixels per cell edge; cell `(row, col)` covers pixels
    /// `[col·k, (col+1)·k) × [row·k, (row+1)·k)`.
    pub cell_px: u32,
    pub rows: usize,
    pub cols: usize,
    #[serde(flatten)]
    pub palette: Palette,
}

impl Palette {
    /// Evaluates every cell; cells run in parallel but results are collected
    /// in row-major order, so output is deterministic.
    pub fn generate(ctx: &PaletteContext, axes: PaletteAxes) -> Result<Self> {
        axes.validate()?;
        let (rows, cols) = (axes.sigma_e.steps, axes.mu_e.steps);
        let cells = (0..rows * cols)
            .into_par_iter()
            .map(|idx| {
                let (row, col) = (idx / cols, idx % cols);
                let (mu_e, sigma_e) = (axes.mu_e.value(col), axes.sigma_e.value(row));
                let m = ctx.material(mu_e, sigma_e)?;
                let xyz = ctx.material_xyz(&m)?;
                let px = xyz_to_srgb_display(xyz, ctx.exposure);
                Ok(PaletteCell {
                    row,
                    col,
                    mu_e_nm: mu_e,
                    sigma_e_nm: sigma_e,
                    alpha_bar: ctx.alpha_bar,
                    alpha: ctx.alpha_bar * alpha_max_conservative(mu_e, sigma_e),
                    xyz,
                    rgb: px.rgb,
                    clipped: px.clipped,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Palette {
            axes,
            context: ctx.info(),
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.axes.sigma_e.steps
    }

    pub fn cols(&self) -> usize {
        self.axes.mu_e.steps
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<&PaletteCell> {
        if row >= self.rows() || col >= self.cols() {
            return Err(Error::OutOfBounds {
                row,
                col,
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        Ok(&self.cells[row * self.cols() + col])
    }

    pub fn pick(&self, row: usize, col: usize) -> Result<Pick> {
        let c = self.cell(row, col)?;
        Ok(Pick {
            mu_e_nm: c.mu_e_nm,
            sigma_e_nm: c.sigma_e_nm,
            alpha: c.alpha,
        })
    }

    /// Cell under image pixel `(x, y)` for a given cell size.
    pub fn cell_at_pixel(&self, x: u32, y: u32, cell_px: u32) -> Result<&PaletteCell> {
        let k = cell_px.max(1);
        self.cell((y / k) as usize, (x / k) as usize)
    }

    /// Display image with `cell_px × cell_px` pixels per cell.
    pub fn to_image(&self, cell_px: u32) -> RgbImage {
        let k = cell_px.max(1);
        let cols = self.cols() as u32;
        RgbImage::from_fn(cols * k, self.rows() as u32 * k, |x, y| {
            image::Rgb(self.cells[(y / k * cols + x / k) as usize].rgb)
        })
    }

    pub fn sidecar(&self, cell_px: u32) -> PaletteSidecar {
        PaletteSidecar {
            cell_px: cell_px.max(1),
            rows: self.rows(),
            cols: self.cols(),
            palette: self.clone(),
        }
    }

    /// 16 cells on a 4×4 lattice spanning the grid (fewer on small grids).
    pub fn spot_cells(&self) -> Vec<(usize, usize)> {
        let pick = |n: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..4).map(|k| (k * (n - 1) + 1) / 3).collect();
            v.dedup();
            v
        };
        let (rs, cs) = (pick(self.rows()), pick(self.cols()));
        rs.iter().flat_map(|&r| cs.iter().map(move |&c| (r, c))).collect()
    }

    /// Largest row integral `∫ P(λi, λo) dλo` of the spectral model behind
    /// each spot cell; at most 1 for an energy-conserving palette.
    pub fn energy_spot_check(&self, ctx: &PaletteContext) -> Result<Vec<f64>> {
        let basis = ctx.basis();
        self.spot_cells()
            .into_iter()
            .map(|(r, c)| {
                let cell = self.cell(r, c)?;
                let m = ctx.material(cell.mu_e_nm, cell.sigma_e_nm)?;
                let p = MaterialModel::from_material(&m).spectral_matrix(basis)?;
                Ok(p.energy_per_input(Quadrature::Trapezoid).into_iter().fold(0.0, f64::max))
            })
            .collect()
    }
}

/// Affine HSV → `(μe, σe, ᾱ)` maps. Each pair is the value at 0 and at 1 of
/// hue, saturation and value respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvMapping {
    /// `μe = h0 + h·(h1 − h0)`; default 620 → 420 nm so red hues emit long.
    pub hue_to_mu_e: [f64; 2],
    /// `σe = s0 + s·(s1 − s0)`; default 120 → 10 nm, saturated is narrow.
    pub saturation_to_sigma_e: [f64; 2],
    /// `ᾱ = v0 + v·(v1 − v0)`; default 0 → 1.
    pub value_to_alpha_bar: [f64; 2],
}

impl Default for HsvMapping {
    fn default() -> Self {
        HsvMapping {
            hue_to_mu_e: [620.0, 420.0],
            saturation_to_sigma_e: [120.0, 10.0],
            value_to_alpha_bar: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub mu_e_nm: f64,
    pub sigma_e_nm: f64,
    pub alpha_bar: f64,
}

fn lerp(range: [f64; 2], t: f64) -> f64 {
    range[0] + t * (range[1] - range[0])
}

pub fn hsv_to_params(h: f64, s: f64, v: f64, mapping: &HsvMapping) -> Result<EmissionParams> {
    if !(0.0..1.0).contains(&h) {
        return Err(Error::param("h", format!("{h} not in [0, 1)")));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::param("s", format!("{s} not in [0, 1]")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::param("v", format!("{v} not in [0, 1]")));
    }
    Ok(EmissionParams {
        mu_e_nm: lerp(mapping.hue_to_mu_e, h),
        sigma_e_nm: lerp(mapping.saturation_to_sigma_e, s),
        alpha_bar: lerp(mapping.value_to_alpha_bar, v),
    })
}

/// Hexcone HSV of an 8-bit color, `h ∈ [0, 1)`; gray has `h = s = 0`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h.min(1.0 - f64::EPSILON), s, max]
}

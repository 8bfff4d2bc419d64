//! Preview rendering: a Lambertian sphere with optionally textured material
//! parameters under one or two illuminants, and matrix heatmaps.
//!
//! The sphere is orthographic with a single directional light plus constant
//! ambient. Textures are projected straight onto the image disk (`u = x`,
//! `v = y` in `[0, 1]`) and sampled nearest-neighbor. Float images hold XYZ
//! relative to each illuminant's display scale, so a white diffuser facing
//! the light has `Y ≈ shading`.

use image::{Rgb, Rgb32FImage, RgbImage};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::FluorescentMaterial;
use crate::colorimetry::{xyz_to_srgb_display, Illuminant};
use crate::image_io::ScalarTexture;
use crate::palette::{hsv_to_params, outgoing_xyz, rgb_to_hsv, Component, HsvMapping, MaterialReducer};
use crate::reradiation::ComposedRerad;
use crate::{Error, Result, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    /// Unit vector towards the light; `+z` faces the viewer, `+y` is up.
    pub direction: [f64; 3],
    pub ambient: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            direction: [-0.5, 0.5, std::f64::consts::FRAC_1_SQRT_2],
            ambient: 0.1,
        }
    }
}

/// Scalar texture mapped affinely onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub texture: ScalarTexture,
    pub range: [f64; 2],
}

impl TextureMap {
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let t = self.texture.sample(u, v);
        self.range[0] + t * (self.range[1] - self.range[0])
    }
}

/// Color texture driving the first Gaussian's `(μe, σe, ᾱ)` through HSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvTexture {
    pub image: RgbImage,
    pub mapping: HsvMapping,
}

#[derive(Debug, Clone)]
pub struct PreviewScene {
    pub material: FluorescentMaterial,
    /// Achromatic albedo `ρ`; replaces the material albedo with `ρ`·white.
    pub albedo_map: Option<TextureMap>,
    /// Multiplies every Gaussian's `ᾱ`.
    pub strength_map: Option<TextureMap>,
    /// Replaces every Gaussian's `μa`.
    pub mu_a_map: Option<TextureMap>,
    pub hsv_map: Option<HsvTexture>,
    /// One illuminant, or two for a left/right split.
    pub illuminants: Vec<Illuminant>,
    pub size: u32,
    /// Multiplier on each illuminant's automatic display scale.
    pub exposure: f64,
    pub lighting: Lighting,
    pub component: Component,
}

impl PreviewScene {
    pub fn new(material: FluorescentMaterial, illuminant: Illuminant, size: u32) -> Self {
        PreviewScene {
            material,
            albedo_map: None,
            strength_map: None,
            mu_a_map: None,
            hsv_map: None,
            illuminants: vec![illuminant],
            size,
            exposure: 1.0,
            lighting: Lighting::default(),
            component: Component::Full,
        }
    }

    fn textured(&self) -> bool {
        self.albedo_map.is_some() || self.strength_map.is_some() || self.mu_a_map.is_some() || self.hsv_map.is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::param("size", "must be positive"));
        }
        if self.illuminants.is_empty() || self.illuminants.len() > 2 {
            return Err(Error::param("illuminants", "one or two illuminants required"));
        }
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return Err(Error::param("exposure", "must be positive"));
        }
        let l = self.lighting.direction;
        let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::param("lighting.direction", "must be a unit vector"));
        }
        self.material.validate()
    }

    /// Material at texture coordinates `(u, v)`, validated and reported with
    /// the texel position on failure.
    pub fn material_at(&self, u: f64, v: f64, white: [f64; 3]) -> Result<FluorescentMaterial> {
        let mut m = self.material.clone();
        if let Some(a) = &self.albedo_map {
            let rho = a.sample(u, v);
            m.albedo_xyz = white.map(|w| (rho * w).min(1.0));
        }
        if let Some(h) = &self.hsv_map {
            let (w, hgt) = h.image.dimensions();
            let x = ((u * w as f64).floor().max(0.0) as u32).min(w - 1);
            let y = ((v * hgt as f64).floor().max(0.0) as u32).min(hgt - 1);
            let [hh, s, vv] = rgb_to_hsv(h.image.get_pixel(x, y).0);
            let p = hsv_to_params(hh, s, vv, &h.mapping)?;
            let g = &mut m.gaussians[0];
            g.mu_e = p.mu_e_nm;
            g.sigma_e = p.sigma_e_nm;
            g.alpha_bar = p.alpha_bar;
        }
        if let Some(s) = &self.strength_map {
            let k = s.sample(u, v);
            m.gaussians.iter_mut().for_each(|g| g.alpha_bar *= k);
        }
        if let Some(mu) = &self.mu_a_map {
            let v = mu.sample(u, v);
            m.gaussians.iter_mut().for_each(|g| g.mu_a = v);
        }
        m.validate().map_err(|e| match e {
            Error::InvalidParameter { field, message } => Error::InvalidParameter {
                field: format!("texel({u:.4}, {v:.4}).{field}"),
                message,
            },
            other => other,
        })?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Relative XYZ per pixel; background is zero.
    pub xyz: Rgb32FImage,
    pub display: RgbImage,
    pub clipped_pixels: usize,
}

/// Relative XYZ of a perfect white diffuser: `(X_E, 1, Z_E)/Y_E`.
fn albedo_white(reducer: &MaterialReducer) -> Result<[f64; 3]> {
    let basis = reducer.basis();
    let c = basis.project(&Spectrum::constant(*basis.grid(), 1.0))?;
    let y = basis.white_y();
    Ok([c[0] / y, c[1] / y, c[2] / y])
}

struct Half {
    incoming: Vec<f64>,
    scale: f64,
}

/// Renders the scene. Rows run in parallel; every pixel is a pure function
/// of the scene, so the output is bit-identical across runs.
pub fn render_sphere(scene: &PreviewScene, reducer: &MaterialReducer) -> Result<RenderOutput> {
    scene.validate()?;
    let basis = reducer.basis();
    let halves = scene
        .illuminants
        .iter()
        .map(|ill| {
            Ok(Half {
                incoming: ill.color(basis)?,
                scale: ill.display_scale(basis)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let white = albedo_white(reducer)?;
    let uniform: Option<ComposedRerad> = if scene.textured() {
        None
    } else {
        Some(reducer.reduce(&scene.material)?)
    };

    let n = scene.size as usize;
    let l = scene.lighting.direction;
    let rows: Vec<Vec<[f32; 3]>> = (0..n)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![[0.0f32; 3]; n];
            let ny = 1.0 - 2.0 * (y as f64 + 0.5) / n as f64;
            for (x, px) in row.iter_mut().enumerate() {
                let nx = 2.0 * (x as f64 + 0.5) / n as f64 - 1.0;
                let r2 = nx * nx + ny * ny;
                if r2 > 1.0 {
                    continue;
                }
                let nz = (1.0 - r2).sqrt();
                let shading = scene.lighting.ambient + (nx * l[0] + ny * l[1] + nz * l[2]).max(0.0);
                let half = &halves[if x >= n / 2 { halves.len() - 1 } else { 0 }];
                let incoming: Vec<f64> = half.incoming.iter().map(|c| c * shading).collect();
                let (u, v) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
                let xyz = match &uniform {
                    Some(p) => outgoing_xyz(p, &incoming, scene.component)?,
                    None => {
                        let m = scene.material_at(u, v, white)?;
                        outgoing_xyz(&reducer.reduce(&m)?, &incoming, scene.component)?
                    }
                };
                *px = xyz.map(|c| (c * half.scale) as f32);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut xyz = Rgb32FImage::new(scene.size, scene.size);
    let mut display = RgbImage::new(scene.size, scene.size);
    let mut clipped_pixels = 0;
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            xyz.put_pixel(x as u32, y as u32, Rgb(*px));
            let d = xyz_to_srgb_display(px.map(f64::from), scene.exposure);
            clipped_pixels += d.clipped as usize;
            display.put_pixel(x as u32, y as u32, Rgb(d.rgb));
        }
    }
    Ok(RenderOutput {
        xyz,
        display,
        clipped_pixels,
    })
}

/// Relative XYZ of a flat, fully lit swatch (shading 1) of `m`.
pub fn swatch_xyz(m: &FluorescentMaterial, illuminant: &Illuminant, reducer: &MaterialReducer, component: Component) -> Result<[f64; 3]> {
    let basis = reducer.basis();
    let c = outgoing_xyz(&reducer.reduce(m)?, &illuminant.color(basis)?, component)?;
    let s = illuminant.display_scale(basis)?;
    Ok(c.map(|v| v * s))
}

/// Flat `size × size` swatch of `m`, fully lit. Pixels use the same
/// arithmetic as palette cells, so a picked cell re-renders to identical bytes.
pub fn render_swatch(
    m: &FluorescentMaterial,
    illuminant: &Illuminant,
    reducer: &MaterialReducer,
    component: Component,
    exposure: f64,
    size: u32,
) -> Result<RenderOutput> {
    if size == 0 {
        return Err(Error::param("size", "must be positive"));
    }
    let basis = reducer.basis();
    let raw = outgoing_xyz(&reducer.reduce(m)?, &illuminant.color(basis)?, component)?;
    let scale = illuminant.display_scale(basis)?;
    let px = xyz_to_srgb_display(raw, scale * exposure);
    let rel = raw.map(|c| (c * scale) as f32);
    Ok(RenderOutput {
        xyz: Rgb32FImage::from_pixel(size, size, Rgb(rel)),
        display: RgbImage::from_pixel(size, size, Rgb(px.rgb)),
        clipped_pixels: if px.clipped { (size * size) as usize } else { 0 },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapScale {
    #[default]
    Linear,
    /// `log10(1 + 999·|v|/max)/3`, three decades.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub scale: HeatmapScale,
    /// Diverging blue (positive) / red (negative) map; `None` picks it when
    /// any entry is negative.
    pub signed: Option<bool>,
    pub cell_px: u32,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            scale: HeatmapScale::Linear,
            signed: None,
            cell_px: 1,
        }
    }
}

/// Matrix entry `(row, col)` = `(o, i)` under pixel `(x, y)`: the input
/// index runs left to right, the output index bottom to top.
pub fn heatmap_cell(x: u32, y: u32, rows: usize, cell_px: u32) -> (usize, usize) {
    let k = cell_px.max(1);
    (rows - 1 - (y / k) as usize, (x / k) as usize)
}

/// Center pixel of matrix entry `(o, i)`; inverts [`heatmap_cell`].
pub fn heatmap_pixel(o: usize, i: usize, rows: usize, cell_px: u32) -> (u32, u32) {
    let k = cell_px.max(1);
    (i as u32 * k + k / 2, (rows - 1 - o) as u32 * k + k / 2)
}

/// Heatmap of a matrix whose rows are outputs and columns inputs.
pub fn heatmap(m: &DMatrix<f64>, cfg: &HeatmapConfig) -> Result<RgbImage> {
    if m.is_empty() {
        return Err(Error::Empty("matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPhysical("matrix has non-finite entries".into()));
    }
    let signed = cfg.signed.unwrap_or_else(|| m.iter().any(|v| *v < 0.0));
    let max = m.amax();
    let level = |v: f64| -> f64 {
        if max == 0.0 {
            return 0.0;
        }
        let t = v.abs() / max;
        match cfg.scale {
            HeatmapScale::Linear => t,
            HeatmapScale::Log => (1.0 + 999.0 * t).log10() / 3.0,
        }
    };
    let byte = |t: f64| (255.0 * t.clamp(0.0, 1.0)).round() as u8;
    let k = cfg.cell_px.max(1);
    let (rows, cols) = m.shape();
    Ok(RgbImage::from_fn(cols as u32 * k, rows as u32 * k, |x, y| {
        let (o, i) = heatmap_cell(x, y, rows, k);
        let v = m[(o, i)];
        let t = level(v);
        if signed {
            let fade = byte(1.0 - t);
            if v >= 0.0 {
                Rgb([fade, fade, 255])
            } else {
                Rgb([255, fade, fade])
            }
        } else {
            let g = byte(if v > 0.0 { t } else { 0.0 });
            Rgb([g, g, g])
        }
    }))
}

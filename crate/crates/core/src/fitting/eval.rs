//! Color-space evaluation of material models, UV band search, interpolation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixture::{fit_fluorescence, FitConfig, FluorescenceFit};
use crate::analytic::{
    reduce_diagonal_analytic, reduce_fluorescence, spectral_matrix, DiagonalModel, FluorescenceLobe,
    FluorescentMaterial, MEAN_RANGE_NM,
};
use crate::colorimetry::{delta_e2000_xyz, project_xyz, AlbedoReducer, Illuminant};
use crate::error::{Error, Result};
use crate::reradiation::{
    compose_reduced, decompose, outgoing_color_spectral, recompose, reduce_entries, reduce_matrix, ComposedRerad,
    DecomposedRerad, Observer, SpectralReradMatrix, RHO_EPSILON,
};
use crate::spectral::{gaussian_cmf, Gaussian1D, Gaussian2D, SensitivityBasis, Spectrum};

/// Approximation compared against the spectral reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalPath {
    /// Spectral transport through the model's own bispectral matrix.
    SpectralFit,
    /// Brute-force reduction of the measured matrix.
    ReducedBrute,
    /// Closed-form reduction of the model.
    ReducedAnalytic,
}

impl EvalPath {
    pub const ALL: [EvalPath; 3] = [EvalPath::SpectralFit, EvalPath::ReducedBrute, EvalPath::ReducedAnalytic];
}

impl fmt::Display for EvalPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalPath::SpectralFit => "spectral-fit",
            EvalPath::ReducedBrute => "reduced-brute",
            EvalPath::ReducedAnalytic => "reduced-analytic",
        })
    }
}

impl FromStr for EvalPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral-fit" | "fit" | "spectral" => Ok(EvalPath::SpectralFit),
            "reduced-brute" | "brute" => Ok(EvalPath::ReducedBrute),
            "reduced-analytic" | "analytic" => Ok(EvalPath::ReducedAnalytic),
            _ => Err(Error::Unknown {
                kind: "evaluation path",
                name: s.to_string(),
            }),
        }
    }
}

/// How a model represents reflectance.
#[derive(Debug, Clone, PartialEq)]
pub enum Reflectance {
    Spectral(Spectrum),
    Gaussians(DiagonalModel),
    /// XYZ albedo, spectrally upsampled through the XYZ duals when needed.
    Albedo([f64; 3]),
}

/// How a model represents normalized fluorescence.
#[derive(Debug, Clone, PartialEq)]
pub enum Fluorescence {
    Gaussians(Vec<Gaussian2D>),
    /// Raw N×N samples (rows λo), as returned by decomposition.
    Tabulated(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub reflectance: Reflectance,
    pub fluorescence: Fluorescence,
}

impl MaterialModel {
    /// Non-parametric model equal to the decomposition of `p`.
    pub fn exact(p: &SpectralReradMatrix) -> Result<Self> {
        let DecomposedRerad { rho, fbar, .. } = decompose(p)?;
        Ok(MaterialModel {
            reflectance: Reflectance::Spectral(rho),
            fluorescence: Fluorescence::Tabulated(fbar),
        })
    }

    /// Measured reflectance plus `config.q` fitted Gaussians.
    pub fn fit(p: &SpectralReradMatrix, config: &FitConfig) -> Result<(Self, FluorescenceFit)> {
        let d = decompose(p)?;
        let fit = fit_fluorescence(&d.fbar, p.grid(), config)?;
        let model = MaterialModel {
            reflectance: Reflectance::Spectral(d.rho),
            fluorescence: Fluorescence::Gaussians(fit.gaussians.clone()),
        };
        Ok((model, fit))
    }

    pub fn from_material(m: &FluorescentMaterial) -> Self {
        let reflectance = match &m.diagonal {
            Some(d) => Reflectance::Gaussians(d.clone()),
            None => Reflectance::Albedo(m.albedo_xyz),
        };
        MaterialModel {
            reflectance,
            fluorescence: Fluorescence::Gaussians(m.resolved()),
        }
    }

    fn rho_spectrum(&self, basis: &SensitivityBasis) -> Result<Spectrum> {
        let grid = *basis.grid();
        let clamp = |v: f64| v.clamp(0.0, 1.0 - RHO_EPSILON);
        Ok(match &self.reflectance {
            Reflectance::Spectral(s) => s.clone(),
            Reflectance::Gaussians(d) => Spectrum::from_fn(grid, |l| clamp(d.eval(l))),
            Reflectance::Albedo(a) => {
                let up = basis.albedo_spectrum(&a[..basis.channels().min(3)])?;
                Spectrum::new(grid, up.values().iter().map(|v| clamp(*v)).collect())?
            }
        })
    }

    /// Bispectral matrix of the model on the basis grid.
    pub fn spectral_matrix(&self, basis: &SensitivityBasis) -> Result<SpectralReradMatrix> {
        let xyz = xyz_part(basis)?;
        let rho = self.rho_spectrum(&xyz)?;
        match &self.fluorescence {
            Fluorescence::Gaussians(g) => spectral_matrix(&rho, g, basis.quadrature()),
            Fluorescence::Tabulated(f) => Ok(recompose(&DecomposedRerad {
                rho,
                fbar: f.clone(),
                clamped: Vec::new(),
            })),
        }
    }

    /// Reduced `R`, `F̄` and `P = R + F̄(I − R)`.
    pub fn reduce(&self, basis: &SensitivityBasis) -> Result<ComposedRerad> {
        let r = match &self.reflectance {
            Reflectance::Spectral(s) => reduce_matrix(&SpectralReradMatrix::from_reflectance(s), basis)?,
            Reflectance::Gaussians(d) => reduce_diagonal_analytic(d, basis),
            Reflectance::Albedo(a) => AlbedoReducer::new(basis).reduce(a)?,
        };
        let f = match &self.fluorescence {
            Fluorescence::Gaussians(g) => reduce_fluorescence(g, basis),
            Fluorescence::Tabulated(t) => reduce_entries(basis.grid(), t, basis)?,
        };
        compose_reduced(&r, &f)
    }
}

/// The Gaussian XYZ basis sharing the first three atoms of `basis`.
fn xyz_part(basis: &SensitivityBasis) -> Result<SensitivityBasis> {
    if basis.channels() == 3 {
        return Ok(basis.clone());
    }
    let m = basis.atoms().len();
    let keep: Vec<usize> = (0..m).filter(|&a| (0..3).any(|c| basis.transfer()[(a, c)] != 0.0)).collect();
    let atoms = keep.iter().map(|&a| basis.atoms()[a]).collect();
    let transfer = DMatrix::from_fn(keep.len(), 3, |r, c| basis.transfer()[(keep[r], c)]);
    SensitivityBasis::build_with(atoms, transfer, *basis.grid(), basis.labels()[..3].to_vec(), basis.quadrature())
}

/// Sensors and basis used for evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub basis: SensitivityBasis,
    /// Reference observer; by default the basis's own XYZ sensitivities.
    pub observer: Observer,
}

impl EvalContext {
    pub fn new(basis: SensitivityBasis) -> Self {
        let observer = Observer::from_basis(&basis, 3);
        EvalContext { basis, observer }
    }

    pub fn with_observer(mut self, observer: Observer) -> Self {
        self.observer = observer;
        self
    }
}

/// Box-plot statistics. `min ≤ q1 ≤ median ≤ q3 ≤ max` and
/// `min ≤ mean ≤ max`; quartiles interpolate linearly between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("statistics over no values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let quantile = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(BoxStats {
            min: v[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q3: quantile(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminantReport {
    pub illuminant: String,
    pub stats: BoxStats,
    /// ΔE2000 per material, in dataset order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub path: EvalPath,
    pub per_illuminant: Vec<IlluminantReport>,
    pub overall: BoxStats,
}

struct IlluminantRefs {
    spectrum: Spectrum,
    color: Vec<f64>,
    white: [f64; 3],
}

fn illuminant_refs(illuminants: &[Illuminant], ctx: &EvalContext) -> Result<Vec<IlluminantRefs>> {
    let white_matrix = SpectralReradMatrix::from_reflectance(&Spectrum::constant(*ctx.basis.grid(), 1.0));
    illuminants
        .iter()
        .map(|ill| {
            let white = outgoing_color_spectral(&white_matrix, ill.spectrum(), &ctx.observer)?;
            Ok(IlluminantRefs {
                spectrum: ill.spectrum().clone(),
                color: ill.color(&ctx.basis)?,
                white: project_xyz(&white)?,
            })
        })
        .collect()
}

/// ΔE2000 between the spectral reference on each original matrix and the
/// chosen approximation, per illuminant. `models` may be empty for
/// [`EvalPath::ReducedBrute`], which does not use them.
pub fn evaluate_de(
    dataset: &[SpectralReradMatrix],
    models: &[MaterialModel],
    illuminants: &[Illuminant],
    path: EvalPath,
    ctx: &EvalContext,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    if illuminants.is_empty() {
        return Err(Error::Empty("illuminant list".into()));
    }
    if path != EvalPath::ReducedBrute && models.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: models.len(),
        });
    }
    let refs = illuminant_refs(illuminants, ctx)?;
    let per_material: Vec<Vec<f64>> = dataset
        .par_iter()
        .enumerate()
        .map(|(m, p)| -> Result<Vec<f64>> {
            enum Approx {
                Spectral(SpectralReradMatrix),
                Reduced(ComposedRerad),
            }
            let approx = match path {
                EvalPath::SpectralFit => Approx::Spectral(models[m].spectral_matrix(&ctx.basis)?),
                EvalPath::ReducedBrute => {
                    let r = reduce_matrix(p, &ctx.basis)?;
                    let zero = crate::reradiation::ReducedRerad::zeros(r.labels().to_vec());
                    Approx::Reduced(compose_reduced(&r, &zero)?)
                }
                EvalPath::ReducedAnalytic => Approx::Reduced(models[m].reduce(&ctx.basis)?),
            };
            refs.iter()
                .map(|ill| {
                    let reference = project_xyz(&outgoing_color_spectral(p, &ill.spectrum, &ctx.observer)?)?;
                    let test = match &approx {
                        Approx::Spectral(q) => outgoing_color_spectral(q, &ill.spectrum, &ctx.observer)?,
                        Approx::Reduced(c) => c.total.apply(&ill.color)?,
                    };
                    delta_e2000_xyz(reference, project_xyz(&test)?, ill.white)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let per_illuminant = illuminants
        .iter()
        .enumerate()
        .map(|(k, ill)| {
            let values: Vec<f64> = per_material.iter().map(|v| v[k]).collect();
            Ok(IlluminantReport {
                illuminant: ill.name().to_string(),
                stats: BoxStats::from_values(&values)?,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per_material.iter().flatten().copied().collect();
    Ok(EvalReport {
        path,
        per_illuminant,
        overall: BoxStats::from_values(&all)?,
    })
}

/// Inclusive arithmetic range `start, start + step, …, ≤ end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Sweep {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.end < self.start {
            return Err(Error::param("sweep", format!("invalid range {self:?}")));
        }
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvSearch {
    pub mu: Sweep,
    pub sigma: Sweep,
}

impl Default for UvSearch {
    fn default() -> Self {
        UvSearch {
            mu: Sweep {
                start: 340.0,
                end: 420.0,
                step: 5.0,
            },
            sigma: Sweep {
                start: 30.0,
                end: 80.0,
                step: 5.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvSearchResult {
    pub band: Gaussian1D,
    /// Mean ΔE2000 at the chosen band.
    pub objective: f64,
    /// Set when the objective did not vary over the search grid; the default
    /// band is returned.
    pub flat: bool,
    /// `(μ, σ, objective)` for every candidate, in scan order.
    pub table: Vec<(f64, f64, f64)>,
}

/// Grid search for the UV band minimizing the mean ΔE2000 between spectral
/// transport and brute-force XYZU reduction.
pub fn optimize_uv_basis(
    dataset: &[SpectralReradMatrix],
    illuminants: &[Illuminant],
    search: &UvSearch,
) -> Result<UvSearchResult> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let grid = *dataset[0].grid();
    let mus = search.mu.values()?;
    let sigmas = search.sigma.values()?;
    let candidates: Vec<(f64, f64)> = mus.iter().flat_map(|m| sigmas.iter().map(move |s| (*m, *s))).collect();
    let xyz = SensitivityBasis::xyz(grid);
    let observer = Observer::from_basis(&xyz, 3);
    let table: Vec<(f64, f64, f64)> = candidates
        .par_iter()
        .map(|&(mu, sigma)| {
            let basis = SensitivityBasis::xyz_with_uv(grid, Gaussian1D::new(1.0, mu, sigma))?;
            let ctx = EvalContext {
                basis,
                observer: observer.clone(),
            };
            let report = evaluate_de(dataset, &[], illuminants, EvalPath::ReducedBrute, &ctx)?;
            Ok((mu, sigma, report.overall.mean))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = table
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.2), hi.max(t.2)));
    if hi - lo <= 1e-9 * lo.abs().max(1.0) {
        return Ok(UvSearchResult {
            band: gaussian_cmf::UV_BAND,
            objective: lo,
            flat: true,
            table,
        });
    }
    let best = table
        .iter()
        .fold(table[0], |best, t| if t.2 < best.2 { *t } else { best });
    Ok(UvSearchResult {
        band: Gaussian1D::new(1.0, best.0, best.1),
        objective: best.2,
        flat: false,
        table,
    })
}

/// Editable material built from a fit, with the changes needed to make it valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMaterial {
    pub material: FluorescentMaterial,
    /// Human-readable notes for every clamp or rescale applied.
    pub adjustments: Vec<String>,
}

/// Converts measured reflectance plus fitted Gaussians into a material.
///
/// The albedo is the relative XYZ of `rho` (white reflector = `(·, 1, ·)`).
/// Strengths are `α / α̂_max`; each is capped at 1 and the set is scaled
/// down if it sums past 1. Means are clamped into the editable range.
pub fn material_from_fit(rho: &Spectrum, fit: &FluorescenceFit, xyz: &SensitivityBasis) -> Result<FittedMaterial> {
    let mut adjustments = Vec::new();
    let c = xyz.project(rho)?;
    let white = xyz.white_y();
    let mut albedo_xyz = [0.0; 3];
    for (k, a) in albedo_xyz.iter_mut().enumerate() {
        let v = c[k] / white;
        *a = v.clamp(0.0, 1.0);
        if *a != v {
            adjustments.push(format!("albedo_xyz[{k}] clamped from {v:.6} to {a}"));
        }
    }
    let mut gaussians: Vec<FluorescenceLobe> = fit.gaussians.iter().map(FluorescenceLobe::from_gaussian).collect();
    for (i, g) in gaussians.iter_mut().enumerate() {
        for (name, v) in [("mu_a_nm", &mut g.mu_a), ("mu_e_nm", &mut g.mu_e)] {
            let c = v.clamp(MEAN_RANGE_NM[0], MEAN_RANGE_NM[1]);
            if c != *v {
                adjustments.push(format!("gaussians[{i}].{name} clamped from {v:.3} to {c}"));
                *v = c;
            }
        }
        if g.alpha_bar > 1.0 {
            adjustments.push(format!("gaussians[{i}].alpha_bar capped from {:.6} to 1", g.alpha_bar));
            g.alpha_bar = 1.0;
        }
    }
    let total: f64 = gaussians.iter().map(|g| g.alpha_bar).sum();
    if total > 1.0 {
        adjustments.push(format!("strengths summed to {total:.6}; scaled by {:.6}", 1.0 / total));
        for g in &mut gaussians {
            g.alpha_bar /= total;
        }
    }
    let material = FluorescentMaterial::new(albedo_xyz, gaussians)?;
    Ok(FittedMaterial { material, adjustments })
}

/// Linear blend of fluorescence parameters per Gaussian index, keeping the
/// albedo of `a`. Missing Gaussians are padded with zero-strength copies of
/// their counterpart.
pub fn interpolate_materials(a: &FluorescentMaterial, b: &FluorescentMaterial, t: f64) -> Result<FluorescentMaterial> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("{t} not in [0, 1]")));
    }
    let q = a.gaussians.len().max(b.gaussians.len());
    let pad = |own: &[FluorescenceLobe], other: &[FluorescenceLobe], i: usize| {
        own.get(i).copied().unwrap_or_else(|| FluorescenceLobe {
            alpha_bar: 0.0,
            ..other[i]
        })
    };
    let mix = |x: f64, y: f64| (1.0 - t) * x + t * y;
    let gaussians = (0..q)
        .map(|i| {
            let ga = pad(&a.gaussians, &b.gaussians, i);
            let gb = pad(&b.gaussians, &a.gaussians, i);
            FluorescenceLobe {
                alpha_bar: mix(ga.alpha_bar, gb.alpha_bar),
                mu_a: mix(ga.mu_a, gb.mu_a),
                sigma_a: mix(ga.sigma_a, gb.sigma_a),
                mu_e: mix(ga.mu_e, gb.mu_e),
                sigma_e: mix(ga.sigma_e, gb.sigma_e),
            }
        })
        .collect();
    let out = FluorescentMaterial {
        albedo_xyz: a.albedo_xyz,
        gaussians,
        notes: a.notes.clone(),
        diagonal: a.diagonal.clone(),
    };
    out.validate()?;
    Ok(out)
}

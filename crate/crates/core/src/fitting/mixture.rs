//! Gaussian mixture fits: bispectral fluorescence, reflectance diagonal, CMFs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lm::{cost, levenberg_marquardt, LmOptions, Model, Sample};
use crate::analytic::{DiagonalModel, MAX_LOBES};
use crate::error::{Error, Result};
use crate::spectral::{Gaussian1D, Gaussian2D, Spectrum, WavelengthGrid};

/// Number of starts per added component when `q ≥ 2`.
pub const MULTI_START_SEEDS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "gaussians")]
pub enum InitStrategy {
    /// Means and spreads of the off-diagonal mass marginals.
    Moments,
    /// Start from the given Gaussians (their count must equal `q`).
    Warm(Vec<Gaussian2D>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub q: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub init: InitStrategy,
    /// Use every `stride`-th grid sample on both axes.
    pub stride: usize,
    pub sigma_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            q: 1,
            max_iters: 200,
            tolerance: 1e-10,
            seed: 0,
            init: InitStrategy::Moments,
            stride: 1,
            sigma_floor: 1.0,
        }
    }
}

impl FitConfig {
    pub fn with_q(q: usize) -> Self {
        FitConfig { q, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LOBES).contains(&self.q) {
            return Err(Error::param("q", format!("must be in [1, {MAX_LOBES}], got {}", self.q)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::param("tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::param("sigma_floor", "must be positive"));
        }
        if let InitStrategy::Warm(g) = &self.init {
            if g.len() != self.q {
                return Err(Error::param("init", format!("{} warm-start Gaussians for q = {}", g.len(), self.q)));
            }
        }
        Ok(())
    }

    fn lm(&self) -> LmOptions {
        LmOptions {
            max_iters: self.max_iters,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceFit {
    pub gaussians: Vec<Gaussian2D>,
    /// RMS residual over the fitted samples.
    pub rms: f64,
    /// Set when the input had no fluorescence to fit.
    pub trivial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalFit {
    pub model: DiagonalModel,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmfFit {
    pub gaussians: Vec<Gaussian1D>,
    pub rms: f64,
}

/// Sum of `count` 1D Gaussians, parameters `[α, μ, σ]` per component.
struct Mix1 {
    count: usize,
    sigma_floor: f64,
}

impl Model for Mix1 {
    fn n_params(&self) -> usize {
        3 * self.count
    }

    fn eval(&self, p: &[f64], x: [f64; 2], mut grad: Option<&mut [f64]>) -> f64 {
        let mut v = 0.0;
        for (c, q) in p.chunks_exact(3).enumerate() {
            let (a, mu, s) = (q[0], q[1], q[2]);
            let d = x[0] - mu;
            let e = (-d * d / (2.0 * s * s)).exp();
            v += a * e;
            if let Some(g) = grad.as_deref_mut() {
                g[3 * c] = e;
                g[3 * c + 1] = a * e * d / (s * s);
                g[3 * c + 2] = a * e * d * d / (s * s * s);
            }
        }
        v
    }

    fn project(&self, p: &mut [f64]) {
        for q in p.chunks_exact_mut(3) {
            q[0] = q[0].max(0.0);
            q[2] = q[2].max(self.sigma_floor);
        }
    }
}

/// Sum of `count` axis-aligned 2D Gaussians, `[α, μa, σa, μe, σe]` per
/// component, evaluated at `(λi, λo)`.
struct Mix2 {
    count: usize,
    sigma_floor: f64,
    /// Means are kept inside the sampled wavelength range.
    mean_range: [f64; 2],
}

impl Model for Mix2 {
    fn n_params(&self) -> usize {
        5 * self.count
    }

    fn eval(&self, p: &[f64], x: [f64; 2], mut grad: Option<&mut [f64]>) -> f64 {
        let mut v = 0.0;
        for (c, q) in p.chunks_exact(5).enumerate() {
            let (a, ma, sa, me, se) = (q[0], q[1], q[2], q[3], q[4]);
            let da = x[0] - ma;
            let de = x[1] - me;
            let e = (-da * da / (2.0 * sa * sa) - de * de / (2.0 * se * se)).exp();
            v += a * e;
            if let Some(g) = grad.as_deref_mut() {
                let ae = a * e;
                g[5 * c] = e;
                g[5 * c + 1] = ae * da / (sa * sa);
                g[5 * c + 2] = ae * da * da / (sa * sa * sa);
                g[5 * c + 3] = ae * de / (se * se);
                g[5 * c + 4] = ae * de * de / (se * se * se);
            }
        }
        v
    }

    fn project(&self, p: &mut [f64]) {
        for q in p.chunks_exact_mut(5) {
            q[0] = q[0].max(0.0);
            q[1] = q[1].clamp(self.mean_range[0], self.mean_range[1]);
            q[2] = q[2].max(self.sigma_floor);
            q[3] = q[3].clamp(self.mean_range[0], self.mean_range[1]);
            q[4] = q[4].max(self.sigma_floor);
        }
    }
}

struct Moments {
    mean: [f64; 2],
    std: [f64; 2],
    peak: f64,
}

fn moments(samples: &[Sample]) -> Option<Moments> {
    let mut mass = 0.0;
    let mut m = [0.0; 2];
    let mut peak = 0.0f64;
    for s in samples.iter().filter(|s| s.y > 0.0) {
        mass += s.y;
        m[0] += s.y * s.x[0];
        m[1] += s.y * s.x[1];
        peak = peak.max(s.y);
    }
    if !(mass > 0.0) {
        return None;
    }
    let mean = [m[0] / mass, m[1] / mass];
    let mut v = [0.0; 2];
    for s in samples.iter().filter(|s| s.y > 0.0) {
        v[0] += s.y * (s.x[0] - mean[0]).powi(2);
        v[1] += s.y * (s.x[1] - mean[1]).powi(2);
    }
    Some(Moments {
        mean,
        std: [(v[0] / mass).sqrt(), (v[1] / mass).sqrt()],
        peak,
    })
}

/// Location and size of the largest positive residual of the current fit.
fn residual_peak<M: Model>(model: &M, samples: &[Sample], p: &[f64]) -> ([f64; 2], f64) {
    let mut best = (samples[0].x, f64::NEG_INFINITY);
    for s in samples {
        let r = s.y - model.eval(p, s.x, None);
        if r > best.1 {
            best = (s.x, r);
        }
    }
    (best.0, best.1.max(0.0))
}

struct Nested<'a> {
    samples: &'a [Sample],
    opts: LmOptions,
    seed: u64,
}

impl Nested<'_> {
    /// Grows a mixture one component at a time from `first`, trying
    /// [`MULTI_START_SEEDS`] starts per new component and keeping the
    /// smaller model when the larger one does not improve.
    fn run<M: Model>(
        &self,
        make: impl Fn(usize) -> M,
        first: Vec<f64>,
        target: usize,
        propose: impl Fn([f64; 2], f64, f64) -> Vec<f64>,
    ) -> (Vec<f64>, f64) {
        let out = levenberg_marquardt(&make(1), self.samples, &first, self.opts);
        let (mut p, mut c) = (out.params, out.cost);
        for k in 2..=target {
            let prev_model = make(k - 1);
            let (at, height) = residual_peak(&prev_model, self.samples, &p);
            let model = make(k);
            let mut best: Option<(Vec<f64>, f64)> = None;
            for s in 0..MULTI_START_SEEDS {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(s));
                let factor = rng.random_range(0.5..1.5);
                let mut init = p.clone();
                init.extend(propose(at, height, factor));
                let out = levenberg_marquardt(&model, self.samples, &init, self.opts);
                if best.as_ref().is_none_or(|b| out.cost < b.1) {
                    best = Some((out.params, out.cost));
                }
            }
            let (bp, bc) = best.expect("at least one start");
            if bc <= c {
                p = bp;
                c = bc;
            } else {
                let mut pad = propose(at, 0.0, 1.0);
                pad[0] = 0.0;
                p.extend(pad);
            }
        }
        (p, c)
    }
}

fn rms(cost: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (2.0 * cost / n as f64).sqrt()
    }
}

fn unpack2(p: &[f64]) -> Vec<Gaussian2D> {
    p.chunks_exact(5)
        .map(|q| Gaussian2D {
            amplitude: q[0],
            mean_a: q[1],
            std_a: q[2],
            mean_e: q[3],
            std_e: q[4],
        })
        .collect()
}

fn unpack1(p: &[f64]) -> Vec<Gaussian1D> {
    p.chunks_exact(3).map(|q| Gaussian1D::new(q[0], q[1], q[2])).collect()
}

/// Least-squares fit of `q` axis-aligned Gaussians to the samples of `fbar`
/// strictly above the diagonal (λo > λi). Rows are λo, columns λi.
pub fn fit_fluorescence(fbar: &DMatrix<f64>, grid: &WavelengthGrid, config: &FitConfig) -> Result<FluorescenceFit> {
    config.validate()?;
    let n = grid.len();
    if fbar.nrows() != n || fbar.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: fbar.nrows().max(fbar.ncols()),
        });
    }
    if fbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("fbar", "non-finite entry"));
    }
    let lam: Vec<f64> = grid.wavelengths().collect();
    let mut samples = Vec::new();
    for i in (0..n).step_by(config.stride) {
        for o in (i + 1..n).filter(|o| o % config.stride == 0) {
            samples.push(Sample {
                x: [lam[i], lam[o]],
                y: fbar[(o, i)],
            });
        }
    }
    let center = 0.5 * (grid.min() + grid.max());
    let Some(mom) = moments(&samples) else {
        let zero = Gaussian2D {
            amplitude: 0.0,
            mean_a: center,
            std_a: 30.0,
            mean_e: center,
            std_e: 30.0,
        };
        return Ok(FluorescenceFit {
            gaussians: vec![zero; config.q],
            rms: rms(cost(&Mix2 { count: 1, sigma_floor: 1.0, mean_range: [grid.min(), grid.max()] }, &samples, &[0.0, center, 30.0, center, 30.0]), samples.len()),
            trivial: true,
        });
    };
    let floor = config.sigma_floor;
    let make = |count| Mix2 {
        count,
        sigma_floor: floor,
        mean_range: [grid.min(), grid.max()],
    };
    let (p, c) = match &config.init {
        InitStrategy::Warm(gs) => {
            let init: Vec<f64> = gs
                .iter()
                .flat_map(|g| [g.amplitude, g.mean_a, g.std_a, g.mean_e, g.std_e])
                .collect();
            let out = levenberg_marquardt(&make(config.q), &samples, &init, config.lm());
            (out.params, out.cost)
        }
        InitStrategy::Moments => {
            let first = vec![mom.peak, mom.mean[0], mom.std[0].max(floor), mom.mean[1], mom.std[1].max(floor)];
            let nested = Nested {
                samples: &samples,
                opts: config.lm(),
                seed: config.seed,
            };
            let base = [(0.5 * mom.std[0]).max(floor), (0.5 * mom.std[1]).max(floor)];
            nested.run(make, first, config.q, |at, h, f| {
                vec![h, at[0], (base[0] * f).max(floor), at[1], (base[1] * f).max(floor)]
            })
        }
    };
    Ok(FluorescenceFit {
        gaussians: unpack2(&p),
        rms: rms(c, samples.len()),
        trivial: false,
    })
}

fn samples_1d(s: &Spectrum) -> Vec<Sample> {
    s.grid()
        .wavelengths()
        .zip(s.values())
        .map(|(l, v)| Sample { x: [l, 0.0], y: *v })
        .collect()
}

fn fit_1d_nested(samples: &[Sample], n: usize, config: &FitConfig) -> Option<(Vec<f64>, f64)> {
    let mom = moments(samples)?;
    let floor = config.sigma_floor;
    let nested = Nested {
        samples,
        opts: config.lm(),
        seed: config.seed,
    };
    let base = (0.5 * mom.std[0]).max(floor);
    Some(nested.run(
        |count| Mix1 {
            count,
            sigma_floor: floor,
        },
        vec![mom.peak, mom.mean[0], mom.std[0].max(floor)],
        n,
        |at, h, f| vec![h, at[0], (base * f).max(floor)],
    ))
}

/// Fits `m` non-negative Gaussians to a reflectance spectrum.
pub fn fit_diagonal(rho: &Spectrum, m: usize) -> Result<DiagonalFit> {
    if m == 0 || m > 6 {
        return Err(Error::param("m", format!("must be in [1, 6], got {m}")));
    }
    let samples = samples_1d(rho);
    let n = samples.len();
    if rho.values().iter().all(|v| *v <= 0.0) {
        let grid = rho.grid();
        let spacing = (grid.max() - grid.min()) / m as f64;
        let gaussians = (0..m)
            .map(|k| Gaussian1D::new(0.0, grid.min() + (k as f64 + 0.5) * spacing, spacing))
            .collect();
        let fit_cost = cost(&Mix1 { count: 1, sigma_floor: 1.0 }, &samples, &[0.0, 500.0, 1.0]);
        return Ok(DiagonalFit {
            model: DiagonalModel { gaussians },
            rms: rms(fit_cost, n),
        });
    }
    let config = FitConfig {
        max_iters: 500,
        tolerance: 1e-12,
        ..FitConfig::default()
    };
    let model = Mix1 {
        count: m,
        sigma_floor: config.sigma_floor,
    };
    let grid = rho.grid();
    let spacing = (grid.max() - grid.min()) / m as f64;
    let spread: Vec<f64> = (0..m)
        .flat_map(|k| {
            let mu = grid.min() + (k as f64 + 0.5) * spacing;
            let v = rho.values()[grid.nearest_index(mu)].max(0.0);
            [0.6 * v, mu, 0.6 * spacing]
        })
        .collect();
    let even = levenberg_marquardt(&model, &samples, &spread, config.lm());
    let mut best = (even.params, even.cost);
    if m > 1 {
        if let Some(nested) = fit_1d_nested(&samples, m, &config) {
            if nested.1 < best.1 {
                best = nested;
            }
        }
    }
    Ok(DiagonalFit {
        model: DiagonalModel {
            gaussians: unpack1(&best.0),
        },
        rms: rms(best.1, n),
    })
}

/// Fits `n` Gaussians to a tabulated color matching function.
pub fn fit_cmf(cmf: &Spectrum, n: usize) -> Result<CmfFit> {
    if n == 0 || n > MAX_LOBES {
        return Err(Error::param("n_gaussians", format!("must be in [1, {MAX_LOBES}], got {n}")));
    }
    let samples = samples_1d(cmf);
    let config = FitConfig {
        max_iters: 1000,
        tolerance: 1e-14,
        ..FitConfig::default()
    };
    let (p, c) = fit_1d_nested(&samples, n, &config).ok_or_else(|| Error::Empty("CMF has no positive samples".into()))?;
    let mut gaussians = unpack1(&p);
    gaussians.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(CmfFit {
        gaussians,
        rms: rms(c, samples.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::discretize_fbar;
    use crate::spectral::Quadrature;

    fn synth(gs: &[Gaussian2D], grid: &WavelengthGrid) -> DMatrix<f64> {
        let mut m = discretize_fbar(gs, grid, Quadrature::Trapezoid);
        m.fill_diagonal(0.0);
        m
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn recovers_single_gaussian() {
        let grid = WavelengthGrid::new(300.0, 800.0, 2.0).unwrap();
        let truth = Gaussian2D {
            amplitude: 0.004,
            mean_a: 410.0,
            std_a: 35.0,
            mean_e: 540.0,
            std_e: 28.0,
        };
        let fit = fit_fluorescence(&synth(&[truth], &grid), &grid, &FitConfig::default()).unwrap();
        let g = fit.gaussians[0];
        assert!(!fit.trivial);
        for (a, b) in [
            (g.amplitude, truth.amplitude),
            (g.mean_a, truth.mean_a),
            (g.std_a, truth.std_a),
            (g.mean_e, truth.mean_e),
            (g.std_e, truth.std_e),
        ] {
            assert!(rel(a, b) < 0.01, "{g:?}");
        }
    }

    #[test]
    fn zero_input_is_trivial() {
        let grid = WavelengthGrid::new(300.0, 800.0, 5.0).unwrap();
        let fit = fit_fluorescence(&DMatrix::zeros(grid.len(), grid.len()), &grid, &FitConfig::with_q(2)).unwrap();
        assert!(fit.trivial);
        assert_eq!(fit.gaussians.len(), 2);
        assert!(fit.gaussians.iter().all(|g| g.amplitude == 0.0));
        assert_eq!(fit.rms, 0.0);
    }

    #[test]
    fn nested_models_on_two_gaussian_input() {
        let grid = WavelengthGrid::new(300.0, 800.0, 2.0).unwrap();
        let truth = [
            Gaussian2D {
                amplitude: 0.004,
                mean_a: 380.0,
                std_a: 25.0,
                mean_e: 470.0,
                std_e: 20.0,
            },
            Gaussian2D {
                amplitude: 0.002,
                mean_a: 520.0,
                std_a: 30.0,
                mean_e: 630.0,
                std_e: 35.0,
            },
        ];
        let fbar = synth(&truth, &grid);
        let one = fit_fluorescence(&fbar, &grid, &FitConfig::with_q(1)).unwrap();
        let two = fit_fluorescence(&fbar, &grid, &FitConfig::with_q(2)).unwrap();
        assert!(two.rms <= 1e-6, "{}", two.rms);
        assert!(one.rms > two.rms);
        let again = fit_fluorescence(&fbar, &grid, &FitConfig::with_q(2)).unwrap();
        assert_eq!(two, again);
    }

    #[test]
    fn config_validation() {
        let grid = WavelengthGrid::new(300.0, 400.0, 10.0).unwrap();
        let z = DMatrix::zeros(grid.len(), grid.len());
        assert!(fit_fluorescence(&z, &grid, &FitConfig::with_q(0)).is_err());
        assert!(fit_fluorescence(&z, &grid, &FitConfig::with_q(5)).is_err());
        let bad = FitConfig {
            tolerance: 0.0,
            ..FitConfig::default()
        };
        assert!(fit_fluorescence(&z, &grid, &bad).is_err());
        assert!(fit_fluorescence(&DMatrix::zeros(3, 3), &grid, &FitConfig::default()).is_err());
    }

    #[test]
    fn diagonal_single_gaussian_recovery() {
        let grid = WavelengthGrid::default();
        let truth = Gaussian1D::new(0.6, 530.0, 45.0);
        let fit = fit_diagonal(&truth.discretize(&grid), 1).unwrap();
        let g = fit.model.gaussians[0];
        assert!(rel(g.amplitude, 0.6) < 0.01 && rel(g.mean, 530.0) < 0.01 && rel(g.std, 45.0) < 0.01);
        let six = fit_diagonal(&truth.discretize(&grid), 6).unwrap();
        assert!(six.rms < 1e-3, "{}", six.rms);
    }

    #[test]
    fn diagonal_zero_and_constant() {
        let grid = WavelengthGrid::default();
        let zero = fit_diagonal(&Spectrum::constant(grid, 0.0), 6).unwrap();
        assert!(zero.model.gaussians.iter().all(|g| g.amplitude == 0.0));
        let half = fit_diagonal(&Spectrum::constant(grid, 0.5), 6).unwrap();
        let err: f64 = grid
            .wavelengths()
            .filter(|l| (360.0..=760.0).contains(l))
            .map(|l| (half.model.eval(l) - 0.5).powi(2))
            .sum::<f64>()
            / 401.0;
        assert!(err.sqrt() <= 0.02, "{}", err.sqrt());
        assert!(half.model.gaussians.iter().all(|g| g.amplitude >= 0.0));
        assert!(fit_diagonal(&Spectrum::constant(grid, 0.5), 7).is_err());
    }

    #[test]
    fn cmf_self_fit() {
        let grid = WavelengthGrid::default();
        let truth = Gaussian1D::new(1.2, 505.0, 31.0);
        let fit = fit_cmf(&truth.discretize(&grid), 1).unwrap();
        let g = fit.gaussians[0];
        assert!(rel(g.amplitude, 1.2) < 1e-3 && rel(g.mean, 505.0) < 1e-3 && rel(g.std, 31.0) < 1e-3);
    }

    #[test]
    fn tabulated_cmfs_give_the_gaussian_observer() {
        use crate::colorimetry::cie2006_curve;
        use crate::spectral::gaussian_cmf::{X_BAR_LONG, X_BAR_SHORT, Y_BAR, Z_BAR};
        let grid = WavelengthGrid::default();
        let cases = [(0, vec![X_BAR_SHORT, X_BAR_LONG]), (1, vec![Y_BAR]), (2, vec![Z_BAR])];
        for (channel, expected) in cases {
            let fit = fit_cmf(&cie2006_curve(channel, grid, None).unwrap(), expected.len()).unwrap();
            for (g, e) in fit.gaussians.iter().zip(&expected) {
                assert!(rel(g.amplitude, e.amplitude) < 0.02);
                assert!(rel(g.mean, e.mean) < 0.02);
                assert!(rel(g.std, e.std) < 0.02);
            }
        }
    }
}

//! Projected Levenberg–Marquardt on sampled models with analytic gradients.

use nalgebra::{DMatrix, DVector};

/// A parametric model evaluated at 1D or 2D sample coordinates.
pub(crate) trait Model {
    fn n_params(&self) -> usize;

    /// Value at `x`; writes `∂f/∂p` into `grad` when given.
    fn eval(&self, p: &[f64], x: [f64; 2], grad: Option<&mut [f64]>) -> f64;

    /// Pulls parameters back into the feasible box.
    fn project(&self, p: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub x: [f64; 2],
    pub y: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iters: usize,
    /// Relative cost decrease below which an accepted step ends the fit.
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    /// `½ Σ r²`.
    pub cost: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub iterations: usize,
}

pub(crate) fn cost<M: Model>(model: &M, samples: &[Sample], p: &[f64]) -> f64 {
    0.5 * samples
        .iter()
        .map(|s| {
            let r = model.eval(p, s.x, None) - s.y;
            r * r
        })
        .sum::<f64>()
}

fn normal_equations<M: Model>(model: &M, samples: &[Sample], p: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = model.n_params();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);
    let mut grad = vec![0.0; n];
    let mut c = 0.0;
    for s in samples {
        let r = model.eval(p, s.x, Some(&mut grad)) - s.y;
        c += r * r;
        for a in 0..n {
            let ga = grad[a];
            if ga == 0.0 {
                continue;
            }
            jtr[a] += ga * r;
            for b in a..n {
                jtj[(a, b)] += ga * grad[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, jtr, 0.5 * c)
}

pub(crate) fn levenberg_marquardt<M: Model>(model: &M, samples: &[Sample], p0: &[f64], opts: LmOptions) -> LmOutcome {
    let n = model.n_params();
    let mut p = p0.to_vec();
    model.project(&mut p);
    let mut lambda = 1e-3;
    let (mut jtj, mut jtr, mut c) = normal_equations(model, samples, &p);
    let mut iterations = 0;
    while iterations < opts.max_iters && c > 0.0 {
        iterations += 1;
        let mut damped = jtj.clone();
        for a in 0..n {
            damped[(a, a)] += lambda * jtj[(a, a)].max(1e-30);
        }
        let step = damped.cholesky().map(|ch| ch.solve(&(-&jtr)));
        let Some(step) = step else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
            continue;
        };
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        model.project(&mut trial);
        let trial_cost = cost(model, samples, &trial);
        if trial_cost.is_finite() && trial_cost < c {
            let decrease = (c - trial_cost) / c;
            p = trial;
            (jtj, jtr, c) = normal_equations(model, samples, &p);
            lambda = (lambda / 3.0).max(1e-12);
            if decrease < opts.tolerance {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    LmOutcome { params: p, cost: c, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;

    impl Model for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, p: &[f64], x: [f64; 2], grad: Option<&mut [f64]>) -> f64 {
            if let Some(g) = grad {
                g[0] = x[0];
                g[1] = 1.0;
            }
            p[0] * x[0] + p[1]
        }
        fn project(&self, p: &mut [f64]) {
            p[1] = p[1].max(0.0);
        }
    }

    #[test]
    fn fits_line_and_respects_bounds() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample {
                x: [i as f64, 0.0],
                y: 2.0 * i as f64 + 3.0,
            })
            .collect();
        let opts = LmOptions {
            max_iters: 100,
            tolerance: 1e-14,
        };
        let out = levenberg_marquardt(&Line, &samples, &[0.0, 0.0], opts);
        assert!((out.params[0] - 2.0).abs() < 1e-8);
        assert!((out.params[1] - 3.0).abs() < 1e-8);
        assert!(out.iterations < opts.max_iters);

        let shifted: Vec<Sample> = samples.iter().map(|s| Sample { x: s.x, y: s.y - 10.0 }).collect();
        let out = levenberg_marquardt(&Line, &shifted, &[0.0, 0.0], opts);
        assert_eq!(out.params[1], 0.0);
    }
}

//! Weighted logistic regression by Newton's method.
//!
//! Columns are standardized with weighted moments before fitting; columns
//! with zero weighted variance are dropped and get a zero coefficient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// L2 penalty on the standardized slopes.
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty used when the first fit does not converge.
    pub fallback_ridge: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { ridge: 1e-6, tol: 1e-8, max_iter: 100, fallback_ridge: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fit came from the stronger fallback penalty.
    pub warning: bool,
}

impl LogisticFit {
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weight-normalized negative log-likelihood plus `ridge/2 * |slopes|^2`.
/// `params[0]` is the intercept.
pub fn logistic_objective(x: &Matrix, y: &[f64], w: &[f64], ridge: f64, params: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mut nll = 0.0;
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let z = params[0] + x.row(i).iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>();
        // -[y z - log(1 + e^z)]
        nll += w[i] * (softplus(z) - y[i] * z);
    }
    nll / sw + 0.5 * ridge * params[1..].iter().map(|b| b * b).sum::<f64>()
}

pub fn logistic_gradient(x: &Matrix, y: &[f64], w: &[f64], ridge: f64, params: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    let mut g = vec![0.0; params.len()];
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let row = x.row(i);
        let z = params[0] + row.iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>();
        let r = w[i] * (sigmoid(z) - y[i]) / sw;
        g[0] += r;
        for (gj, xj) in g[1..].iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    for (gj, b) in g[1..].iter_mut().zip(&params[1..]) {
        *gj += ridge * b;
    }
    g
}

pub fn fit_logistic(x: &Matrix, y: &[f64], w: &[f64]) -> LogisticFit {
    fit_logistic_with(x, y, w, &LogisticOptions::default())
}

pub fn fit_logistic_with(x: &Matrix, y: &[f64], w: &[f64], opts: &LogisticOptions) -> LogisticFit {
    let first = newton(x, y, w, opts.ridge, opts);
    if first.converged {
        return first;
    }
    let mut fb = newton(x, y, w, opts.fallback_ridge, opts);
    fb.warning = true;
    fb
}

fn newton(x: &Matrix, y: &[f64], w: &[f64], ridge: f64, opts: &LogisticOptions) -> LogisticFit {
    let p = x.cols();
    let sw: f64 = w.iter().sum();
    assert!(sw > 0.0, "all weights are zero");

    // Weighted standardization over rows with positive weight.
    let support: Vec<usize> = (0..x.rows()).filter(|&i| w[i] > 0.0).collect();
    let mut mean = vec![0.0; p];
    for &i in &support {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += w[i] * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= sw);
    let mut var = vec![0.0; p];
    for &i in &support {
        for (j, v) in x.row(i).iter().enumerate() {
            var[j] += w[i] * (v - mean[j]).powi(2);
        }
    }
    let keep: Vec<usize> = (0..p).filter(|&j| var[j] / sw > 1e-24).collect();
    let scale: Vec<f64> = keep.iter().map(|&j| (var[j] / sw).sqrt()).collect();
    let q = keep.len();
    let mut zrows = Vec::with_capacity(support.len());
    for &i in &support {
        let row = x.row(i);
        zrows.push(keep.iter().zip(&scale).map(|(&j, s)| (row[j] - mean[j]) / s).collect::<Vec<_>>());
    }
    let z = Matrix::from_rows(&zrows, q);
    let ys: Vec<f64> = support.iter().map(|&i| y[i]).collect();
    let ws: Vec<f64> = support.iter().map(|&i| w[i]).collect();

    let mut params = vec![0.0; q + 1];
    let ybar = ys.iter().zip(&ws).map(|(a, b)| a * b).sum::<f64>() / sw;
    params[0] = (ybar.clamp(1e-6, 1.0 - 1e-6) / (1.0 - ybar.clamp(1e-6, 1.0 - 1e-6))).ln();
    let mut converged = false;
    let mut iterations = 0;
    let mut obj = logistic_objective(&z, &ys, &ws, ridge, &params);
    while iterations < opts.max_iter {
        iterations += 1;
        let g = logistic_gradient(&z, &ys, &ws, ridge, &params);
        let mut h = DMatrix::<f64>::zeros(q + 1, q + 1);
        for r in 0..z.rows() {
            let row = z.row(r);
            let eta = params[0] + row.iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>();
            let pr = sigmoid(eta);
            let s = ws[r] * pr * (1.0 - pr) / sw;
            if s == 0.0 {
                continue;
            }
            h[(0, 0)] += s;
            for a in 0..q {
                let sa = s * row[a];
                h[(0, a + 1)] += sa;
                for b in a..q {
                    h[(a + 1, b + 1)] += sa * row[b];
                }
            }
        }
        for a in 0..=q {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        h[(0, 0)] += 1e-12;
        for a in 1..=q {
            h[(a, a)] += ridge;
        }
        let gv = DVector::from_vec(g);
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&gv),
            None => match h.lu().solve(&gv) {
                Some(s) => s,
                None => break,
            },
        };
        // Backtracking keeps every iteration a descent step.
        let mut t = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
            let o = logistic_objective(&z, &ys, &ws, ridge, &next);
            if o <= obj + 1e-15 || t < 1e-10 {
                obj = o;
                break;
            }
            t *= 0.5;
        }
        let change = params.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        params = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    // Back to the raw feature scale.
    let mut coef = vec![0.0; p];
    let mut intercept = params[0];
    for (k, &j) in keep.iter().enumerate() {
        coef[j] = params[k + 1] / scale[k];
        intercept -= coef[j] * mean[j];
    }
    LogisticFit { intercept, coef, iterations, converged, warning: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_feature_balanced_labels() {
        let x = Matrix::from_rows(&[vec![3.0], vec![3.0], vec![3.0], vec![3.0]], 1);
        let fit = fit_logistic(&x, &[0.0, 1.0, 0.0, 1.0], &[1.0; 4]);
        assert!(fit.converged);
        assert_eq!(fit.coef, vec![0.0]);
        for i in 0..4 {
            assert!((fit.predict(x.row(i)) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows, 3);
        let y: Vec<f64> = (0..40).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..2.0)).collect();
        let params = [0.3, -0.7, 1.1, 0.2];
        let g = logistic_gradient(&x, &y, &w, 1e-6, &params);
        let h = 1e-6;
        for j in 0..4 {
            let (mut a, mut b) = (params, params);
            a[j] += h;
            b[j] -= h;
            let fd = (logistic_objective(&x, &y, &w, 1e-6, &a) - logistic_objective(&x, &y, &w, 1e-6, &b)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-4, "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn recovers_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..10.0)]).collect();
        let y: Vec<f64> =
            rows.iter().map(|r| (rng.random::<f64>() < sigmoid(-0.5 + 1.5 * r[0] + 0.1 * r[1])) as u8 as f64).collect();
        let fit = fit_logistic(&Matrix::from_rows(&rows, 2), &y, &vec![1.0; n]);
        assert!(fit.converged);
        assert!((fit.intercept + 0.5).abs() < 0.15, "{fit:?}");
        assert!((fit.coef[0] - 1.5).abs() < 0.1);
        assert!((fit.coef[1] - 0.1).abs() < 0.03);
    }

    #[test]
    fn two_point_fit_approaches_labels_monotonically() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0], vec![0.3], vec![-0.2]], 1);
        let y = [0.0, 1.0, 0.0, 1.0];
        let w = [1.0, 1.0, 0.0, 0.0];
        let mut prev = (0.5, 0.5);
        for it in 1..=12 {
            let opts = LogisticOptions { max_iter: it, fallback_ridge: 1e-6, ..Default::default() };
            let f = newton(&x, &y, &w, opts.ridge, &opts);
            let (p0, p1) = (f.predict(x.row(0)), f.predict(x.row(1)));
            assert!(p0 <= prev.0 + 1e-15 && p1 >= prev.1 - 1e-15, "iteration {it}");
            prev = (p0, p1);
        }
        assert!(prev.0 < 0.01 && prev.1 > 0.99);
    }

    #[test]
    fn weights_matter() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0]], 1);
        let fit = fit_logistic(&x, &[1.0, 0.0, 0.0], &[3.0, 1.0, 0.0]);
        assert!((fit.predict(&[0.0]) - 0.75).abs() < 1e-9);
    }
}

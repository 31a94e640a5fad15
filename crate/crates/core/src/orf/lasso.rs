//! Weighted lasso by cyclic coordinate descent.
//!
//! Minimizes `1/2 * sum (w_i / sum w) (y_i - b0 - x_i.b)^2 + lambda * |b|_1`.
//! The intercept is profiled out by weighted centering, and sweeps run on the
//! weighted Gram matrix so each coordinate update is O(p).

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tol: 1e-8, max_sweeps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

fn soft_threshold(z: f64, l: f64) -> f64 {
    if z > l {
        z - l
    } else if z < -l {
        z + l
    } else {
        0.0
    }
}

pub fn lasso_objective(x: &Matrix, y: &[f64], w: &[f64], lambda: f64, intercept: f64, coef: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mut loss = 0.0;
    for i in 0..x.rows() {
        let r = y[i] - intercept - x.row(i).iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
        loss += w[i] * r * r;
    }
    0.5 * loss / sw + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Gradient of the smooth part with respect to the slopes.
pub fn lasso_gradient(x: &Matrix, y: &[f64], w: &[f64], intercept: f64, coef: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    let mut g = vec![0.0; coef.len()];
    for i in 0..x.rows() {
        let row = x.row(i);
        let r = y[i] - intercept - row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
        for (gj, v) in g.iter_mut().zip(row) {
            *gj -= w[i] * r * v / sw;
        }
    }
    g
}

pub fn fit_lasso(x: &Matrix, y: &[f64], w: &[f64], lambda: f64) -> LassoFit {
    fit_lasso_with(x, y, w, lambda, &LassoOptions::default())
}

pub fn fit_lasso_with(x: &Matrix, y: &[f64], w: &[f64], lambda: f64, opts: &LassoOptions) -> LassoFit {
    let p = x.cols();
    let sw: f64 = w.iter().sum();
    assert!(sw > 0.0, "all weights are zero");
    let support: Vec<usize> = (0..x.rows()).filter(|&i| w[i] > 0.0).collect();

    let mut xm = vec![0.0; p];
    let mut ym = 0.0;
    for &i in &support {
        let a = w[i] / sw;
        ym += a * y[i];
        for (m, v) in xm.iter_mut().zip(x.row(i)) {
            *m += a * v;
        }
    }
    // Weighted Gram G = Xc' W Xc / sw and c = Xc' W yc / sw.
    let mut gram = vec![0.0; p * p];
    let mut c = vec![0.0; p];
    let mut yy = 0.0;
    let mut xc = vec![0.0; p];
    for &i in &support {
        let a = w[i] / sw;
        let yc = y[i] - ym;
        yy += a * yc * yc;
        for (j, v) in x.row(i).iter().enumerate() {
            xc[j] = v - xm[j];
        }
        for j in 0..p {
            let aj = a * xc[j];
            if aj == 0.0 {
                continue;
            }
            c[j] += aj * yc;
            for k in j..p {
                gram[j * p + k] += aj * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            gram[j * p + k] = gram[k * p + j];
        }
    }

    let objective = |b: &[f64]| -> f64 {
        let mut quad = 0.0;
        for j in 0..p {
            if b[j] == 0.0 {
                continue;
            }
            let row = &gram[j * p..(j + 1) * p];
            quad += b[j] * row.iter().zip(b).map(|(g, bk)| g * bk).sum::<f64>();
        }
        let lin: f64 = c.iter().zip(b).map(|(a, b)| a * b).sum();
        0.5 * (yy - 2.0 * lin + quad) + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
    };

    let mut b = vec![0.0; p];
    // gb[j] = (G b)_j, maintained incrementally.
    let mut gb = vec![0.0; p];
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let gjj = gram[j * p + j];
            if gjj <= 1e-14 {
                continue;
            }
            let rho = c[j] - gb[j] + gjj * b[j];
            let nb = soft_threshold(rho, lambda) / gjj;
            let d = nb - b[j];
            if d != 0.0 {
                for k in 0..p {
                    gb[k] += gram[k * p + j] * d;
                }
                b[j] = nb;
                max_change = max_change.max(d.abs());
            }
        }
        trace.push(objective(&b));
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    let intercept = ym - xm.iter().zip(&b).map(|(m, v)| m * v).sum::<f64>();
    LassoFit { intercept, coef: b, sweeps, converged, objective_trace: trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn large_lambda_gives_weighted_mean() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 0.0], vec![3.0, 5.0]], 2);
        let y = [1.0, 2.0, 6.0];
        let w = [1.0, 1.0, 2.0];
        let fit = fit_lasso(&x, &y, &w, 1e6);
        assert_eq!(fit.coef, vec![0.0, 0.0]);
        assert!((fit.intercept - 15.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_interpolates_two_points() {
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]], 1);
        let fit = fit_lasso(&x, &[2.0, 8.0], &[1.0, 1.0], 0.0);
        assert!((fit.coef[0] - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kkt_and_monotone_objective() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = 60;
            let p = 8;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let x = Matrix::from_rows(&rows, p);
            let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[3] + rng.random_range(-0.5..0.5)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let lambda = rng.random_range(0.001..0.3);
            let fit = fit_lasso(&x, &y, &w, lambda);
            assert!(fit.converged);
            for pair in fit.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12);
            }
            let g = lasso_gradient(&x, &y, &w, fit.intercept, &fit.coef);
            for (gj, bj) in g.iter().zip(&fit.coef) {
                if *bj != 0.0 {
                    assert!((gj + lambda * bj.signum()).abs() < 1e-6);
                } else {
                    assert!(gj.abs() <= lambda + 1e-6);
                }
            }
            let direct = lasso_objective(&x, &y, &w, lambda, fit.intercept, &fit.coef);
            assert!((direct - fit.objective_trace.last().unwrap()).abs() < 1e-9);
        }
    }
}

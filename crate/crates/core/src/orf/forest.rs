use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lasso::{fit_lasso, LassoFit};
use super::logistic::{fit_logistic, LogisticFit};
use super::tree::{fit_tree, CausalTree};
use super::{residual_slope, EffectEstimate, OrfError, OrfHyperparams, PROPENSITY_CLIP, Z_95};
use crate::features::{EncodedDataset, Split};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Train even when the positivity diagnostic flags the data.
    pub override_positivity: bool,
    pub positivity_band: (f64, f64),
    /// Largest accepted fraction of propensities outside the band.
    pub max_outside: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { override_positivity: false, positivity_band: PROPENSITY_CLIP, max_outside: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub lo: f64,
    pub hi: f64,
    pub fraction_outside: f64,
    pub p01: f64,
    pub p99: f64,
    pub flagged: bool,
}

impl PositivityReport {
    pub fn to_lines(&self) -> String {
        format!(
            "band=[{}, {}]\nfraction_outside={}\np01={}\np99={}\nflagged={}\n",
            self.lo, self.hi, self.fraction_outside, self.p01, self.p99, self.flagged
        )
    }
}

/// Overlap diagnostic over fitted propensities. Percentiles use the nearest
/// rank on the sorted values.
pub fn check_positivity(propensities: &[f64], lo: f64, hi: f64, max_outside: f64) -> PositivityReport {
    let n = propensities.len().max(1);
    let outside = propensities.iter().filter(|g| **g < lo || **g > hi).count();
    let mut sorted = propensities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = |q: f64| -> f64 {
        if sorted.is_empty() {
            return f64::NAN;
        }
        let r = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[r - 1]
    };
    let fraction_outside = outside as f64 / n as f64;
    PositivityReport {
        lo,
        hi,
        fraction_outside,
        p01: rank(0.01),
        p99: rank(0.99),
        flagged: fraction_outside > max_outside,
    }
}

/// Fitted forest together with the training rows it weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrfModel {
    pub hyperparams: OrfHyperparams,
    pub dictionary_hash: String,
    pub feature_names: Vec<String>,
    pub train_x: Matrix,
    pub train_t: Vec<f64>,
    pub train_y: Vec<f64>,
    pub propensity: LogisticFit,
    pub outcome: LassoFit,
    pub positivity: PositivityReport,
    /// SHA-256 over the training rows.
    pub fingerprint: String,
    pub trees: Vec<CausalTree>,
}

fn fingerprint(x: &Matrix, t: &[f64], y: &[f64]) -> String {
    let mut h = Sha256::new();
    for i in 0..x.rows() {
        for v in x.row(i) {
            h.update(v.to_le_bytes());
        }
        h.update(t[i].to_le_bytes());
        h.update(y[i].to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Fits the forest on the training split of `data`.
pub fn fit_forest(data: &EncodedDataset, hp: &OrfHyperparams, opts: &FitOptions) -> Result<OrfModel, OrfError> {
    let train = data.subset(Split::Train);
    fit_forest_rows(
        &train.x,
        &train.t,
        &train.y,
        data.dictionary.hash(),
        data.dictionary.names().map(String::from).collect(),
        hp,
        opts,
    )
}

/// Fits the forest on explicit rows (all of them are training rows).
pub fn fit_forest_rows(
    x: &Matrix,
    t: &[f64],
    y: &[f64],
    dictionary_hash: String,
    feature_names: Vec<String>,
    hp: &OrfHyperparams,
    opts: &FitOptions,
) -> Result<OrfModel, OrfError> {
    let n = x.rows();
    let treated = t.iter().filter(|v| **v > 0.5).count();
    if treated == 0 {
        return Err(OrfError::InsufficientOverlap("treated"));
    }
    if treated == n {
        return Err(OrfError::InsufficientOverlap("control"));
    }
    hp.validate(n)?;

    let ones = vec![1.0; n];
    let propensity = fit_logistic(x, t, &ones);
    let mut outcome = fit_lasso(x, y, &ones, hp.lambda_reg);
    outcome.objective_trace.clear();
    let ghat: Vec<f64> = (0..n).map(|i| propensity.predict(x.row(i))).collect();
    let (lo, hi) = opts.positivity_band;
    let positivity = check_positivity(&ghat, lo, hi, opts.max_outside);
    if positivity.flagged && !opts.override_positivity {
        return Err(OrfError::PositivityViolation { fraction: positivity.fraction_outside, lo, hi });
    }
    let rt: Vec<f64> = (0..n).map(|i| t[i] - ghat[i].clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)).collect();
    let ry: Vec<f64> = (0..n).map(|i| y[i] - outcome.predict(x.row(i))).collect();

    let trees: Vec<CausalTree> = (0..hp.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::stream(hp.seed, k as u64);
            fit_tree(x, t, &ry, &rt, hp, &mut rng)
        })
        .collect();
    tracing::debug!(trees = trees.len(), rows = n, "forest fitted");

    Ok(OrfModel {
        hyperparams: hp.clone(),
        dictionary_hash,
        feature_names,
        fingerprint: fingerprint(x, t, y),
        train_x: x.clone(),
        train_t: t.to_vec(),
        train_y: y.to_vec(),
        propensity,
        outcome,
        positivity,
        trees,
    })
}

impl OrfModel {
    pub fn n_features(&self) -> usize {
        self.train_x.cols()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), OrfError> {
        if x.len() != self.n_features() {
            return Err(OrfError::DimensionMismatch { got: x.len(), want: self.n_features() });
        }
        Ok(())
    }

    fn accumulate(&self, trees: &[CausalTree], x: &[f64], dense: &mut [f64]) {
        let share = 1.0 / trees.len() as f64;
        for tree in trees {
            let leaf = tree.leaf(x);
            let each = share / leaf.len() as f64;
            for &i in leaf {
                dense[i as usize] += each;
            }
        }
    }

    /// Forest kernel over training rows, as (row, weight) pairs with positive
    /// weight, sorted by row.
    pub fn kernel_weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>, OrfError> {
        self.check_dim(x)?;
        let mut dense = vec![0.0; self.train_x.rows()];
        self.accumulate(&self.trees, x, &mut dense);
        Ok(dense.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect())
    }

    /// Global (untargeted) propensity.
    pub fn global_propensity(&self, x: &[f64]) -> f64 {
        self.propensity.predict(x)
    }

    pub fn estimate_effect(&self, x: &[f64]) -> Result<EffectEstimate, OrfError> {
        let kernel = self.kernel_weights(x)?;
        let rows: Vec<usize> = kernel.iter().map(|(i, _)| *i).collect();
        let w: Vec<f64> = kernel.iter().map(|(_, w)| *w).collect();
        let treated = rows.iter().filter(|&&i| self.train_t[i] > 0.5).count();
        if treated == 0 || treated == rows.len() {
            return Err(OrfError::DegenerateKernel);
        }

        // Local nuisance refits on the kernel support.
        let xs = self.train_x.select_rows(&rows);
        let ts: Vec<f64> = rows.iter().map(|&i| self.train_t[i]).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| self.train_y[i]).collect();
        let g = fit_logistic(&xs, &ts, &w);
        let f = fit_lasso(&xs, &ys, &w, self.hyperparams.lambda_reg);
        let mut rt = Vec::with_capacity(rows.len());
        let mut ry = Vec::with_capacity(rows.len());
        for k in 0..rows.len() {
            let row = xs.row(k);
            rt.push(ts[k] - g.predict(row).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1));
            ry.push(ys[k] - f.predict(row));
        }
        let theta = residual_slope(&w, &ry, &rt).ok_or(OrfError::DegenerateKernel)?;

        // Little bags: contiguous groups of trees, each giving its own kernel
        // over the same local residuals.
        let groups = self.hyperparams.bootstrap_groups.clamp(1, self.trees.len());
        let mut pos = vec![usize::MAX; self.train_x.rows()];
        for (k, &i) in rows.iter().enumerate() {
            pos[i] = k;
        }
        let mut bag_thetas = Vec::with_capacity(groups);
        let mut dense = vec![0.0; self.train_x.rows()];
        for gi in 0..groups {
            let a = gi * self.trees.len() / groups;
            let b = (gi + 1) * self.trees.len() / groups;
            dense.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate(&self.trees[a..b], x, &mut dense);
            let mut bw = vec![0.0; rows.len()];
            for (i, v) in dense.iter().enumerate() {
                if *v > 0.0 {
                    bw[pos[i]] = *v;
                }
            }
            if let Some(th) = residual_slope(&bw, &ry, &rt) {
                bag_thetas.push(th);
            }
        }
        let half = if bag_thetas.len() >= 2 {
            let m = bag_thetas.iter().sum::<f64>() / bag_thetas.len() as f64;
            let var = bag_thetas.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (bag_thetas.len() - 1) as f64;
            Z_95 * var.sqrt() / (bag_thetas.len() as f64).sqrt()
        } else {
            0.0
        };
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        Ok(EffectEstimate { theta, ci_low: theta - half, ci_high: theta + half, kernel_effective_n: ess })
    }

    /// Estimates for many rows in parallel; order follows the input.
    pub fn estimate_many(&self, x: &Matrix) -> Vec<Result<EffectEstimate, OrfError>> {
        (0..x.rows()).into_par_iter().map(|i| self.estimate_effect(x.row(i))).collect()
    }
}

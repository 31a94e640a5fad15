//! Sensitivity of the average effect to an unobserved confounder.
//!
//! A hypothetical confounder `U` moves the treatment probability from
//! `g(x)` to `g̃ ~ Beta(g·(1/α − 1), (1 − g)·(1/α − 1))` and shifts the
//! outcome by `δ·(g̃ − g)`. Then `Var(g̃ | x) = α·g·(1 − g)`, the naive
//! contrast adjusted for `g` is off by exactly `α·δ`, and `E[Var(g̃ | T, x)] = α(1 − α)·g(1 − g)`,
//! so the confounder explains a share
//!
//! ```text
//! R² = δ²·α(1 − α)·E[g(1 − g)] / E[(Y − Q(T, X))²]
//! ```
//!
//! of the outcome residual variance. Eliminating δ,
//! `bias² = α/(1 − α) · R² · E[(Y − Q)²] / E[g(1 − g)]`. The frontier is the
//! set of `(α, R²)` pairs that produce a given bias.
//!
//! Observed covariate groups are placed on the same axes by refitting the
//! nuisance models without them and comparing held-out quality on the
//! validation split.

mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EncodedDataset, Split};
use crate::matrix::Matrix;
use crate::orf::{fit_lasso, fit_logistic, OrfError, OrfModel, PROPENSITY_CLIP};

pub use report::{FRONTIER_CSV, POINTS_CSV, SENSITIVITY_JSON};

/// Number of points on the alpha grid, `alpha_i = (i + 1) / (ALPHA_GRID + 1)`.
pub const ALPHA_GRID: usize = 100;
/// Width of the final bisection bracket on the partial R².
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("target bias {target} exceeds the largest inducible bias {max}")]
    FrontierUndefined { target: f64, max: f64 },
    #[error("target bias must be a non-zero finite number, got {0}")]
    TargetBias(f64),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("unknown covariate group `{0}`")]
    UnknownGroup(String),
    #[error("no effect estimate available for the automatic target")]
    NoEstimates,
    #[error(transparent)]
    Orf(#[from] OrfError),
    #[error("report file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fit and held-out rows for the nuisance refits.
#[derive(Debug, Clone)]
pub struct SensitivityData {
    pub train_x: Matrix,
    pub train_t: Vec<f64>,
    pub train_y: Vec<f64>,
    pub valid_x: Matrix,
    pub valid_t: Vec<f64>,
    pub valid_y: Vec<f64>,
    pub lambda: f64,
}

impl SensitivityData {
    pub fn from_dataset(data: &EncodedDataset, lambda: f64) -> Result<Self, SensitivityError> {
        let train = data.subset(Split::Train);
        let valid = data.subset(Split::Validation);
        if train.rows() == 0 {
            return Err(SensitivityError::EmptySplit("train"));
        }
        if valid.rows() == 0 {
            return Err(SensitivityError::EmptySplit("validation"));
        }
        Ok(SensitivityData {
            train_x: train.x,
            train_t: train.t,
            train_y: train.y,
            valid_x: valid.x,
            valid_t: valid.t,
            valid_y: valid.y,
            lambda,
        })
    }
}

/// Held-out quality of the two nuisance models on a column subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceQuality {
    /// Mean squared error of the propensity model.
    pub brier: f64,
    /// Mean squared error of the outcome model `Y ~ X + T`.
    pub mse: f64,
    /// Mean of `g(1 − g)` over the held-out rows.
    pub mean_g_var: f64,
}

fn with_treatment(x: &Matrix, cols: &[usize], t: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), cols.len() + 1);
    for i in 0..x.rows() {
        for (k, &j) in cols.iter().enumerate() {
            out.set(i, k, x.get(i, j));
        }
        out.set(i, cols.len(), t[i]);
    }
    out
}

/// Refits both nuisances on `cols` (train split) and scores them on the
/// validation split.
pub fn nuisance_quality(data: &SensitivityData, cols: &[usize]) -> NuisanceQuality {
    let ones = vec![1.0; data.train_x.rows()];
    let g = fit_logistic(&data.train_x.select_cols(cols), &data.train_t, &ones);
    let q = fit_lasso(&with_treatment(&data.train_x, cols, &data.train_t), &data.train_y, &ones, data.lambda);
    let vx = data.valid_x.select_cols(cols);
    let vq = with_treatment(&data.valid_x, cols, &data.valid_t);
    let n = data.valid_x.rows() as f64;
    let (mut brier, mut mse, mut gv) = (0.0, 0.0, 0.0);
    for i in 0..data.valid_x.rows() {
        let p = g.predict(vx.row(i)).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
        brier += (data.valid_t[i] - p).powi(2);
        gv += p * (1.0 - p);
        mse += (data.valid_y[i] - q.predict(vq.row(i))).powi(2);
    }
    NuisanceQuality { brier: brier / n, mse: mse / n, mean_g_var: gv / n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub covariate_group: String,
    pub alpha: f64,
    pub partial_r2: f64,
}

/// Influence of a group of columns, measured against the full model.
pub fn covariate_influence(
    data: &SensitivityData,
    full: &NuisanceQuality,
    group: &str,
    cols: &[usize],
) -> SensitivityPoint {
    let keep: Vec<usize> = (0..data.train_x.cols()).filter(|j| !cols.contains(j)).collect();
    let without = nuisance_quality(data, &keep);
    influence_between(group, full, &without)
}

fn influence_between(group: &str, full: &NuisanceQuality, without: &NuisanceQuality) -> SensitivityPoint {
    let ratio = |a: f64, b: f64| if b > 0.0 { (1.0 - a / b).max(0.0) } else { 0.0 };
    SensitivityPoint {
        covariate_group: group.to_string(),
        alpha: ratio(full.brier, without.brier).min(1.0 - f64::EPSILON),
        partial_r2: ratio(full.mse, without.mse).min(1.0 - f64::EPSILON),
    }
}

/// The two moments the confounding model needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingScale {
    pub mean_g_var: f64,
    pub residual_mse: f64,
}

impl ConfoundingScale {
    pub fn from_quality(q: &NuisanceQuality) -> Self {
        ConfoundingScale { mean_g_var: q.mean_g_var, residual_mse: q.mse }
    }

    /// Bias induced by a confounder with treatment influence `alpha` and
    /// partial R² `r2`.
    pub fn bias(&self, alpha: f64, r2: f64) -> f64 {
        if alpha <= 0.0 || r2 <= 0.0 {
            return 0.0;
        }
        if alpha >= 1.0 {
            return f64::INFINITY;
        }
        (alpha / (1.0 - alpha) * r2 * self.residual_mse / self.mean_g_var).sqrt()
    }

    /// Largest bias reachable on the alpha grid with `r2 → 1`.
    pub fn max_bias(&self) -> f64 {
        self.bias(ALPHA_GRID as f64 / (ALPHA_GRID + 1) as f64, 1.0)
    }

    /// Partial R² needed at `alpha` to induce `target`; `None` when no value
    /// below 1 suffices.
    pub fn required_r2(&self, alpha: f64, target: f64) -> Option<f64> {
        let target = target.abs();
        if alpha <= 0.0 || self.bias(alpha, 1.0) <= target {
            return None;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.bias(alpha, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub alpha: f64,
    pub partial_r2: f64,
}

/// Frontier on the alpha grid. Grid points that would need `R² ≥ 1` are
/// omitted.
pub fn bias_frontier(target: f64, scale: &ConfoundingScale) -> Result<Vec<FrontierPoint>, SensitivityError> {
    if !target.is_finite() || target == 0.0 {
        return Err(SensitivityError::TargetBias(target));
    }
    let max = scale.max_bias();
    if target.abs() >= max {
        return Err(SensitivityError::FrontierUndefined { target: target.abs(), max });
    }
    Ok((0..ALPHA_GRID)
        .map(|i| (i + 1) as f64 / (ALPHA_GRID + 1) as f64)
        .filter_map(|alpha| scale.required_r2(alpha, target).map(|partial_r2| FrontierPoint { alpha, partial_r2 }))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Robust,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Bias in days the frontier is drawn for (absolute value).
    pub target_bias: f64,
    pub scale: ConfoundingScale,
    pub frontier: Vec<FrontierPoint>,
    pub points: Vec<SensitivityPoint>,
    pub verdict: Verdict,
}

impl SensitivityReport {
    pub fn build(
        target: f64,
        scale: ConfoundingScale,
        points: Vec<SensitivityPoint>,
    ) -> Result<Self, SensitivityError> {
        let frontier = bias_frontier(target, &scale)?;
        let mut r = SensitivityReport { target_bias: target.abs(), scale, frontier, points, verdict: Verdict::Robust };
        r.verdict = if r.points.iter().all(|p| r.is_below(p)) { Verdict::Robust } else { Verdict::Sensitive };
        Ok(r)
    }

    /// Strictly below the frontier at the point's own alpha.
    pub fn is_below(&self, p: &SensitivityPoint) -> bool {
        match self.scale.required_r2(p.alpha, self.target_bias) {
            Some(r2) => p.partial_r2 < r2,
            None => true,
        }
    }

    /// Adds a point and updates the verdict.
    pub fn push_point(&mut self, p: SensitivityPoint) {
        if !self.is_below(&p) {
            self.verdict = Verdict::Sensitive;
        }
        self.points.push(p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetBias {
    /// Mean of the estimated effects on the validation split.
    Auto,
    Days(f64),
}

/// Full analysis: frontier for the target bias plus one point per source
/// attribute of the feature dictionary.
pub fn analyze(
    data: &EncodedDataset,
    model: &OrfModel,
    target: TargetBias,
) -> Result<SensitivityReport, SensitivityError> {
    let sd = SensitivityData::from_dataset(data, model.hyperparams.lambda_reg)?;
    let target = match target {
        TargetBias::Days(d) => d,
        TargetBias::Auto => {
            let est: Vec<f64> =
                model.estimate_many(&sd.valid_x).into_iter().filter_map(|r| r.ok().map(|e| e.theta)).collect();
            if est.is_empty() {
                return Err(SensitivityError::NoEstimates);
            }
            est.iter().sum::<f64>() / est.len() as f64
        }
    };
    let all: Vec<usize> = (0..sd.train_x.cols()).collect();
    let full = nuisance_quality(&sd, &all);
    let groups = data.dictionary.groups();
    let points = {
        use rayon::prelude::*;
        groups.par_iter().map(|(name, cols)| covariate_influence(&sd, &full, name, cols)).collect()
    };
    SensitivityReport::build(target, ConfoundingScale::from_quality(&full), points)
}

/// Influence point of one source attribute, for callers that already hold
/// the dataset.
pub fn group_influence(data: &EncodedDataset, lambda: f64, group: &str) -> Result<SensitivityPoint, SensitivityError> {
    let cols = data
        .dictionary
        .groups()
        .into_iter()
        .find(|(s, _)| s == group)
        .map(|(_, c)| c)
        .ok_or_else(|| SensitivityError::UnknownGroup(group.to_string()))?;
    let sd = SensitivityData::from_dataset(data, lambda)?;
    let full = nuisance_quality(&sd, &(0..sd.train_x.cols()).collect::<Vec<_>>());
    Ok(covariate_influence(&sd, &full, group, &cols))
}

//! Orthogonal random forest.
//!
//! Honest causal trees partition the covariate space; the forest turns the
//! leaves that contain a target point into kernel weights over training rows.
//! Around the target, propensity (logistic) and outcome (lasso) nuisances
//! are refit with those weights and the effect is the weighted
//! residual-on-residual slope
//!
//! ```text
//! theta(x) = sum w (Y - Yhat)(T - That) / sum w (T - That)^2
//! ```

mod forest;
mod lasso;
mod logistic;
mod persist;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{check_positivity, fit_forest, fit_forest_rows, FitOptions, OrfModel, PositivityReport};
pub use lasso::{fit_lasso, fit_lasso_with, lasso_gradient, lasso_objective, LassoFit, LassoOptions};
pub use logistic::{
    fit_logistic, fit_logistic_with, logistic_gradient, logistic_objective, LogisticFit, LogisticOptions,
};
pub use persist::{MODEL_FORMAT, MODEL_MAGIC};
pub use tree::{best_split, fit_tree, CausalTree, Node, SplitCandidate};

/// Propensities are clipped into this band before residualizing.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
/// Smallest denominator accepted by the residual-on-residual slope.
pub const MIN_DENOMINATOR: f64 = 1e-10;
/// Two-sided normal quantile used for confidence intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum OrfError {
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("training split lacks {0} rows")]
    InsufficientOverlap(&'static str),
    #[error("positivity check failed: {:.1}% of propensities outside [{lo}, {hi}]", fraction * 100.0)]
    PositivityViolation { fraction: f64, lo: f64, hi: f64 },
    #[error("kernel has no local treatment variation")]
    DegenerateKernel,
    #[error("feature vector has {got} values, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("model dictionary hash {found} does not match encoder {expected}")]
    DictionaryMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrfHyperparams {
    pub n_trees: usize,
    pub min_leaf_size: usize,
    pub max_depth: usize,
    /// Fraction of training rows drawn (without replacement) per tree.
    pub subsample_ratio: f64,
    pub lambda_reg: f64,
    pub honest: bool,
    pub bootstrap_groups: usize,
    pub seed: u64,
}

impl Default for OrfHyperparams {
    fn default() -> Self {
        OrfHyperparams {
            n_trees: 200,
            min_leaf_size: 20,
            max_depth: 30,
            subsample_ratio: 0.4,
            lambda_reg: 0.01,
            honest: true,
            bootstrap_groups: 20,
            seed: 0,
        }
    }
}

impl OrfHyperparams {
    pub fn validate(&self, n: usize) -> Result<(), OrfError> {
        let bad = |m: String| Err(OrfError::Hyperparams(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if self.min_leaf_size < 2 {
            return bad("min_leaf_size must be at least 2".into());
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return bad(format!("subsample_ratio {} outside (0, 1]", self.subsample_ratio));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return bad(format!("lambda_reg {} must be a finite value >= 0", self.lambda_reg));
        }
        if self.bootstrap_groups == 0 || self.bootstrap_groups > self.n_trees {
            return bad(format!("bootstrap_groups {} must be in [1, n_trees]", self.bootstrap_groups));
        }
        let draw = (self.subsample_ratio * n as f64).floor() as usize;
        if draw < 2 * self.min_leaf_size {
            return bad(format!(
                "subsample of {draw} rows is smaller than twice min_leaf_size ({})",
                self.min_leaf_size
            ));
        }
        Ok(())
    }
}

/// Effect estimate at one point, in days. Negative values shorten cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub theta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Inverse of the sum of squared kernel weights.
    pub kernel_effective_n: f64,
}

/// Residual-on-residual slope with weights. `None` when the denominator is
/// below [`MIN_DENOMINATOR`].
pub fn residual_slope(w: &[f64], ry: &[f64], rt: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..w.len() {
        num += w[i] * ry[i] * rt[i];
        den += w[i] * rt[i] * rt[i];
    }
    (den >= MIN_DENOMINATOR).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_slope_by_hand() {
        let theta = residual_slope(&[0.5, 0.5], &[1.0, -1.0], &[0.5, -0.5]).unwrap();
        assert_eq!(theta, 2.0);
    }

    #[test]
    fn zero_treatment_residual_is_degenerate() {
        assert!(residual_slope(&[0.5, 0.5], &[1.0, 3.0], &[0.0, 0.0]).is_none());
    }

    #[test]
    fn hyperparam_checks() {
        let hp = OrfHyperparams::default();
        assert!(hp.validate(10_000).is_ok());
        assert!(hp.validate(50).is_err());
        assert!(OrfHyperparams { n_trees: 0, ..hp.clone() }.validate(10_000).is_err());
        assert!(OrfHyperparams { min_leaf_size: 1, ..hp.clone() }.validate(10_000).is_err());
        assert!(OrfHyperparams { subsample_ratio: 0.0, ..hp }.validate(10_000).is_err());
    }
}

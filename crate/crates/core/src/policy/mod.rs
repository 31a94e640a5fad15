//! Qini and net-value curves, and treatment-policy selection.
//!
//! Cases are ranked by ascending estimated effect, so the largest expected
//! cycle-time reduction comes first. For the top `n` percent of that
//! ranking, with `R` the summed outcome and `N` the count per arm,
//!
//! ```text
//! Qini(n) = R_control * N_treated / N_control - R_treated
//! gain(n) = v * Qini(n) - c * N_treated
//! ```

mod net;
mod qini;
mod report;

use thiserror::Error;

pub use net::{
    net_value_curve, select_policy, CostModel, NetPoint, NetValueCurve, Policy, PolicyKind, SelectedBy, Selection,
};
pub use qini::{
    grid, group_size, permutation_test, qini_curve, qini_curve_ordered, qini_value, PermutationTest, QiniCurve,
    QiniInput, QiniPoint,
};
pub use report::{evaluate, EvaluationReport, CURVES_CSV, REPORT_JSON};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("test set is all treated or all control")]
    NoVariation,
    #[error("input vectors differ in length")]
    LengthMismatch,
    #[error("grid step {0} outside (0, 100]")]
    Grid(f64),
    #[error("invalid cost model: {0}")]
    Cost(String),
    #[error("no grid point reaches a gain of {0}")]
    TargetUnreachable(f64),
    #[error("net-value curve is empty")]
    EmptyCurve,
    #[error("policy: {0}")]
    Invalid(String),
    #[error("report file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

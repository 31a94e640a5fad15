use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{net_value_curve, CostModel, NetValueCurve};
use super::qini::{permutation_test, qini_curve, PermutationTest, QiniCurve, QiniInput};
use super::PolicyError;

pub const CURVES_CSV: &str = "curves.csv";
pub const REPORT_JSON: &str = "report.json";

/// Everything the evaluation step emits; serialized for the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub grid_step: f64,
    pub n_cases: usize,
    /// Cases without an estimate (degenerate kernel), left out of the curves.
    pub abstained: Vec<String>,
    pub curve: QiniCurve,
    /// One curve per `v/c` ratio, each with `c = 1`.
    pub net_curves: Vec<NetValueCurve>,
    pub fraction_on_or_above: f64,
    /// `above` when the Qini coefficient is positive.
    pub verdict: String,
    pub permutation: Option<PermutationTest>,
    pub ci_method: String,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_percent,cases,n_treated,n_control,qini,baseline,flagged,boundary_theta");
        for nc in &self.net_curves {
            let _ = write!(s, ",gain@vc={}", nc.cost.v / nc.cost.c);
        }
        s.push('\n');
        for (i, p) in self.curve.points.iter().enumerate() {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                p.n_percent,
                p.cases,
                p.n_treated,
                p.n_control,
                p.qini,
                p.baseline,
                p.flagged,
                p.boundary_theta.map(|v| v.to_string()).unwrap_or_default()
            );
            for nc in &self.net_curves {
                let _ = write!(s, ",{}", nc.points[i].gain);
            }
            s.push('\n');
        }
        s
    }

    pub fn curve_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let r: EvaluationReport = serde_json::from_str(text).map_err(|e| PolicyError::Format(e.to_string()))?;
        if r.curve.points.is_empty() || r.net_curves.iter().any(|n| n.points.len() != r.curve.points.len()) {
            return Err(PolicyError::Format("curve lengths disagree".into()));
        }
        Ok(r)
    }

    pub fn save(&self, dir: &Path) -> Result<(), PolicyError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CURVES_CSV), self.to_csv())?;
        std::fs::write(dir.join(REPORT_JSON), self.to_json())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PolicyError> {
        EvaluationReport::from_json(&std::fs::read_to_string(dir.join(REPORT_JSON))?)
    }

    /// Net-value curve for an arbitrary cost model on this report's Qini
    /// curve.
    pub fn net_curve(&self, cost: &CostModel) -> Result<NetValueCurve, PolicyError> {
        net_value_curve(&self.curve, cost)
    }
}

/// Builds curves from per-case estimates. `theta[i] = None` marks an
/// abstention. `permutations = 0` skips the permutation test.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    case_ids: &[String],
    theta: &[Option<f64>],
    treated: &[bool],
    y: &[f64],
    vc_grid: &[f64],
    grid_step: f64,
    permutations: usize,
    seed: u64,
) -> Result<EvaluationReport, PolicyError> {
    let n = case_ids.len();
    if theta.len() != n || treated.len() != n || y.len() != n {
        return Err(PolicyError::LengthMismatch);
    }
    let keep: Vec<usize> = (0..n).filter(|&i| theta[i].is_some()).collect();
    let abstained = (0..n).filter(|&i| theta[i].is_none()).map(|i| case_ids[i].clone()).collect();
    let input = QiniInput::new(
        keep.iter().map(|&i| case_ids[i].clone()).collect(),
        keep.iter().map(|&i| theta[i].unwrap()).collect(),
        keep.iter().map(|&i| treated[i]).collect(),
        keep.iter().map(|&i| y[i]).collect(),
    )?;
    let curve = qini_curve(&input, grid_step)?;
    let net_curves =
        vc_grid.iter().map(|r| net_value_curve(&curve, &CostModel::from_ratio(*r)?)).collect::<Result<Vec<_>, _>>()?;
    let permutation =
        if permutations > 0 { Some(permutation_test(&input, grid_step, permutations, seed)?) } else { None };
    Ok(EvaluationReport {
        grid_step,
        n_cases: keep.len(),
        abstained,
        fraction_on_or_above: curve.fraction_on_or_above(),
        verdict: if curve.coefficient > 0.0 { "above" } else { "below" }.to_string(),
        curve,
        net_curves,
        permutation,
        ci_method: "95% normal approximation over tree bags".to_string(),
    })
}

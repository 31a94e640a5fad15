use std::fmt::Write as _;
use std::path::Path;

use super::{SensitivityError, SensitivityReport};

pub const FRONTIER_CSV: &str = "frontier.csv";
pub const POINTS_CSV: &str = "points.csv";
pub const SENSITIVITY_JSON: &str = "sensitivity.json";

impl SensitivityReport {
    pub fn frontier_csv(&self) -> String {
        let mut s = String::from("alpha,partial_r2\n");
        for p in &self.frontier {
            let _ = writeln!(s, "{},{}", p.alpha, p.partial_r2);
        }
        s
    }

    pub fn points_csv(&self) -> String {
        let mut s = String::from("covariate_group,alpha,partial_r2,below_frontier\n");
        for p in &self.points {
            let name = if p.covariate_group.contains([',', '"', '\n']) {
                format!("\"{}\"", p.covariate_group.replace('"', "\"\""))
            } else {
                p.covariate_group.clone()
            };
            let _ = writeln!(s, "{name},{},{},{}", p.alpha, p.partial_r2, self.is_below(p));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SensitivityError> {
        let r: SensitivityReport = serde_json::from_str(text).map_err(|e| SensitivityError::Format(e.to_string()))?;
        if !(r.target_bias.is_finite() && r.target_bias > 0.0) {
            return Err(SensitivityError::Format("target_bias must be positive".into()));
        }
        Ok(r)
    }

    pub fn save(&self, dir: &Path) -> Result<(), SensitivityError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(FRONTIER_CSV), self.frontier_csv())?;
        std::fs::write(dir.join(POINTS_CSV), self.points_csv())?;
        std::fs::write(dir.join(SENSITIVITY_JSON), self.to_json())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SensitivityError> {
        SensitivityReport::from_json(&std::fs::read_to_string(dir.join(SENSITIVITY_JSON))?)
    }
}

#[cfg(test)]
mod tests {
    use crate::sensitivity::{ConfoundingScale, SensitivityPoint, SensitivityReport};

    #[test]
    fn files_round_trip() {
        let scale = ConfoundingScale { mean_g_var: 0.21, residual_mse: 4.0 };
        let pts = vec![SensitivityPoint { covariate_group: "a,b".into(), alpha: 0.05, partial_r2: 0.01 }];
        let r = SensitivityReport::build(0.7, scale, pts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path()).unwrap();
        assert_eq!(SensitivityReport::load(dir.path()).unwrap(), r);
        let csv = std::fs::read_to_string(dir.path().join(super::POINTS_CSV)).unwrap();
        assert!(csv.contains("\"a,b\",0.05,0.01,true"));
        let fr = std::fs::read_to_string(dir.path().join(super::FRONTIER_CSV)).unwrap();
        assert_eq!(fr.lines().count(), r.frontier.len() + 1);
    }
}

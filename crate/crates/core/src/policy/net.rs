use serde::{Deserialize, Serialize};

use super::qini::QiniCurve;
use super::PolicyError;

/// `v`: value of one day of cycle-time reduction; `c`: cost of treating one
/// case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub v: f64,
    pub c: f64,
}

impl CostModel {
    pub fn new(v: f64, c: f64) -> Result<Self, PolicyError> {
        let m = CostModel { v, c };
        m.validate()?;
        Ok(m)
    }

    /// Cost model with ratio `v/c = ratio` and unit cost.
    pub fn from_ratio(ratio: f64) -> Result<Self, PolicyError> {
        CostModel::new(ratio, 1.0)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(PolicyError::Cost(format!("v must be positive, got {}", self.v)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(PolicyError::Cost(format!("c must be non-negative, got {}", self.c)));
        }
        Ok(())
    }

    /// Expected net gain of treating one case with effect `theta`.
    pub fn case_gain(&self, theta: f64) -> f64 {
        self.v * (-theta) - self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPoint {
    pub n_percent: f64,
    pub gain: f64,
    pub n_treated: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetValueCurve {
    pub cost: CostModel,
    pub points: Vec<NetPoint>,
}

pub fn net_value_curve(curve: &QiniCurve, cost: &CostModel) -> Result<NetValueCurve, PolicyError> {
    cost.validate()?;
    let points = curve
        .points
        .iter()
        .map(|p| NetPoint {
            n_percent: p.n_percent,
            gain: cost.v * p.qini - cost.c * p.n_treated as f64,
            n_treated: p.n_treated,
            flagged: p.flagged,
        })
        .collect();
    Ok(NetValueCurve { cost: *cost, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TopFraction,
    EffectThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectedBy {
    Auto,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Largest gain; ties go to the smallest n.
    Auto,
    /// Smallest n whose gain reaches the target.
    TargetGain(f64),
}

/// A committed treatment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub version: u64,
    pub kind: PolicyKind,
    /// Share of cases to treat, in [0, 1].
    pub top_fraction: f64,
    /// Treat cases whose estimate is at most this value; `None` treats
    /// nobody.
    pub theta_threshold: Option<f64>,
    pub cost: CostModel,
    pub selected_by: SelectedBy,
    pub target_gain: Option<f64>,
    /// Gain on the evaluation curve at the selected point.
    pub expected_gain: f64,
    pub curve_hash: String,
}

impl Policy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        self.cost.validate()?;
        if !(0.0..=1.0).contains(&self.top_fraction) {
            return Err(PolicyError::Invalid(format!("top_fraction {} outside [0, 1]", self.top_fraction)));
        }
        if let Some(t) = self.theta_threshold {
            if !t.is_finite() {
                return Err(PolicyError::Invalid("theta_threshold is not finite".into()));
            }
        }
        Ok(())
    }

    /// Online decision: treat when the estimate clears the effect threshold
    /// and the single-case gain is positive.
    pub fn decide(&self, theta: f64) -> bool {
        match self.theta_threshold {
            Some(th) => theta <= th && self.cost.case_gain(theta) > 0.0,
            None => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Policy, PolicyError> {
        let p: Policy = serde_json::from_str(text).map_err(|e| PolicyError::Format(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Picks a grid point on the net-value curve and converts it to a policy.
/// Carried-forward points are never selected.
pub fn select_policy(
    net: &NetValueCurve,
    curve: &QiniCurve,
    selection: Selection,
    selected_by: SelectedBy,
    curve_hash: &str,
) -> Result<Policy, PolicyError> {
    if net.points.is_empty() || net.points.len() != curve.points.len() {
        return Err(PolicyError::EmptyCurve);
    }
    let eligible = net.points.iter().enumerate().filter(|(_, p)| !p.flagged);
    let chosen = match selection {
        Selection::Auto => {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in eligible {
                if best.is_none_or(|(_, g)| p.gain > g) {
                    best = Some((i, p.gain));
                }
            }
            best.ok_or(PolicyError::EmptyCurve)?.0
        }
        Selection::TargetGain(g) => {
            eligible.into_iter().find(|(_, p)| p.gain >= g).ok_or(PolicyError::TargetUnreachable(g))?.0
        }
    };
    let point = &curve.points[chosen];
    Ok(Policy {
        version: 0,
        kind: PolicyKind::TopFraction,
        top_fraction: point.n_percent / 100.0,
        theta_threshold: point.boundary_theta,
        cost: net.cost,
        selected_by,
        target_gain: match selection {
            Selection::TargetGain(g) => Some(g),
            Selection::Auto => None,
        },
        expected_gain: net.points[chosen].gain,
        curve_hash: curve_hash.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::qini::{qini_curve, QiniInput};

    fn curve_with_gains(gains: &[f64]) -> (NetValueCurve, QiniCurve) {
        // Curve with c = 0 and v = 1 so gain = qini.
        let n = gains.len();
        let step = 100.0 / (n - 1) as f64;
        let ids: Vec<String> = (0..n * 2).map(|i| format!("c{i:02}")).collect();
        let theta: Vec<f64> = (0..n * 2).map(|i| i as f64 - 100.0).collect();
        let t: Vec<bool> = (0..n * 2).map(|i| i % 2 == 0).collect();
        let mut curve = qini_curve(&QiniInput::new(ids, theta, t, vec![1.0; n * 2]).unwrap(), step).unwrap();
        for (p, g) in curve.points.iter_mut().zip(gains) {
            p.qini = *g;
            p.flagged = false;
        }
        let net = net_value_curve(&curve, &CostModel::new(1.0, 0.0).unwrap()).unwrap();
        (net, curve)
    }

    #[test]
    fn hand_gain() {
        let (_, mut curve) = curve_with_gains(&[0.0, 10.0]);
        curve.points[1].qini = 10.0;
        curve.points[1].n_treated = 1;
        let net = net_value_curve(&curve, &CostModel::new(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(net.points[1].gain, 8.0);
    }

    #[test]
    fn unimodal_peak_and_monotone() {
        let mut gains: Vec<f64> = (0..=10).map(|i| -((i as f64) - 7.0).powi(2) + 49.0).collect();
        let (net, curve) = curve_with_gains(&gains);
        let p = select_policy(&net, &curve, Selection::Auto, SelectedBy::Auto, "h").unwrap();
        assert!((p.top_fraction - 0.7).abs() < 1e-12);
        gains = (0..=10).map(|i| i as f64).collect();
        let (net, curve) = curve_with_gains(&gains);
        assert_eq!(select_policy(&net, &curve, Selection::Auto, SelectedBy::Auto, "h").unwrap().top_fraction, 1.0);
    }

    #[test]
    fn ties_go_to_smallest_n_and_targets() {
        let (net, curve) = curve_with_gains(&[0.0, 5.0, 9.0, 9.0, 2.0]);
        let p = select_policy(&net, &curve, Selection::Auto, SelectedBy::Auto, "h").unwrap();
        assert_eq!(p.top_fraction, 0.5);
        let q = select_policy(&net, &curve, Selection::TargetGain(4.0), SelectedBy::User, "h").unwrap();
        assert_eq!(q.top_fraction, 0.25);
        assert!(matches!(
            select_policy(&net, &curve, Selection::TargetGain(10.0), SelectedBy::User, "h"),
            Err(PolicyError::TargetUnreachable(_))
        ));
    }

    #[test]
    fn all_negative_treats_nobody() {
        let (net, curve) = curve_with_gains(&[0.0, -1.0, -3.0]);
        let p = select_policy(&net, &curve, Selection::Auto, SelectedBy::Auto, "h").unwrap();
        assert_eq!((p.top_fraction, p.theta_threshold), (0.0, None));
        assert!(!p.decide(-100.0));
    }

    #[test]
    fn decision_rule() {
        let mut p = curve_with_gains(&[0.0, 1.0]).0;
        p.cost = CostModel::new(1.0, 2.0).unwrap();
        let policy = Policy {
            version: 1,
            kind: PolicyKind::EffectThreshold,
            top_fraction: 0.5,
            theta_threshold: Some(-1.0),
            cost: p.cost,
            selected_by: SelectedBy::User,
            target_gain: None,
            expected_gain: 0.0,
            curve_hash: String::new(),
        };
        assert_eq!(policy.cost.case_gain(-10.0), 8.0);
        assert!(policy.decide(-10.0));
        assert!(!policy.decide(1.0));
        // Clears the threshold but the case gain is negative.
        assert!(!policy.decide(-1.5));
        let back = Policy::from_json(&policy.to_json()).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn scaling_costs_scales_gains() {
        let (_, curve) = curve_with_gains(&[0.0, 4.0, 7.0, 3.0]);
        let a = net_value_curve(&curve, &CostModel::new(1.0, 0.5).unwrap()).unwrap();
        let b = net_value_curve(&curve, &CostModel::new(3.0, 1.5).unwrap()).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((q.gain - 3.0 * p.gain).abs() < 1e-12);
        }
    }
}

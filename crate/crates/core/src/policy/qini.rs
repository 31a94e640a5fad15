use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::seed;

/// Per-case inputs of a Qini evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiniInput {
    pub case_ids: Vec<String>,
    /// Estimated effects (days).
    pub theta: Vec<f64>,
    pub treated: Vec<bool>,
    /// Observed cycle times (days).
    pub y: Vec<f64>,
}

impl QiniInput {
    pub fn new(case_ids: Vec<String>, theta: Vec<f64>, treated: Vec<bool>, y: Vec<f64>) -> Result<Self, PolicyError> {
        let n = case_ids.len();
        if theta.len() != n || treated.len() != n || y.len() != n {
            return Err(PolicyError::LengthMismatch);
        }
        Ok(QiniInput { case_ids, theta, treated, y })
    }

    pub fn len(&self) -> usize {
        self.case_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_ids.is_empty()
    }

    /// Ascending order by estimated effect, ties by case id.
    pub fn ordering(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.theta[a].total_cmp(&self.theta[b]).then_with(|| self.case_ids[a].cmp(&self.case_ids[b]))
        });
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiniPoint {
    pub n_percent: f64,
    /// Number of cases in the top-n group.
    pub cases: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub r_treated: f64,
    pub r_control: f64,
    pub qini: f64,
    pub baseline: f64,
    /// Effect estimate of the last case in the group (none at n = 0).
    pub boundary_theta: Option<f64>,
    /// True when one subgroup is empty and `qini` was carried forward.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiniCurve {
    pub grid_step: f64,
    pub n_cases: usize,
    pub points: Vec<QiniPoint>,
    /// Trapezoid area between the curve and the baseline, in day-percent.
    pub area: f64,
    /// `area` divided by the grid span (100).
    pub coefficient: f64,
}

impl QiniCurve {
    /// Share of grid points where the curve is on or above the baseline.
    pub fn fraction_on_or_above(&self) -> f64 {
        let ok = self.points.iter().filter(|p| p.qini >= p.baseline).count();
        ok as f64 / self.points.len() as f64
    }
}

/// Percent values 0, step, 2*step, ... and always 100.
pub fn grid(step: f64) -> Result<Vec<f64>, PolicyError> {
    if !(step > 0.0 && step <= 100.0) {
        return Err(PolicyError::Grid(step));
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let n = k as f64 * step;
        if n >= 100.0 - 1e-9 {
            break;
        }
        out.push(n);
        k += 1;
    }
    out.push(100.0);
    Ok(out)
}

/// Group size for `n` percent of `total` cases.
pub fn group_size(n_percent: f64, total: usize) -> usize {
    ((n_percent * total as f64 / 100.0).round() as usize).min(total)
}

/// The Qini formula for one group.
pub fn qini_value(r_treated: f64, r_control: f64, n_treated: usize, n_control: usize) -> f64 {
    r_control * (n_treated as f64 / n_control as f64) - r_treated
}

pub fn qini_curve(input: &QiniInput, grid_step: f64) -> Result<QiniCurve, PolicyError> {
    qini_curve_ordered(input, &input.ordering(), grid_step)
}

/// Qini curve for an explicit ordering of the cases.
pub fn qini_curve_ordered(input: &QiniInput, order: &[usize], grid_step: f64) -> Result<QiniCurve, PolicyError> {
    let total = input.len();
    let n_t = input.treated.iter().filter(|t| **t).count();
    if total == 0 || n_t == 0 || n_t == total {
        return Err(PolicyError::NoVariation);
    }
    let grid = grid(grid_step)?;
    // Running sums along the ordering.
    let mut cum = Vec::with_capacity(total + 1);
    cum.push((0usize, 0usize, 0.0f64, 0.0f64));
    for &i in order {
        let (nt, nc, rt, rc) = *cum.last().unwrap();
        cum.push(if input.treated[i] { (nt + 1, nc, rt + input.y[i], rc) } else { (nt, nc + 1, rt, rc + input.y[i]) });
    }
    let (nt, nc, rt, rc) = cum[total];
    let q100 = qini_value(rt, rc, nt, nc);

    let mut points = Vec::with_capacity(grid.len());
    let mut last = 0.0;
    for &n in &grid {
        let m = group_size(n, total);
        let (nt, nc, rt, rc) = cum[m];
        let (qini, flagged) = if m == 0 {
            (0.0, false)
        } else if nt == 0 || nc == 0 {
            (last, true)
        } else {
            (qini_value(rt, rc, nt, nc), false)
        };
        last = qini;
        points.push(QiniPoint {
            n_percent: n,
            cases: m,
            n_treated: nt,
            n_control: nc,
            r_treated: rt,
            r_control: rc,
            qini,
            baseline: q100 * n / 100.0,
            boundary_theta: (m > 0).then(|| input.theta[order[m - 1]]),
            flagged,
        });
    }
    let mut area = 0.0;
    for w in points.windows(2) {
        let d0 = w[0].qini - w[0].baseline;
        let d1 = w[1].qini - w[1].baseline;
        area += 0.5 * (d0 + d1) * (w[1].n_percent - w[0].n_percent);
    }
    Ok(QiniCurve { grid_step, n_cases: total, points, area, coefficient: area / 100.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub permutations: usize,
    pub exceed: usize,
    pub p_value: f64,
    pub null_mean: f64,
    pub null_std: f64,
}

/// Compares the observed coefficient with coefficients of random orderings.
/// `p = (1 + #{null >= observed}) / (1 + permutations)`.
pub fn permutation_test(
    input: &QiniInput,
    grid_step: f64,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest, PolicyError> {
    let observed = qini_curve(input, grid_step)?.coefficient;
    let mut rng = seed::stream_for(seed, "qini-permutation");
    let mut order: Vec<usize> = (0..input.len()).collect();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        null.push(qini_curve_ordered(input, &order, grid_step)?.coefficient);
    }
    let exceed = null.iter().filter(|v| **v >= observed).count();
    let k = null.len().max(1) as f64;
    let mean = null.iter().sum::<f64>() / k;
    let std = (null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0)).sqrt();
    Ok(PermutationTest {
        observed,
        permutations,
        exceed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        null_mean: mean,
        null_std: std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn input(theta: &[f64], treated: &[bool], y: &[f64]) -> QiniInput {
        let ids = (0..theta.len()).map(|i| format!("c{i:03}")).collect();
        QiniInput::new(ids, theta.to_vec(), treated.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn half_point_by_hand() {
        // A: treated, Y=10; B: control, Y=20; C, D rank after them.
        let q = input(&[-3.0, -2.0, 1.0, 2.0], &[true, false, true, false], &[10.0, 20.0, 5.0, 5.0]);
        let c = qini_curve(&q, 50.0).unwrap();
        assert_eq!(c.points[1].n_percent, 50.0);
        assert_eq!(c.points[1].qini, 10.0);
        assert_eq!(c.points[0].qini, 0.0);
    }

    #[test]
    fn undefined_points_carry_forward() {
        let q = input(&[-3.0, -2.0, 1.0, 2.0], &[true, true, false, false], &[1.0, 2.0, 3.0, 4.0]);
        let c = qini_curve(&q, 25.0).unwrap();
        assert!(c.points[1].flagged && c.points[2].flagged);
        assert_eq!(c.points[1].qini, 0.0);
        assert!(!c.points[3].flagged);
        assert_eq!(c.points[3].qini, 3.0 * 2.0 - 3.0);
    }

    #[test]
    fn no_variation_rejected() {
        let q = input(&[1.0, 2.0], &[true, true], &[1.0, 2.0]);
        assert!(matches!(qini_curve(&q, 1.0), Err(PolicyError::NoVariation)));
    }

    #[test]
    fn endpoint_independent_of_order_and_ranks_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..30.0)).collect();
        let a = qini_curve(&input(&theta, &t, &y), 1.0).unwrap();
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        let b = qini_curve(&input(&neg, &t, &y), 1.0).unwrap();
        assert!((a.points.last().unwrap().qini - b.points.last().unwrap().qini).abs() < 1e-9);
        let mono: Vec<f64> = theta.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let c = qini_curve(&input(&mono, &t, &y), 1.0).unwrap();
        let key = |c: &QiniCurve| c.points.iter().map(|p| (p.qini, p.n_treated, p.flagged)).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&c));
        let scaled: Vec<f64> = y.iter().map(|v| v * 4.0).collect();
        let d = qini_curve(&input(&theta, &t, &scaled), 1.0).unwrap();
        for (p, q) in a.points.iter().zip(&d.points) {
            assert!((q.qini - 4.0 * p.qini).abs() < 1e-9 * (1.0 + p.qini.abs()));
        }
    }

    #[test]
    fn grid_includes_endpoints() {
        assert_eq!(grid(30.0).unwrap(), vec![0.0, 30.0, 60.0, 90.0, 100.0]);
        assert_eq!(grid(1.0).unwrap().len(), 101);
        assert!(grid(0.0).is_err());
    }

    #[test]
    fn permutation_p_value_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        // Effect -10x: ordering by the true effect should be significant.
        let y: Vec<f64> =
            (0..n).map(|i| 20.0 - 10.0 * x[i] * t[i] as u8 as f64 + rng.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = x.iter().map(|v| -v).collect();
        let r = permutation_test(&input(&theta, &t, &y), 1.0, 200, 1).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
        assert_eq!(r.p_value, (1 + r.exceed) as f64 / 201.0);
    }
}

//! Synthetic event logs with known causal ground truth.
//!
//! A [`SyntheticSpec`] is a small key-value document:
//!
//! ```text
//! n_cases = 5000
//! seed = 7
//! feature.x1 = uniform(0, 1)
//! feature.w = normal(0, 1)
//! feature.channel = categorical(web:0.7, phone:0.3)
//! effect = -5 - 10*x1              # days
//! baseline = 30 + 4*w + 2*is(channel,phone)
//! propensity = 1.5*w               # logit, clipped to [0.02, 0.98]
//! noise_y = 2
//! hidden.strength_t = 0            # unobserved N(0,1) confounder
//! hidden.strength_y = 0
//! ```
//!
//! Expressions are sums of `c`, `c*f`, `c*hinge(f,k)` (= c·max(0, f−k)),
//! `c*step(f,k)` (= c·1[f>k]) and `c*is(f,value)`.
//!
//! Optional keys: `start_activity`, `end_activity`, `treatment_activity`,
//! `post_activity`, `activities`, `resources`, `start_date`,
//! `arrivals_per_day`, `mean_gap_days`, `max_fillers`, `noise_t`.

mod generate;
mod spec;

use thiserror::Error;

pub use generate::{
    generate, mapping_for, oracle_best, oracle_policy_gain, read_truth, realized_gain, write_output, write_truth,
    SyntheticOutput, TruthRow, LOG_DIR, LOG_FILE, MAPPING_FILE, PROPENSITY_BOUNDS, TRUTH_DIR, TRUTH_FILE,
};
pub use spec::{Basis, Distribution, Expr, SyntheticSpec, Term};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Log(#[from] crate::event_log::EventLogError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::parse_csv_reader;
    use crate::policy::CostModel;

    const SPEC: &str = "n_cases = 3000\nseed = 4\nfeature.x1 = uniform(0,1)\nfeature.w = normal(0,1)\n\
                        effect = -5 - 10*x1\nbaseline = 30 + 4*w\npropensity = 1.5*w\nnoise_y = 2\n";

    #[test]
    fn consistency_and_bounds() {
        let out = generate(&SyntheticSpec::parse(SPEC).unwrap()).unwrap();
        assert_eq!(out.log.traces.len(), 3000);
        for (tr, gt) in out.log.traces.iter().zip(&out.truth) {
            assert_eq!(tr.case_id, gt.case_id);
            assert_eq!(tr.duration_days(), gt.observed());
            assert_eq!(tr.first_position("Treat").is_some(), gt.t);
            assert!((0.02..=0.98).contains(&gt.propensity));
            assert!(gt.y0 > 0.0 && gt.y1 > 0.0);
        }
        let mean_theta = out.truth.iter().map(|r| r.theta).sum::<f64>() / 3000.0;
        assert!((mean_theta + 10.0).abs() < 0.2, "{mean_theta}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec::parse(SPEC).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_output(&generate(&spec).unwrap(), a.path()).unwrap();
        write_output(&generate(&spec).unwrap(), b.path()).unwrap();
        for f in [format!("{LOG_DIR}/{LOG_FILE}"), format!("{TRUTH_DIR}/{TRUTH_FILE}")] {
            assert_eq!(std::fs::read(a.path().join(&f)).unwrap(), std::fs::read(b.path().join(&f)).unwrap());
        }
    }

    #[test]
    fn log_round_trips_through_csv() {
        let spec = SyntheticSpec::parse(&SPEC.replace("3000", "50")).unwrap();
        let out = generate(&spec).unwrap();
        let mut buf = Vec::new();
        crate::event_log::write_csv(&out.log, &out.mapping, &mut buf).unwrap();
        let parsed = parse_csv_reader(buf.as_slice(), &out.mapping).unwrap();
        assert!(parsed.defects.is_empty());
        assert_eq!(parsed.log.traces.len(), 50);
        for (a, b) in parsed.log.traces.iter().zip(&out.log.traces) {
            assert_eq!(a.case_attributes, b.case_attributes);
            assert_eq!(a.events.len(), b.events.len());
            assert!(a
                .events
                .iter()
                .zip(&b.events)
                .all(|(x, y)| x.activity == y.activity && x.timestamp == y.timestamp));
        }
        let truth = read_truth(std::io::Cursor::new({
            let mut v = Vec::new();
            write_truth(&out.truth, &mut v).unwrap();
            v
        }))
        .unwrap();
        assert_eq!(truth, out.truth);
    }

    #[test]
    fn null_effect_oracle_treats_nobody() {
        let spec = SyntheticSpec::parse(&SPEC.replace("-5 - 10*x1", "0")).unwrap();
        let out = generate(&spec).unwrap();
        let cost = CostModel::new(1.0, 1.0).unwrap();
        assert_eq!(oracle_best(&out.truth, &cost, 1.0).0, 0.0);
        assert_eq!(oracle_policy_gain(&out.truth, &cost, 0.0), 0.0);
    }

    #[test]
    fn constant_effect_hand_gain() {
        let spec = SyntheticSpec::parse(&SPEC.replace("3000", "10").replace("-5 - 10*x1", "-5")).unwrap();
        let out = generate(&spec).unwrap();
        let g = oracle_policy_gain(&out.truth, &CostModel::new(1.0, 1.0).unwrap(), 100.0);
        assert!((g - 40.0).abs() < 1e-6, "{g}");
    }

    #[test]
    fn oracle_beats_other_orderings() {
        let out = generate(&SyntheticSpec::parse(&SPEC.replace("3000", "400")).unwrap()).unwrap();
        let cost = CostModel::new(1.0, 7.0).unwrap();
        for n in [10.0, 30.0, 50.0, 80.0] {
            let m = crate::policy::group_size(n, 400);
            let oracle = oracle_policy_gain(&out.truth, &cost, n);
            let arbitrary = realized_gain(&out.truth, 0..m, &cost);
            assert!(oracle >= arbitrary - 1e-9);
        }
    }

    #[test]
    fn hidden_confounder_biases_naive_contrast() {
        let spec = SyntheticSpec::parse(&format!(
            "{}hidden.strength_t = 1.5\nhidden.strength_y = 4\n",
            SPEC.replace("propensity = 1.5*w", "propensity = 0").replace("30 + 4*w", "40")
        ))
        .unwrap();
        let out = generate(&spec).unwrap();
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
        for r in &out.truth {
            if r.t {
                s1 += r.observed();
                n1 += 1.0;
            } else {
                s0 += r.observed();
                n0 += 1.0;
            }
        }
        let naive = s1 / n1 - s0 / n0;
        let truth = out.truth.iter().map(|r| r.theta).sum::<f64>() / out.truth.len() as f64;
        assert!((naive - truth).abs() > 2.0 * 2.0, "naive {naive} truth {truth}");
    }

    #[test]
    fn empirical_propensity_matches() {
        let spec = SyntheticSpec::parse(
            &SPEC
                .replace("3000", "20000")
                .replace("normal(0,1)", "categorical(a:1,b:1)")
                .replace("4*w", "4*is(w,b)")
                .replace("1.5*w", "1.5*is(w,b)"),
        )
        .unwrap();
        let out = generate(&spec).unwrap();
        for (value, p) in [("a", 0.5), ("b", 1.0 / (1.0 + (-1.5f64).exp()))] {
            let rows: Vec<_> = out
                .log
                .traces
                .iter()
                .zip(&out.truth)
                .filter(|(t, _)| t.case_attributes["w"] == crate::Value::Cat(value.into()))
                .collect();
            let n = rows.len() as f64;
            let share = rows.iter().filter(|(_, g)| g.t).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((share - p).abs() < 3.0 * se, "{value}: {share} vs {p}");
        }
    }
}

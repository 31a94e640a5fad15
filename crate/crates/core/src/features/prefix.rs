use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, FeatureError, Polarity, Split};
use crate::event_log::{Event, Trace, Value};
use crate::seed;
use crate::time::Timestamp;

const MAX_REDRAWS: usize = 100;

/// The events observed up to the decision point of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prefix {
    pub case_id: String,
    pub events: Vec<Event>,
    pub case_attributes: BTreeMap<String, Value>,
    pub k: usize,
    pub treated: bool,
    /// Cycle time of the full case, in days.
    pub outcome_days: f64,
    pub case_start: Timestamp,
}

impl Prefix {
    pub fn last_timestamp(&self) -> Timestamp {
        self.events.last().map(|e| e.timestamp).unwrap_or(self.case_start)
    }
}

/// Empirical distribution of decision points among traces where the
/// treatment activity occurs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KHistogram {
    counts: BTreeMap<usize, u64>,
}

impl KHistogram {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u64)>) -> Self {
        KHistogram { counts: counts.into_iter().filter(|(_, c)| *c > 0).collect() }
    }

    pub fn add(&mut self, k: usize) {
        *self.counts.entry(k).or_default() += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    /// Most frequent k; ties go to the smallest.
    pub fn mode(&self) -> Option<usize> {
        let best = self.counts.values().copied().max()?;
        self.counts.iter().find(|(_, c)| **c == best).map(|(k, _)| *k)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<usize> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let mut u = rng.random_range(0..total);
        for (k, c) in &self.counts {
            if u < *c {
                return Some(*k);
            }
            u -= c;
        }
        None
    }
}

/// Histogram of decision points over the given traces.
pub fn decision_histogram<'a>(traces: impl IntoIterator<Item = &'a Trace>, treatment: &str) -> KHistogram {
    let mut h = KHistogram::default();
    for t in traces {
        if let Some(p) = t.first_position(treatment) {
            if p >= 1 {
                h.add(p);
            }
        }
    }
    h
}

/// Cuts a trace at its decision point and labels it.
///
/// When the treatment activity occurs, the prefix ends just before its first
/// occurrence. Otherwise k is drawn from `histogram`, re-drawing values
/// outside `[1, n-1]` and falling back to the histogram mode.
pub fn label_and_cut(
    trace: &Trace,
    cfg: &EncoderConfig,
    seed: u64,
    histogram: &KHistogram,
) -> Result<Prefix, FeatureError> {
    let n = trace.len();
    if n < 2 {
        return Err(FeatureError::TraceTooShort(trace.case_id.clone()));
    }
    let (k, present) = match trace.first_position(&cfg.treatment_activity) {
        Some(0) => return Err(FeatureError::TreatmentAtStart(trace.case_id.clone())),
        Some(p) => (p, true),
        None => {
            let mut rng = seed::stream_for(seed, &trace.case_id);
            let mut k = None;
            for _ in 0..MAX_REDRAWS {
                let draw = histogram.sample(&mut rng).ok_or(FeatureError::EmptyHistogram)?;
                if (1..n).contains(&draw) {
                    k = Some(draw);
                    break;
                }
            }
            let k = match k {
                Some(k) => k,
                None => histogram.mode().ok_or(FeatureError::EmptyHistogram)?.min(n - 1).max(1),
            };
            (k, false)
        }
    };
    let treated = match cfg.polarity {
        Polarity::Presence => present,
        Polarity::Absence => !present,
    };
    Ok(Prefix {
        case_id: trace.case_id.clone(),
        events: trace.events[..k].to_vec(),
        case_attributes: trace.case_attributes.clone(),
        k,
        treated,
        outcome_days: trace.duration_days(),
        case_start: trace.start(),
    })
}

/// 60/20/20 split by case start time; ties broken by case id.
pub fn temporal_split<'a>(cases: impl IntoIterator<Item = (&'a str, Timestamp)>) -> HashMap<String, Split> {
    let mut order: Vec<(Timestamp, &str)> = cases.into_iter().map(|(c, t)| (t, c)).collect();
    order.sort();
    let n = order.len();
    let n_train = n * 3 / 5;
    let n_train_val = n * 4 / 5;
    order
        .into_iter()
        .enumerate()
        .map(|(i, (_, c))| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train_val {
                Split::Validation
            } else {
                Split::Test
            };
            (c.to_string(), s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(acts: &[&str]) -> Trace {
        let t0 = Timestamp(1_600_000_000_000);
        let events = acts.iter().enumerate().map(|(i, a)| Event::new("c", *a, t0.plus_days(i as f64))).collect();
        Trace::new("c", events)
    }

    #[test]
    fn treated_prefix_ends_before_treatment() {
        let cfg = EncoderConfig::new("T");
        let p = label_and_cut(&trace(&["A", "B", "T"]), &cfg, 1, &KHistogram::default()).unwrap();
        assert_eq!((p.k, p.treated), (2, true));
        assert_eq!(p.outcome_days, 2.0);
    }

    #[test]
    fn untreated_k_from_degenerate_histogram() {
        let cfg = EncoderConfig::new("T");
        let h = KHistogram::from_counts([(2, 1)]);
        let p = label_and_cut(&trace(&["A", "B", "C", "D", "E"]), &cfg, 9, &h).unwrap();
        assert_eq!((p.k, p.treated), (2, false));
    }

    #[test]
    fn absence_polarity_inverts() {
        let mut cfg = EncoderConfig::new("T");
        cfg.polarity = Polarity::Absence;
        let h = KHistogram::from_counts([(1, 1)]);
        assert!(!label_and_cut(&trace(&["A", "T", "B"]), &cfg, 0, &h).unwrap().treated);
        assert!(label_and_cut(&trace(&["A", "B", "C"]), &cfg, 0, &h).unwrap().treated);
    }

    #[test]
    fn out_of_range_draws_fall_back_to_mode() {
        let cfg = EncoderConfig::new("T");
        // Every draw exceeds n-1 = 2, so k = min(mode, n-1).
        let h = KHistogram::from_counts([(5, 3), (7, 1)]);
        let p = label_and_cut(&trace(&["A", "B", "C"]), &cfg, 3, &h).unwrap();
        assert_eq!(p.k, 2);
    }

    #[test]
    fn short_and_malformed_traces() {
        let cfg = EncoderConfig::new("T");
        let h = KHistogram::from_counts([(1, 1)]);
        assert!(matches!(label_and_cut(&trace(&["A"]), &cfg, 0, &h), Err(FeatureError::TraceTooShort(_))));
        assert!(matches!(label_and_cut(&trace(&["T", "A"]), &cfg, 0, &h), Err(FeatureError::TreatmentAtStart(_))));
        assert!(matches!(
            label_and_cut(&trace(&["A", "B"]), &cfg, 0, &KHistogram::default()),
            Err(FeatureError::EmptyHistogram)
        ));
    }

    #[test]
    fn split_ten_cases() {
        let t0 = Timestamp(0);
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let split = temporal_split(ids.iter().enumerate().map(|(i, c)| (c.as_str(), Timestamp(t0.0 + 10 - i as i64))));
        let count = |s| split.values().filter(|v| **v == s).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (6, 2, 2));
        // Latest start (c0) lands in test, earliest (c9) in train.
        assert_eq!(split["c0"], Split::Test);
        assert_eq!(split["c9"], Split::Train);
    }

    #[test]
    fn split_ties_use_case_id() {
        let split = temporal_split([
            ("b", Timestamp(0)),
            ("a", Timestamp(0)),
            ("c", Timestamp(0)),
            ("d", Timestamp(0)),
            ("e", Timestamp(0)),
        ]);
        assert_eq!(split["a"], Split::Train);
        assert_eq!(split["e"], Split::Test);
    }
}

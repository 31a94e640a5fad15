use serde::{Deserialize, Serialize};

use super::Prefix;
use crate::event_log::{Event, EventLog};
use crate::time::Timestamp;

/// Per-event temporal fields, in encoding order.
pub const TIME_FIELDS: [&str; 5] = ["month", "weekday", "hour", "elapsed_days", "gap_days"];

/// Counts cases active at an instant: started at or before it and not
/// finished before it. Open cases have no end yet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveCaseIndex {
    starts: Vec<Timestamp>,
    ends: Vec<Timestamp>,
}

impl ActiveCaseIndex {
    pub fn from_log(log: &EventLog) -> Self {
        let mut idx = ActiveCaseIndex::default();
        for t in log.traces.iter().filter(|t| !t.is_empty()) {
            idx.starts.push(t.start());
            idx.ends.push(t.end());
        }
        idx.starts.sort();
        idx.ends.sort();
        idx
    }

    pub fn add_start(&mut self, t: Timestamp) {
        let pos = self.starts.partition_point(|s| *s <= t);
        self.starts.insert(pos, t);
    }

    pub fn add_end(&mut self, t: Timestamp) {
        let pos = self.ends.partition_point(|s| *s <= t);
        self.ends.insert(pos, t);
    }

    pub fn active_at(&self, t: Timestamp) -> usize {
        let started = self.starts.partition_point(|s| *s <= t);
        let finished = self.ends.partition_point(|e| *e < t);
        started.saturating_sub(finished)
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeredFeatures {
    /// One row per prefix event: month (1-12), weekday (Mon = 0), hour,
    /// days since case start, days since the previous event.
    pub per_event: Vec<[f64; 5]>,
    pub active_cases: f64,
    /// Case start relative to the earliest case of the log, in days.
    pub start_offset_days: f64,
}

pub fn engineer_features(prefix: &Prefix, context: &ActiveCaseIndex, origin: Timestamp) -> EngineeredFeatures {
    engineer_events(&prefix.events, prefix.case_start, context, origin)
}

pub(crate) fn engineer_events(
    events: &[Event],
    case_start: Timestamp,
    context: &ActiveCaseIndex,
    origin: Timestamp,
) -> EngineeredFeatures {
    let mut per_event = Vec::with_capacity(events.len());
    let mut prev = case_start;
    for e in events {
        let t = e.timestamp;
        per_event.push([
            t.month() as f64,
            t.weekday() as f64,
            t.hour() as f64,
            t.days_since(case_start),
            t.days_since(prev),
        ]);
        prev = t;
    }
    let last = events.last().map(|e| e.timestamp).unwrap_or(case_start);
    EngineeredFeatures {
        per_event,
        active_cases: context.active_at(last) as f64,
        start_offset_days: case_start.days_since(origin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{Schema, Trace};

    fn t(h: i64) -> Timestamp {
        Timestamp(1_577_836_800_000 + h * 3_600_000) // 2020-01-01T00:00Z
    }

    fn log(spans: &[(i64, i64)]) -> EventLog {
        let traces = spans
            .iter()
            .enumerate()
            .map(|(i, (s, e))| {
                let id = format!("c{i}");
                Trace::new(id.clone(), vec![Event::new(&id, "A", t(*s)), Event::new(&id, "B", t(*e))])
            })
            .collect();
        EventLog::new(traces, Schema::default())
    }

    fn brute_force(spans: &[(i64, i64)], at: i64) -> usize {
        spans.iter().filter(|(s, e)| *s <= at && at <= *e).count()
    }

    #[test]
    fn first_event_of_log() {
        let spans = [(0, 10), (5, 6), (20, 30)];
        let idx = ActiveCaseIndex::from_log(&log(&spans));
        let e = Event::new("c0", "A", t(0));
        let p = Prefix {
            case_id: "c0".into(),
            events: vec![e],
            case_attributes: Default::default(),
            k: 1,
            treated: false,
            outcome_days: 0.0,
            case_start: t(0),
        };
        let f = engineer_features(&p, &idx, t(0));
        assert_eq!(f.active_cases, 1.0);
        assert_eq!(f.start_offset_days, 0.0);
    }

    #[test]
    fn gap_in_days() {
        let idx = ActiveCaseIndex::default();
        let evs = vec![Event::new("c", "A", t(0)), Event::new("c", "B", t(36))];
        let f = engineer_events(&evs, t(0), &idx, t(0));
        assert_eq!(f.per_event[1][4], 1.5);
        assert_eq!(f.per_event[1][3], 1.5);
        // 2020-01-02 12:00 UTC is a Thursday.
        assert_eq!(&f.per_event[1][..3], &[1.0, 3.0, 12.0]);
    }

    #[test]
    fn active_count_matches_interval_scan() {
        let spans = [(0, 10), (2, 4), (3, 12), (4, 4), (11, 20), (12, 13)];
        let idx = ActiveCaseIndex::from_log(&log(&spans));
        for at in -1..22 {
            assert_eq!(idx.active_at(t(at)), brute_force(&spans, at), "at {at}");
        }
        // Three overlapping cases at hour 3.
        assert_eq!(idx.active_at(t(3)), 3);
    }

    #[test]
    fn incremental_index_agrees() {
        let spans = [(0, 10), (2, 4), (3, 12), (4, 4)];
        let batch = ActiveCaseIndex::from_log(&log(&spans));
        let mut inc = ActiveCaseIndex::default();
        for (s, e) in spans.iter().rev() {
            inc.add_start(t(*s));
            inc.add_end(t(*e));
        }
        assert_eq!(batch, inc);
    }
}

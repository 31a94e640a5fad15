use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{AttrKind, AttrLevel, EventLog, EventLogError, Trace, Value};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DedupMode {
    /// Traces sharing a case id are duplicates; the first is kept.
    #[default]
    CaseId,
    /// Traces with identical event sequences (ignoring the case id) are duplicates.
    EventSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    pub dedup: DedupMode,
    /// Drop exact repeats of an event within a trace.
    pub drop_duplicate_events: bool,
    /// When set, traces whose final activity is not listed are incomplete.
    pub completion_activities: Option<BTreeSet<String>>,
    /// Drop traces whose recorded order disagrees with their timestamps.
    pub drop_reordered: bool,
    /// Timestamps outside this window are treated as incorrect.
    pub valid_window: Option<(Timestamp, Timestamp)>,
    pub impute: bool,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            dedup: DedupMode::CaseId,
            drop_duplicate_events: true,
            completion_activities: None,
            drop_reordered: true,
            valid_window: None,
            impute: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub removed_duplicate_cases: usize,
    pub removed_duplicate_events: usize,
    pub removed_incomplete_cases: usize,
    pub removed_bad_timestamp_cases: usize,
    pub imputed_numeric: usize,
    pub imputed_categorical: usize,
}

impl CleaningReport {
    pub fn is_noop(&self) -> bool {
        *self == CleaningReport::default()
    }

    pub fn removed_cases(&self) -> usize {
        self.removed_duplicate_cases + self.removed_incomplete_cases + self.removed_bad_timestamp_cases
    }

    pub fn to_lines(&self) -> String {
        format!(
            "removed_duplicate_cases\t{}\nremoved_duplicate_events\t{}\nremoved_incomplete_cases\t{}\n\
             removed_bad_timestamp_cases\t{}\nimputed_numeric\t{}\nimputed_categorical\t{}\n",
            self.removed_duplicate_cases,
            self.removed_duplicate_events,
            self.removed_incomplete_cases,
            self.removed_bad_timestamp_cases,
            self.imputed_numeric,
            self.imputed_categorical
        )
    }
}

/// Applies the cleaning rules in a fixed order: event dedup, trace dedup,
/// completeness, timestamp sanity, then median/mode imputation over the
/// surviving traces.
pub fn clean(log: &EventLog, rules: &CleaningRules) -> Result<(EventLog, CleaningReport), EventLogError> {
    if log.is_empty() {
        return Err(EventLogError::EmptyLog);
    }
    let mut report = CleaningReport::default();
    let mut traces: Vec<Trace> = log.traces.clone();

    if rules.drop_duplicate_events {
        for t in &mut traces {
            let before = t.events.len();
            let mut kept: Vec<super::Event> = Vec::with_capacity(before);
            for e in t.events.drain(..) {
                // Exact repeats share a timestamp, so only the same-time run can match.
                let dup = kept.iter().rev().take_while(|k| k.timestamp == e.timestamp).any(|k| k.same_content(&e));
                if !dup {
                    kept.push(e);
                }
            }
            report.removed_duplicate_events += before - kept.len();
            t.events = kept;
        }
    }

    let before = traces.len();
    match rules.dedup {
        DedupMode::CaseId => {
            let mut seen = HashSet::new();
            traces.retain(|t| seen.insert(t.case_id.clone()));
        }
        DedupMode::EventSequence => {
            let mut kept: Vec<Trace> = Vec::with_capacity(traces.len());
            for t in traces {
                let dup = kept.iter().any(|k| {
                    k.events.len() == t.events.len()
                        && k.events.iter().zip(&t.events).all(|(a, b)| {
                            a.activity == b.activity && a.timestamp == b.timestamp && a.attributes == b.attributes
                        })
                });
                if !dup {
                    kept.push(t);
                }
            }
            traces = kept;
        }
    }
    report.removed_duplicate_cases = before - traces.len();

    if let Some(done) = &rules.completion_activities {
        let before = traces.len();
        traces.retain(|t| t.events.last().is_some_and(|e| done.contains(&e.activity)));
        report.removed_incomplete_cases = before - traces.len();
    }

    let before = traces.len();
    traces.retain(|t| !t.events.is_empty() && !has_bad_timestamps(t, rules));
    report.removed_bad_timestamp_cases = before - traces.len();

    if traces.is_empty() {
        return Err(EventLogError::AllTracesRemoved);
    }

    let mut out = EventLog::new(traces, log.schema.clone());
    if rules.impute {
        impute(&mut out, &mut report);
    }
    Ok((out, report))
}

fn has_bad_timestamps(t: &Trace, rules: &CleaningRules) -> bool {
    if let Some((lo, hi)) = rules.valid_window {
        if t.events.iter().any(|e| e.timestamp < lo || e.timestamp > hi) {
            return true;
        }
    }
    if rules.drop_reordered {
        // Events are held in time order; a later event recorded earlier in
        // the source means elapsed time runs backwards along the recording.
        if t.events.windows(2).any(|w| w[1].seq < w[0].seq && w[1].timestamp != w[0].timestamp) {
            return true;
        }
    }
    t.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp)
}

/// Lower median: the element at index `(n - 1) / 2` of the sorted sample.
pub(crate) fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Most frequent category; ties go to the lexicographically smallest.
fn mode<'a>(values: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(v, _)| v.to_string())
}

fn impute(log: &mut EventLog, report: &mut CleaningReport) {
    let schema = log.schema.attributes.clone();
    for attr in &schema {
        let name = attr.name.as_str();
        let values: Vec<&Value> = match attr.level {
            AttrLevel::Case => log.traces.iter().filter_map(|t| t.case_attributes.get(name)).collect(),
            AttrLevel::Event => {
                log.traces.iter().flat_map(|t| t.events.iter().filter_map(|e| e.attributes.get(name))).collect()
            }
        };
        let fill = match attr.kind {
            AttrKind::Numeric => {
                let mut nums: Vec<f64> = values.iter().filter_map(|v| v.as_num()).collect();
                Value::Num(lower_median(&mut nums).unwrap_or(0.0))
            }
            AttrKind::Categorical => {
                Value::Cat(mode(values.iter().filter_map(|v| v.as_cat())).unwrap_or_else(|| "unknown".into()))
            }
        };
        let mut filled = 0usize;
        let mut fix = |slot: &mut Value| {
            if slot.is_missing() {
                *slot = fill.clone();
                filled += 1;
            }
        };
        for t in &mut log.traces {
            match attr.level {
                AttrLevel::Case => fix(t.case_attributes.entry(name.to_string()).or_insert(Value::Missing)),
                AttrLevel::Event => {
                    for e in &mut t.events {
                        fix(e.attributes.entry(name.to_string()).or_insert(Value::Missing));
                    }
                }
            }
        }
        match attr.kind {
            AttrKind::Numeric => report.imputed_numeric += filled,
            AttrKind::Categorical => report.imputed_categorical += filled,
        }
    }
}

//! Drives the engine from a historical log in timestamp order.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use parking_lot::Mutex;
use prescribe_core::event_log::EventLog;
use prescribe_core::policy::CostModel;
use prescribe_core::synth::{oracle_policy_gain, realized_gain, TruthRow};
use prescribe_core::Timestamp;
use serde::{Deserialize, Serialize};

use crate::engine::{CaseStatus, Decision, Engine};
use crate::journal::Incoming;
use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Time compression: log time runs `speed` times faster than wall time.
    /// `f64::INFINITY` never sleeps.
    pub speed: f64,
    /// Only these cases are scored; the rest provide context. `None` scores
    /// every case.
    pub score: Option<HashSet<String>>,
    /// Close every case together with its last event.
    pub close_on_last: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { speed: f64::INFINITY, score: None, close_on_last: true }
    }
}

/// One ingested event and what it did to its case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub case_id: String,
    pub k: usize,
    pub timestamp: Timestamp,
    pub from: Option<CaseStatus>,
    pub to: CaseStatus,
    /// Sequence number of a recommendation produced by this event.
    pub recommendation: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub events: usize,
    pub cases: usize,
    pub recommendations: usize,
    pub treat: usize,
    pub skip: usize,
    pub abstain: usize,
}

/// Events of one timestamp, in log order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub timestamp: Timestamp,
    pub events: Vec<Incoming>,
}

/// Splits `log` into timestamp batches. Case attributes are copied onto
/// every event, as they would arrive in a CSV row.
pub fn batches(log: &EventLog, opts: &ReplayOptions) -> Vec<Batch> {
    let mut stream: Vec<(Timestamp, usize, usize, bool)> = Vec::with_capacity(log.event_count());
    for (ti, trace) in log.traces.iter().enumerate() {
        let n = trace.events.len();
        for (ei, e) in trace.events.iter().enumerate() {
            stream.push((e.timestamp, ti, ei, opts.close_on_last && ei + 1 == n));
        }
    }
    stream.sort_by_key(|(ts, ti, ei, _)| (*ts, *ti, *ei));
    let mut out: Vec<Batch> = Vec::new();
    for (ts, ti, ei, close) in stream {
        let trace = &log.traces[ti];
        let mut event = trace.events[ei].clone();
        for (k, v) in &trace.case_attributes {
            event.attributes.insert(k.clone(), v.clone());
        }
        match out.last_mut() {
            Some(b) if b.timestamp == ts => b.events.push(Incoming { event, close }),
            _ => out.push(Batch { timestamp: ts, events: vec![Incoming { event, close }] }),
        }
    }
    out
}

/// Ingests one batch and reports what happened to each case it touched.
pub fn step(engine: &mut Engine, batch: Batch) -> Result<Vec<Transition>, ServiceError> {
    let mut from: BTreeMap<String, Option<CaseStatus>> = BTreeMap::new();
    for inc in &batch.events {
        let id = &inc.event.case_id;
        from.entry(id.clone()).or_insert_with(|| engine.case(id).map(|c| c.status));
    }
    let audit_before = engine.audit().len() as u64;
    engine.ingest_batch(batch.events)?;
    let mut transitions = Vec::with_capacity(from.len());
    for (case_id, prev) in from {
        let c = engine.case(&case_id).expect("ingested case exists");
        transitions.push(Transition {
            k: c.k(),
            timestamp: batch.timestamp,
            from: prev,
            to: c.status,
            recommendation: c.last_recommendation.filter(|s| *s > audit_before),
            case_id,
        });
    }
    Ok(transitions)
}

fn pause(prev: Option<Timestamp>, next: Timestamp, speed: f64) {
    if let Some(p) = prev {
        if speed.is_finite() && speed > 0.0 {
            let secs = (next.0 - p.0) as f64 / 1000.0 / speed;
            std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
        }
    }
}

fn summarize(engine: &Engine, log: &EventLog, audit_before: usize) -> ReplaySummary {
    let mut summary = ReplaySummary { events: log.event_count(), cases: log.traces.len(), ..Default::default() };
    for r in &engine.audit()[audit_before..] {
        summary.recommendations += 1;
        match r.decision {
            Decision::Treat => summary.treat += 1,
            Decision::Skip => summary.skip += 1,
            Decision::Abstain => summary.abstain += 1,
        }
    }
    summary
}

/// Feeds every event of `log`. Events sharing a timestamp go in as one
/// batch. `on_step` sees the engine after each batch and the transitions it
/// caused.
pub fn replay<F>(
    engine: &mut Engine,
    log: &EventLog,
    opts: &ReplayOptions,
    mut on_step: F,
) -> Result<ReplaySummary, ServiceError>
where
    F: FnMut(&Engine, &[Transition]),
{
    engine.set_scoring_filter(opts.score.clone());
    let before = engine.audit().len();
    let mut prev = None;
    let result = batches(log, opts).into_iter().try_for_each(|b| {
        pause(prev, b.timestamp, opts.speed);
        prev = Some(b.timestamp);
        let t = step(engine, b)?;
        on_step(engine, &t);
        Ok(())
    });
    engine.set_scoring_filter(None);
    result.map(|()| summarize(engine, log, before))
}

/// Like [`replay`] on an engine shared with other users (the HTTP API).
/// The lock is held for one batch at a time and released while sleeping.
pub fn replay_shared<F>(
    engine: &Mutex<Engine>,
    log: &EventLog,
    opts: &ReplayOptions,
    mut on_step: F,
) -> Result<ReplaySummary, ServiceError>
where
    F: FnMut(&Engine, &[Transition]),
{
    let before = {
        let mut e = engine.lock();
        e.set_scoring_filter(opts.score.clone());
        e.audit().len()
    };
    let mut prev = None;
    let result = batches(log, opts).into_iter().try_for_each(|b| {
        pause(prev, b.timestamp, opts.speed);
        prev = Some(b.timestamp);
        let mut e = engine.lock();
        let t = step(&mut e, b)?;
        on_step(&e, &t);
        Ok(())
    });
    let mut e = engine.lock();
    e.set_scoring_filter(None);
    result.map(|()| summarize(&e, log, before))
}

/// Realized gain of the replayed treat decisions against the oracle that
/// treats the same share of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainComparison {
    pub cases: usize,
    pub treated: usize,
    pub treated_percent: f64,
    pub realized_gain: f64,
    pub oracle_gain: f64,
}

/// Compares the engine's treat recommendations for `cases` with ground
/// truth.
pub fn compare_with_truth(
    engine: &Engine,
    truth: &[TruthRow],
    cases: &HashSet<String>,
    cost: &CostModel,
) -> GainComparison {
    let rows: Vec<TruthRow> = truth.iter().filter(|r| cases.contains(&r.case_id)).cloned().collect();
    let treated: HashSet<&str> =
        engine.audit().iter().filter(|r| r.decision == Decision::Treat).map(|r| r.case_id.as_str()).collect();
    let idx: Vec<usize> = (0..rows.len()).filter(|&i| treated.contains(rows[i].case_id.as_str())).collect();
    let pct = if rows.is_empty() { 0.0 } else { 100.0 * idx.len() as f64 / rows.len() as f64 };
    GainComparison {
        cases: rows.len(),
        treated: idx.len(),
        treated_percent: pct,
        realized_gain: realized_gain(&rows, idx.iter().copied(), cost),
        oracle_gain: oracle_policy_gain(&rows, cost, pct),
    }
}

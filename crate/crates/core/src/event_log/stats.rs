use serde::{Deserialize, Serialize};

use super::{EventLog, EventLogError};

/// Descriptive statistics of a log: counts, mean trace length, mean gap
/// between consecutive events and mean case duration (both in days).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStatistics {
    pub traces: usize,
    pub events: usize,
    pub labels: usize,
    pub mean_trace_length: f64,
    /// Pooled over every consecutive pair of events in every trace.
    pub mean_gap_days: f64,
    pub mean_duration_days: f64,
}

pub fn log_statistics(log: &EventLog) -> Result<LogStatistics, EventLogError> {
    if log.is_empty() {
        return Err(EventLogError::EmptyLog);
    }
    let traces = log.traces.len();
    let events = log.event_count();
    let (mut gap_sum, mut gaps) = (0.0, 0usize);
    let mut duration_sum = 0.0;
    for t in &log.traces {
        for w in t.events.windows(2) {
            gap_sum += w[1].timestamp.days_since(w[0].timestamp);
            gaps += 1;
        }
        duration_sum += t.duration_days();
    }
    Ok(LogStatistics {
        traces,
        events,
        labels: log.labels().len(),
        mean_trace_length: events as f64 / traces as f64,
        mean_gap_days: if gaps > 0 { gap_sum / gaps as f64 } else { 0.0 },
        mean_duration_days: duration_sum / traces as f64,
    })
}

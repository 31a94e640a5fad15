//! Event logs: parsing, cleaning and descriptive statistics.
//!
//! An [`Event`] carries an activity label, a case id, a timestamp and a set of
//! named attributes. Events sharing a case id form a [`Trace`], sorted by
//! timestamp with ties kept in file order. An [`EventLog`] is a multiset of
//! traces plus the schema describing every attribute.

mod clean;
mod csv_io;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use clean::{clean, CleaningReport, CleaningRules, DedupMode};
pub use csv_io::{parse_csv, parse_csv_reader, write_csv, ColumnMapping, Defect, DefectKind, ParseOutcome};
pub use stats::{log_statistics, LogStatistics};

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("input contains no events")]
    EmptyFile,
    #[error("event log is empty")]
    EmptyLog,
    #[error("cleaning removed every trace")]
    AllTracesRemoved,
    #[error("invalid column mapping: {0}")]
    Mapping(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An attribute value. Numbers and categories never mix within one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
            Value::Missing => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrLevel {
    Case,
    Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSchema {
    pub name: String,
    pub kind: AttrKind,
    pub level: AttrLevel,
}

/// Declared kind and level of every attribute, in column order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttrSchema>,
    /// Name of the event attribute holding the resource, if any.
    pub resource: Option<String>,
}

impl Schema {
    pub fn get(&self, name: &str) -> Option<&AttrSchema> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn case_attributes(&self) -> impl Iterator<Item = &AttrSchema> {
        self.attributes.iter().filter(|a| a.level == AttrLevel::Case)
    }

    pub fn event_attributes(&self) -> impl Iterator<Item = &AttrSchema> {
        self.attributes.iter().filter(|a| a.level == AttrLevel::Event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub activity: String,
    pub case_id: String,
    pub timestamp: Timestamp,
    pub attributes: BTreeMap<String, Value>,
    /// Position of the source row in the input; fixes tie order.
    #[serde(default)]
    pub seq: usize,
}

impl Event {
    pub fn new(case_id: impl Into<String>, activity: impl Into<String>, timestamp: Timestamp) -> Self {
        Event { activity: activity.into(), case_id: case_id.into(), timestamp, attributes: BTreeMap::new(), seq: 0 }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: Value) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    /// Equality ignoring the source position.
    pub fn same_content(&self, other: &Event) -> bool {
        self.activity == other.activity
            && self.case_id == other.case_id
            && self.timestamp == other.timestamp
            && self.attributes == other.attributes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    pub case_attributes: BTreeMap<String, Value>,
}

impl Trace {
    /// Builds a trace, sorting events by timestamp (stable on `seq`).
    pub fn new(case_id: impl Into<String>, mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| (e.timestamp, e.seq));
        Trace { case_id: case_id.into(), events, case_attributes: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start(&self) -> Timestamp {
        self.events.first().map(|e| e.timestamp).unwrap_or(Timestamp(0))
    }

    pub fn end(&self) -> Timestamp {
        self.events.last().map(|e| e.timestamp).unwrap_or(Timestamp(0))
    }

    pub fn duration_days(&self) -> f64 {
        self.end().days_since(self.start())
    }

    /// Position of the first event with the given activity.
    pub fn first_position(&self, activity: &str) -> Option<usize> {
        self.events.iter().position(|e| e.activity == activity)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub traces: Vec<Trace>,
    pub schema: Schema,
}

impl EventLog {
    pub fn new(traces: Vec<Trace>, schema: Schema) -> Self {
        EventLog { traces, schema }
    }

    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn labels(&self) -> std::collections::BTreeSet<&str> {
        self.traces.iter().flat_map(|t| t.events.iter().map(|e| e.activity.as_str())).collect()
    }

    pub fn trace(&self, case_id: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.case_id == case_id)
    }

    /// Earliest case start in the log.
    pub fn origin(&self) -> Option<Timestamp> {
        self.traces.iter().filter(|t| !t.is_empty()).map(Trace::start).min()
    }
}

//! From traces to encoded prefixes.
//!
//! Every trace is cut once, just before the intervention decision
//! ([`label_and_cut`]), enriched with temporal and inter-case context
//! ([`engineer_features`]), and encoded into a fixed-width vector using a
//! dictionary fitted on the training split ([`Encoder`]).

mod context;
mod dataset;
mod encoder;
mod prefix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{engineer_features, ActiveCaseIndex, EngineeredFeatures, TIME_FIELDS};
pub use dataset::{
    build_dataset, case_splits, encode, load_encoder, parse_encoder, EncodedDataset, FeaturizeReport, DICTIONARY_FILE,
    ENCODER_FILE, MATRIX_FILE,
};
pub use encoder::{fit_encoder, Agg, Encoder, FeatureDictionary, FeatureKind, FeatureSpec};
pub use prefix::{decision_histogram, label_and_cut, temporal_split, KHistogram, Prefix};

/// Pseudo-attribute naming the activity label in attribute lists.
pub const ACTIVITY: &str = "activity";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("trace `{0}` has fewer than two events")]
    TraceTooShort(String),
    #[error("trace `{0}` starts with the treatment activity")]
    TreatmentAtStart(String),
    #[error("decision-point histogram is empty; no training trace contains the treatment activity")]
    EmptyHistogram,
    #[error("treatment activity `{0}` does not occur in the log")]
    UnknownTreatment(String),
    #[error("encoder configuration: {0}")]
    Config(String),
    #[error("dictionary would contain no features")]
    NoFeatures,
    #[error("no prefixes to encode")]
    NoPrefixes,
    #[error("row for `{case}` has {got} values, dictionary has {want}")]
    DimensionMismatch { case: String, got: usize, want: usize },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Log(#[from] crate::event_log::EventLogError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which observation marks a case as treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Polarity {
    /// T = 1 when the treatment activity occurs.
    #[default]
    Presence,
    /// T = 1 when the activity is skipped.
    Absence,
}

impl std::str::FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "presence" => Ok(Polarity::Presence),
            "absence" => Ok(Polarity::Absence),
            other => Err(format!("unknown polarity `{other}` (presence|absence)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub treatment_activity: String,
    pub polarity: Polarity,
    /// Categorical attributes encoded by per-value counts (`activity` is the label).
    pub aggregation_attributes: Vec<String>,
    /// Event attributes encoded by their last `m` values; `None` takes every
    /// event attribute not aggregated by count.
    pub last_state_attributes: Option<Vec<String>>,
    pub last_state_window: usize,
    pub numeric_aggregations: Vec<Agg>,
    /// Features (by name or source attribute) removed from the confounder set W.
    pub w_exclude: Vec<String>,
}

impl EncoderConfig {
    pub fn new(treatment_activity: impl Into<String>) -> Self {
        EncoderConfig {
            treatment_activity: treatment_activity.into(),
            polarity: Polarity::Presence,
            aggregation_attributes: vec![ACTIVITY.to_string()],
            last_state_attributes: None,
            last_state_window: 1,
            numeric_aggregations: vec![Agg::Min, Agg::Max, Agg::Mean, Agg::Sum],
            w_exclude: Vec::new(),
        }
    }

    /// Default configuration for a log: counts for the activity and, when the
    /// log names one, the resource attribute.
    pub fn for_log(treatment_activity: impl Into<String>, log: &crate::event_log::EventLog) -> Self {
        let mut cfg = EncoderConfig::new(treatment_activity);
        if let Some(r) = &log.schema.resource {
            cfg.aggregation_attributes.push(r.clone());
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.last_state_window == 0 {
            return Err(FeatureError::Config("last-state window must be at least 1".into()));
        }
        if self.treatment_activity.is_empty() {
            return Err(FeatureError::Config("treatment activity is empty".into()));
        }
        Ok(())
    }
}

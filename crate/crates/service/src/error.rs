use prescribe_core::orf::OrfError;
use prescribe_core::policy::PolicyError;
use prescribe_core::Timestamp;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("event for case `{case_id}` at {got:?} is older than the last buffered event at {last:?}")]
    OutOfOrderEvent { case_id: String, last: Timestamp, got: Timestamp },
    #[error("no model loaded")]
    UnknownModel,
    #[error("no policy committed")]
    PolicyMissing,
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("case `{0}` is closed")]
    CaseClosed(String),
    #[error("treatment is not applicable to case `{0}`")]
    NotApplicable(String),
    #[error("no recommendation for case `{0}` yet")]
    NoRecommendation(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("client gain {client} differs from server gain {server}")]
    GainMismatch { client: f64, server: f64 },
    #[error("no evaluation curves loaded")]
    CurvesMissing,
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Orf(#[from] OrfError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

//! Online phase: ingest events of ongoing cases, score applicable prefixes
//! with a trained forest, and recommend treat or skip under the committed
//! policy.
//!
//! [`Engine`] owns all case state and is driven either by the HTTP API in
//! [`http`] or by [`replay`] from a historical log. With a state directory
//! it journals every input, so a restarted engine rebuilds the same states
//! and recommendations.
//!
//! Cases are re-scored after every event until a treat recommendation is
//! issued, the treatment is observed, or the case closes.

mod engine;
mod error;
pub mod http;
pub mod journal;
pub mod replay;

pub use engine::{
    Applicability, CaseState, CaseStatus, CaseSummary, Decision, DefaultApplicability, Engine, EngineConfig,
    ModelSnapshot, PolicyRecord, Provenance, Recommendation,
};
pub use error::ServiceError;
pub use journal::Incoming;

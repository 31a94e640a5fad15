//! Prescriptive process monitoring.
//!
//! The crate turns a historical event log into a recommender that decides,
//! for each ongoing case, whether a binary intervention is worth its cost:
//!
//! * [`event_log`] parses and cleans CSV event data.
//! * [`features`] cuts every trace at its decision point and encodes the
//!   prefix into a fixed-width vector.
//! * [`orf`] estimates conditional treatment effects with an orthogonal
//!   random forest.
//! * [`policy`] evaluates the estimates with Qini and net-value curves and
//!   selects a treatment threshold.
//! * [`sensitivity`] quantifies robustness to unobserved confounding.
//! * [`synth`] generates logs with known ground truth.

pub mod event_log;
pub mod features;
pub mod kv;
pub mod matrix;
pub mod orf;
pub mod policy;
pub mod seed;
pub mod sensitivity;
pub mod synth;
pub mod time;

pub use event_log::{Event, EventLog, Trace, Value};
pub use features::{EncodedDataset, Encoder, EncoderConfig, FeatureDictionary, Split};
pub use matrix::Matrix;
pub use orf::{EffectEstimate, OrfHyperparams, OrfModel};
pub use policy::{CostModel, Policy, QiniCurve};
pub use time::Timestamp;

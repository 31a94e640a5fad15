//! The `prescribe` command line: offline pipeline stages and the online
//! service, each reading and writing the artifacts of the stage before.
//!
//! ```text
//! synth / clean -> featurize -> train -> evaluate -> policy -> serve | replay
//!                                     \-> sensitivity
//! ```
//!
//! Every stage is a function in [`commands`] so tests can drive the
//! pipeline without spawning processes.

pub mod args;
pub mod commands;
mod config;

use std::path::PathBuf;

use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Log(#[from] prescribe_core::event_log::EventLogError),
    #[error(transparent)]
    Features(#[from] prescribe_core::features::FeatureError),
    #[error(transparent)]
    Orf(#[from] prescribe_core::orf::OrfError),
    #[error(transparent)]
    Policy(#[from] prescribe_core::policy::PolicyError),
    #[error(transparent)]
    Sensitivity(#[from] prescribe_core::sensitivity::SensitivityError),
    #[error(transparent)]
    Synth(#[from] prescribe_core::synth::SynthError),
    #[error(transparent)]
    Service(#[from] prescribe_service::ServiceError),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn print(v: &impl serde::Serialize) {
    use std::io::Write;
    // A closed pipe (`prescribe ... | head`) is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

/// Runs one parsed command, printing its JSON summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Clean(a) => print(&run_clean(&a)?),
        Command::Featurize(a) => print(&run_featurize(&a)?),
        Command::Train(a) => print(&run_train(&a)?),
        Command::Evaluate(a) => {
            let r = run_evaluate(&a)?;
            print(&serde_json::json!({
                "cases": r.n_cases,
                "abstained": r.abstained.len(),
                "qini_coefficient": r.curve.coefficient,
                "fraction_on_or_above": r.fraction_on_or_above,
                "verdict": r.verdict,
                "permutation": r.permutation,
                "curve_hash": r.curve_hash(),
            }))
        }
        Command::Policy(a) => print(&run_policy(&a)?),
        Command::Sensitivity(a) => {
            let r = run_sensitivity(&a)?;
            print(&serde_json::json!({
                "target_bias": r.target_bias,
                "verdict": r.verdict,
                "frontier_points": r.frontier.len(),
                "points": r.points,
            }))
        }
        Command::Synth(a) => print(&run_synth(&a)?),
        Command::Serve(a) => run_serve(&a)?,
        Command::Replay(a) => {
            let served = a.port.is_some();
            let outcome = run_replay(&a)?;
            if !served {
                print(&outcome);
            }
        }
    }
    Ok(())
}

//! Append-only JSON-lines files.
//!
//! The journal holds every state-changing input (events, closes, policy
//! commits). Replaying it against the same model rebuilds the engine
//! exactly. The audit file holds the recommendations produced from it.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use prescribe_core::event_log::Event;
use prescribe_core::Timestamp;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::PolicyRecord;
use crate::ServiceError;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// One event as submitted. `close` ends the case after buffering it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incoming {
    pub event: Event,
    #[serde(default)]
    pub close: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Events { events: Vec<Incoming> },
    Close { case_id: String, at: Option<Timestamp> },
    Policy { record: PolicyRecord },
}

/// Writer for one JSON-lines file.
#[derive(Debug)]
pub struct LineFile {
    path: PathBuf,
    file: File,
}

impl LineFile {
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LineFile { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(value).map_err(|e| ServiceError::Journal(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads every record. A final line without a newline is a torn write and is
/// dropped; any other unparseable line is an error.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    parse_lines(&text, &path.display().to_string())
}

/// Decodes journal text; `origin` names the source in errors.
pub fn parse_lines<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, ServiceError> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i + 1 == lines.len() && !complete {
            tracing::warn!(origin, "dropping torn final line");
            break;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => return Err(ServiceError::Journal(format!("{origin}:{}: {e}", i + 1))),
        }
    }
    Ok(out)
}

/// Cuts a torn final line so later appends start on a fresh line.
pub fn truncate_torn(path: &Path) -> Result<(), ServiceError> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

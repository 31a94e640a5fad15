//! Cleaning rules read from the `clean.*` keys of a mapping file.
//!
//! ```text
//! clean.dedup = case_id            # or `sequence`
//! clean.drop_duplicate_events = true
//! clean.completion = End, Cancelled
//! clean.drop_reordered = true
//! clean.valid_from = 2016-01-01T00:00:00Z
//! clean.valid_to = 2017-12-31T23:59:59Z
//! clean.impute = true
//! ```

use prescribe_core::event_log::{CleaningRules, DedupMode};
use prescribe_core::kv::{split_list, KvDoc, KvError};
use prescribe_core::time::TimestampFormat;

fn flag(doc: &KvDoc, key: &str, default: bool) -> Result<bool, KvError> {
    match doc.get(key)? {
        None => Ok(default),
        Some("true" | "yes" | "1") => Ok(true),
        Some("false" | "no" | "0") => Ok(false),
        Some(v) => Err(KvError::Invalid { key: key.into(), reason: format!("expected true or false, got `{v}`") }),
    }
}

fn instant(doc: &KvDoc, key: &str) -> Result<Option<prescribe_core::Timestamp>, KvError> {
    doc.get(key)?
        .map(|v| {
            TimestampFormat::Iso8601
                .parse(v)
                .map_err(|_| KvError::Invalid { key: key.into(), reason: format!("bad timestamp `{v}`") })
        })
        .transpose()
}

pub fn cleaning_rules(text: &str) -> Result<CleaningRules, KvError> {
    let doc = KvDoc::parse(text)?;
    let d = CleaningRules::default();
    let dedup = match doc.get("clean.dedup")? {
        None | Some("case_id") => DedupMode::CaseId,
        Some("sequence") => DedupMode::EventSequence,
        Some(v) => return Err(KvError::Invalid { key: "clean.dedup".into(), reason: format!("unknown mode `{v}`") }),
    };
    let window = match (instant(&doc, "clean.valid_from")?, instant(&doc, "clean.valid_to")?) {
        (None, None) => None,
        (from, to) => Some((
            from.unwrap_or(prescribe_core::Timestamp(i64::MIN)),
            to.unwrap_or(prescribe_core::Timestamp(i64::MAX)),
        )),
    };
    Ok(CleaningRules {
        dedup,
        drop_duplicate_events: flag(&doc, "clean.drop_duplicate_events", d.drop_duplicate_events)?,
        completion_activities: doc.get("clean.completion")?.map(|v| split_list(v).into_iter().collect()),
        drop_reordered: flag(&doc, "clean.drop_reordered", d.drop_reordered)?,
        valid_window: window,
        impute: flag(&doc, "clean.impute", d.impute)?,
    })
}

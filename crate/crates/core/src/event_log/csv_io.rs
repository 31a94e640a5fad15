use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttrKind, AttrLevel, AttrSchema, Event, EventLog, EventLogError, Schema, Trace, Value};
use crate::kv::{split_list, KvDoc};
use crate::time::TimestampFormat;

/// Share of non-missing values that must parse as numbers for a column to be numeric.
const NUMERIC_SHARE: f64 = 0.99;

/// Which CSV column plays which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub case_id: String,
    pub activity: String,
    pub timestamp: String,
    pub timestamp_format: TimestampFormat,
    pub delimiter: u8,
    pub resource: Option<String>,
    pub case_attributes: Vec<String>,
    /// `None` takes every column without another role.
    pub event_attributes: Option<Vec<String>>,
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
    pub ignore: Vec<String>,
    pub missing_tokens: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            case_id: "case_id".into(),
            activity: "activity".into(),
            timestamp: "timestamp".into(),
            timestamp_format: TimestampFormat::Iso8601,
            delimiter: b',',
            resource: None,
            case_attributes: Vec::new(),
            event_attributes: None,
            numeric: Vec::new(),
            categorical: Vec::new(),
            ignore: Vec::new(),
            missing_tokens: vec!["".into(), "NA".into(), "NaN".into(), "null".into()],
        }
    }
}

impl ColumnMapping {
    /// Reads a mapping from `key = value` text.
    ///
    /// Recognised keys: `case_id`, `activity`, `timestamp` (required),
    /// `timestamp_format` (`iso8601` or a strftime pattern), `delimiter`
    /// (a single character or `tab`), `resource`, and the comma-separated
    /// lists `case_attributes`, `event_attributes`, `numeric`, `categorical`,
    /// `ignore`, `missing`.
    pub fn from_kv(text: &str) -> Result<Self, EventLogError> {
        let doc = KvDoc::parse(text).map_err(|e| EventLogError::Mapping(e.to_string()))?;
        let m = |e: crate::kv::KvError| EventLogError::Mapping(e.to_string());
        let mut out = ColumnMapping {
            case_id: doc.require("case_id").map_err(m)?.to_string(),
            activity: doc.require("activity").map_err(m)?.to_string(),
            timestamp: doc.require("timestamp").map_err(m)?.to_string(),
            ..Default::default()
        };
        if let Some(f) = doc.get("timestamp_format").map_err(m)? {
            if !f.eq_ignore_ascii_case("iso8601") && !f.is_empty() {
                out.timestamp_format = TimestampFormat::Pattern(f.to_string());
            }
        }
        if let Some(d) = doc.get("delimiter").map_err(m)? {
            out.delimiter = match d {
                "tab" | "\\t" => b'\t',
                "comma" => b',',
                "semicolon" => b';',
                s if s.len() == 1 && s.is_ascii() => s.as_bytes()[0],
                other => return Err(EventLogError::Mapping(format!("unsupported delimiter `{other}`"))),
            };
        }
        out.resource = doc.get("resource").map_err(m)?.filter(|s| !s.is_empty()).map(String::from);
        out.case_attributes = doc.list("case_attributes").map_err(m)?;
        if let Some(v) = doc.get("event_attributes").map_err(m)? {
            out.event_attributes = Some(split_list(v));
        }
        out.numeric = doc.list("numeric").map_err(m)?;
        out.categorical = doc.list("categorical").map_err(m)?;
        out.ignore = doc.list("ignore").map_err(m)?;
        if let Some(v) = doc.get("missing").map_err(m)? {
            out.missing_tokens = v.split(',').map(|s| s.trim().to_string()).collect();
        }
        Ok(out)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("case_id = {}\n", self.case_id));
        s.push_str(&format!("activity = {}\n", self.activity));
        s.push_str(&format!("timestamp = {}\n", self.timestamp));
        match &self.timestamp_format {
            TimestampFormat::Iso8601 => s.push_str("timestamp_format = iso8601\n"),
            TimestampFormat::Pattern(p) => s.push_str(&format!("timestamp_format = {p}\n")),
        }
        let delim = match self.delimiter {
            b'\t' => "tab".to_string(),
            b',' => "comma".to_string(),
            b';' => "semicolon".to_string(),
            d => (d as char).to_string(),
        };
        s.push_str(&format!("delimiter = {delim}\n"));
        if let Some(r) = &self.resource {
            s.push_str(&format!("resource = {r}\n"));
        }
        let lists: [(&str, &Vec<String>); 5] = [
            ("case_attributes", &self.case_attributes),
            ("numeric", &self.numeric),
            ("categorical", &self.categorical),
            ("ignore", &self.ignore),
            ("missing", &self.missing_tokens),
        ];
        for (k, v) in lists {
            if !v.is_empty() {
                s.push_str(&format!("{k} = {}\n", v.join(", ")));
            }
        }
        if let Some(ev) = &self.event_attributes {
            s.push_str(&format!("event_attributes = {}\n", ev.join(", ")));
        }
        s
    }

    fn is_missing(&self, raw: &str) -> bool {
        self.missing_tokens.iter().any(|t| t == raw.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefectKind {
    TimestampFormat,
    EmptyCaseId,
    EmptyActivity,
    RaggedRow,
    NonNumericValue,
}

/// A row-level problem found while parsing. Rows with timestamp, id or
/// activity defects are excluded; non-numeric values become missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    /// 1-based line number in the input (the header is line 1).
    pub line: u64,
    pub kind: DefectKind,
    pub detail: String,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DefectKind::TimestampFormat => "timestamp-format",
            DefectKind::EmptyCaseId => "empty-case-id",
            DefectKind::EmptyActivity => "empty-activity",
            DefectKind::RaggedRow => "ragged-row",
            DefectKind::NonNumericValue => "non-numeric-value",
        };
        write!(f, "line {}\t{}\t{}", self.line, kind, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub log: EventLog,
    pub defects: Vec<Defect>,
    pub warnings: Vec<String>,
}

pub fn parse_csv(path: &Path, mapping: &ColumnMapping) -> Result<ParseOutcome, EventLogError> {
    parse_csv_reader(File::open(path)?, mapping)
}

struct RawRow {
    line: u64,
    case_id: String,
    activity: String,
    timestamp: crate::time::Timestamp,
    values: Vec<String>,
}

pub fn parse_csv_reader<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<ParseOutcome, EventLogError> {
    let mut rdr =
        csv::ReaderBuilder::new().delimiter(mapping.delimiter).has_headers(true).flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(String::is_empty) {
        return Err(EventLogError::EmptyFile);
    }
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| EventLogError::MissingColumn(name.to_string()))
    };
    let case_col = col(&mapping.case_id)?;
    let act_col = col(&mapping.activity)?;
    let ts_col = col(&mapping.timestamp)?;

    let reserved = |h: &str| {
        h == mapping.case_id || h == mapping.activity || h == mapping.timestamp || mapping.ignore.iter().any(|i| i == h)
    };
    for c in &mapping.case_attributes {
        col(c)?;
    }
    let mut event_attrs: Vec<String> = match &mapping.event_attributes {
        Some(list) => {
            for c in list {
                col(c)?;
            }
            list.clone()
        }
        None => headers
            .iter()
            .filter(|h| !h.is_empty() && !reserved(h) && !mapping.case_attributes.contains(h))
            .cloned()
            .collect(),
    };
    if let Some(r) = &mapping.resource {
        col(r)?;
        if !event_attrs.contains(r) {
            event_attrs.push(r.clone());
        }
    }
    // Attribute columns in header order, case attributes first.
    let mut attr_names: Vec<(String, AttrLevel)> = Vec::new();
    for h in &headers {
        if mapping.case_attributes.contains(h) && !reserved(h) {
            attr_names.push((h.clone(), AttrLevel::Case));
        }
    }
    for h in &headers {
        if event_attrs.contains(h) && !reserved(h) && !mapping.case_attributes.contains(h) {
            attr_names.push((h.clone(), AttrLevel::Event));
        }
    }
    let attr_cols: Vec<usize> = attr_names.iter().map(|(n, _)| col(n)).collect::<Result<_, _>>()?;

    let mut defects = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            defects.push(Defect {
                line,
                kind: DefectKind::RaggedRow,
                detail: format!("{} fields, expected {}", rec.len(), headers.len()),
            });
            continue;
        }
        let case_id = rec.get(case_col).unwrap_or("").trim().to_string();
        let activity = rec.get(act_col).unwrap_or("").trim().to_string();
        let raw_ts = rec.get(ts_col).unwrap_or("");
        if case_id.is_empty() {
            defects.push(Defect { line, kind: DefectKind::EmptyCaseId, detail: String::new() });
            continue;
        }
        if activity.is_empty() {
            defects.push(Defect { line, kind: DefectKind::EmptyActivity, detail: case_id });
            continue;
        }
        let timestamp = match mapping.timestamp_format.parse(raw_ts) {
            Ok(t) => t,
            Err(_) => {
                defects.push(Defect { line, kind: DefectKind::TimestampFormat, detail: format!("{raw_ts:?}") });
                continue;
            }
        };
        let values = attr_cols.iter().map(|&c| rec.get(c).unwrap_or("").trim().to_string()).collect();
        rows.push(RawRow { line, case_id, activity, timestamp, values });
    }
    if rows.is_empty() {
        return Err(EventLogError::EmptyFile);
    }

    // Kind inference over accepted rows.
    let mut kinds = Vec::with_capacity(attr_names.len());
    for (j, (name, _)) in attr_names.iter().enumerate() {
        let kind = if mapping.numeric.contains(name) {
            AttrKind::Numeric
        } else if mapping.categorical.contains(name) || Some(name) == mapping.resource.as_ref() {
            AttrKind::Categorical
        } else {
            let (mut present, mut numeric) = (0usize, 0usize);
            for r in &rows {
                let v = &r.values[j];
                if mapping.is_missing(v) {
                    continue;
                }
                present += 1;
                if parse_number(v).is_some() {
                    numeric += 1;
                }
            }
            if present > 0 && numeric as f64 >= NUMERIC_SHARE * present as f64 {
                AttrKind::Numeric
            } else {
                AttrKind::Categorical
            }
        };
        kinds.push(kind);
    }

    let values_of = |r: &RawRow, defects: &mut Vec<Defect>| -> Vec<Value> {
        r.values
            .iter()
            .enumerate()
            .map(|(j, raw)| {
                if mapping.is_missing(raw) {
                    return Value::Missing;
                }
                match kinds[j] {
                    AttrKind::Numeric => match parse_number(raw) {
                        Some(v) => Value::Num(v),
                        None => {
                            defects.push(Defect {
                                line: r.line,
                                kind: DefectKind::NonNumericValue,
                                detail: format!("{}={raw:?}", attr_names[j].0),
                            });
                            Value::Missing
                        }
                    },
                    AttrKind::Categorical => Value::Cat(raw.clone()),
                }
            })
            .collect()
    };

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<(RawRow, Vec<Value>)>> = HashMap::new();
    for r in rows {
        let vals = values_of(&r, &mut defects);
        let entry = grouped.entry(r.case_id.clone()).or_insert_with(|| {
            order.push(r.case_id.clone());
            Vec::new()
        });
        entry.push((r, vals));
    }

    // Case attributes must be constant within a case; otherwise demote.
    let mut levels: Vec<AttrLevel> = attr_names.iter().map(|(_, l)| *l).collect();
    let mut warnings = Vec::new();
    for (j, (name, level)) in attr_names.iter().enumerate() {
        if *level != AttrLevel::Case {
            continue;
        }
        let inconsistent = order.iter().find(|cid| {
            let mut seen: Option<&Value> = None;
            grouped[*cid].iter().any(|(_, vals)| {
                let v = &vals[j];
                if v.is_missing() {
                    return false;
                }
                match seen {
                    None => {
                        seen = Some(v);
                        false
                    }
                    Some(prev) => prev != v,
                }
            })
        });
        if let Some(cid) = inconsistent {
            let msg = format!("case attribute `{name}` varies within case `{cid}`; treated as event-level");
            tracing::warn!("{msg}");
            warnings.push(msg);
            levels[j] = AttrLevel::Event;
        }
    }

    let mut traces = Vec::with_capacity(order.len());
    for cid in order {
        let group = grouped.remove(&cid).unwrap_or_default();
        let mut case_attributes = BTreeMap::new();
        for (j, (name, _)) in attr_names.iter().enumerate() {
            if levels[j] == AttrLevel::Case {
                let v = group.iter().map(|(_, vals)| &vals[j]).find(|v| !v.is_missing()).cloned();
                case_attributes.insert(name.clone(), v.unwrap_or(Value::Missing));
            }
        }
        let events = group
            .into_iter()
            .map(|(r, vals)| {
                let mut attributes = BTreeMap::new();
                for (j, v) in vals.into_iter().enumerate() {
                    if levels[j] == AttrLevel::Event {
                        attributes.insert(attr_names[j].0.clone(), v);
                    }
                }
                Event {
                    activity: r.activity,
                    case_id: r.case_id,
                    timestamp: r.timestamp,
                    attributes,
                    seq: r.line as usize,
                }
            })
            .collect();
        let mut trace = Trace::new(cid, events);
        trace.case_attributes = case_attributes;
        traces.push(trace);
    }

    let schema = Schema {
        attributes: attr_names
            .iter()
            .enumerate()
            .map(|(j, (name, _))| AttrSchema { name: name.clone(), kind: kinds[j], level: levels[j] })
            .collect(),
        resource: mapping.resource.clone(),
    };
    Ok(ParseOutcome { log: EventLog::new(traces, schema), defects, warnings })
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes the log in the dialect described by `mapping`: case id, activity,
/// timestamp (ISO-8601, milliseconds, UTC), then case attributes and event
/// attributes in schema order.
pub fn write_csv<W: Write>(log: &EventLog, mapping: &ColumnMapping, out: W) -> Result<(), EventLogError> {
    let mut w = csv::WriterBuilder::new().delimiter(mapping.delimiter).from_writer(out);
    let mut header = vec![mapping.case_id.clone(), mapping.activity.clone(), mapping.timestamp.clone()];
    let case_attrs: Vec<&str> = log.schema.case_attributes().map(|a| a.name.as_str()).collect();
    let event_attrs: Vec<&str> = log.schema.event_attributes().map(|a| a.name.as_str()).collect();
    header.extend(case_attrs.iter().map(|s| s.to_string()));
    header.extend(event_attrs.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for trace in &log.traces {
        for e in &trace.events {
            let mut rec = vec![e.case_id.clone(), e.activity.clone(), e.timestamp.to_iso()];
            for a in &case_attrs {
                rec.push(trace.case_attributes.get(*a).map(Value::to_string).unwrap_or_default());
            }
            for a in &event_attrs {
                rec.push(e.attributes.get(*a).map(Value::to_string).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping { case_attributes: vec!["amount".into()], ..Default::default() }
    }

    #[test]
    fn groups_rows_by_case() {
        let csv = "case_id,activity,timestamp,amount\n\
                   a,Start,2020-01-01T00:00:00Z,5\n\
                   b,Start,2020-01-01T01:00:00Z,7\n\
                   a,End,2020-01-02T00:00:00Z,5\n";
        let out = parse_csv_reader(csv.as_bytes(), &mapping()).unwrap();
        assert_eq!(out.log.traces.len(), 2);
        assert_eq!(out.log.event_count(), 3);
        assert!(out.defects.is_empty());
        let a = out.log.trace("a").unwrap();
        assert_eq!(a.events[1].activity, "End");
        assert_eq!(a.case_attributes["amount"], Value::Num(5.0));
        assert_eq!(out.log.schema.get("amount").unwrap().kind, AttrKind::Numeric);
    }

    #[test]
    fn bad_timestamp_becomes_defect() {
        let csv = "case_id,activity,timestamp,amount\n\
                   a,Start,2020-01-01T00:00:00Z,5\n\
                   a,Mid,not-a-date,5\n\
                   a,End,2020-01-02T00:00:00Z,5\n";
        let out = parse_csv_reader(csv.as_bytes(), &mapping()).unwrap();
        assert_eq!(out.log.event_count(), 2);
        assert_eq!(out.defects.len(), 1);
        assert_eq!(out.defects[0].kind, DefectKind::TimestampFormat);
        assert_eq!(out.defects[0].line, 3);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let err = parse_csv_reader("case_id,activity\nx,y\n".as_bytes(), &mapping()).unwrap_err();
        assert!(matches!(err, EventLogError::MissingColumn(c) if c == "timestamp"));
        let err = parse_csv_reader("case_id,activity,timestamp,amount\n".as_bytes(), &mapping()).unwrap_err();
        assert!(matches!(err, EventLogError::EmptyFile));
    }

    #[test]
    fn varying_case_attribute_is_demoted() {
        let csv = "case_id,activity,timestamp,amount\n\
                   a,Start,2020-01-01T00:00:00Z,5\n\
                   a,End,2020-01-02T00:00:00Z,6\n";
        let out = parse_csv_reader(csv.as_bytes(), &mapping()).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.log.schema.get("amount").unwrap().level, AttrLevel::Event);
        assert_eq!(out.log.traces[0].events[1].attributes["amount"], Value::Num(6.0));
    }

    #[test]
    fn numeric_inference_threshold() {
        // 1 non-numeric value among 3 present: below 99% -> categorical.
        let csv = "case_id,activity,timestamp,code\n\
                   a,S,2020-01-01T00:00:00Z,1\n\
                   a,S,2020-01-01T00:00:01Z,2\n\
                   a,S,2020-01-01T00:00:02Z,x\n\
                   a,S,2020-01-01T00:00:03Z,\n";
        let out = parse_csv_reader(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(out.log.schema.get("code").unwrap().kind, AttrKind::Categorical);
        assert_eq!(out.log.traces[0].events[3].attributes["code"], Value::Missing);
    }

    #[test]
    fn mapping_kv_round_trip() {
        let m = ColumnMapping {
            resource: Some("org:resource".into()),
            case_attributes: vec!["amount".into(), "type".into()],
            delimiter: b';',
            timestamp_format: TimestampFormat::Pattern("%Y/%m/%d %H:%M:%S".into()),
            ..Default::default()
        };
        let back = ColumnMapping::from_kv(&m.to_kv()).unwrap();
        assert_eq!(back, m);
    }
}

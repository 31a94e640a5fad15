//! Millisecond-precision UTC instants.

use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

pub const MILLIS_PER_DAY: f64 = 86_400_000.0;

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampParseError;

impl fmt::Display for TimestampParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unparseable timestamp")
    }
}

impl std::error::Error for TimestampParseError {}

/// How timestamps are written in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimestampFormat {
    /// RFC 3339 / ISO-8601; naive values are taken as UTC.
    #[default]
    Iso8601,
    /// A `chrono` strftime pattern. Patterns without `%z`/`%:z` are taken as UTC.
    Pattern(String),
}

impl TimestampFormat {
    pub fn parse(&self, raw: &str) -> Result<Timestamp, TimestampParseError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(TimestampParseError);
        }
        match self {
            TimestampFormat::Iso8601 => parse_iso(raw),
            TimestampFormat::Pattern(p) => {
                if p.contains("%z") || p.contains("%:z") || p.contains("%#z") {
                    DateTime::parse_from_str(raw, p)
                        .map(|d| Timestamp::from_datetime(d.with_timezone(&Utc)))
                        .map_err(|_| TimestampParseError)
                } else if let Ok(n) = NaiveDateTime::parse_from_str(raw, p) {
                    Ok(Timestamp::from_datetime(n.and_utc()))
                } else {
                    NaiveDate::parse_from_str(raw, p)
                        .ok()
                        .and_then(|d| d.and_hms_opt(0, 0, 0))
                        .map(|n| Timestamp::from_datetime(n.and_utc()))
                        .ok_or(TimestampParseError)
                }
            }
        }
    }
}

fn parse_iso(raw: &str) -> Result<Timestamp, TimestampParseError> {
    if let Ok(d) = DateTime::parse_from_rfc3339(raw) {
        return Ok(Timestamp::from_datetime(d.with_timezone(&Utc)));
    }
    // Space separator with an offset, as several process-mining exports write it.
    for p in ["%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%z"] {
        if let Ok(d) = DateTime::parse_from_str(raw, p) {
            return Ok(Timestamp::from_datetime(d.with_timezone(&Utc)));
        }
    }
    for p in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(raw, p) {
            return Ok(Timestamp::from_datetime(n.and_utc()));
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|n| Timestamp::from_datetime(n.and_utc()))
        .ok_or(TimestampParseError)
}

impl Timestamp {
    pub fn from_datetime(d: DateTime<Utc>) -> Self {
        Timestamp(d.timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.0).unwrap_or(DateTime::<Utc>::MIN_UTC)
    }

    /// Signed difference `self - earlier` in days.
    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MILLIS_PER_DAY
    }

    pub fn plus_days(self, days: f64) -> Timestamp {
        Timestamp(self.0 + (days * MILLIS_PER_DAY).round() as i64)
    }

    /// Month of the year, 1-12.
    pub fn month(self) -> u32 {
        self.to_datetime().month()
    }

    /// Day of the week, Monday = 0.
    pub fn weekday(self) -> u32 {
        self.to_datetime().weekday().num_days_from_monday()
    }

    pub fn hour(self) -> u32 {
        self.to_datetime().hour()
    }

    pub fn to_iso(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_variants_agree() {
        let a = TimestampFormat::Iso8601.parse("2016-01-01T10:51:15.304Z").unwrap();
        let b = TimestampFormat::Iso8601.parse("2016-01-01 11:51:15.304+01:00").unwrap();
        let c = TimestampFormat::Iso8601.parse("2016-01-01T10:51:15.304").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.to_iso(), "2016-01-01T10:51:15.304Z");
    }

    #[test]
    fn custom_pattern() {
        let f = TimestampFormat::Pattern("%d/%m/%Y %H:%M".into());
        let t = f.parse("02/03/2019 08:30").unwrap();
        assert_eq!(t.to_iso(), "2019-03-02T08:30:00.000Z");
        assert!(f.parse("not-a-date").is_err());
    }

    #[test]
    fn calendar_fields() {
        // 2021-06-14 was a Monday.
        let t = TimestampFormat::Iso8601.parse("2021-06-14T23:10:00Z").unwrap();
        assert_eq!((t.month(), t.weekday(), t.hour()), (6, 0, 23));
        let later = t.plus_days(1.5);
        assert_eq!(later.days_since(t), 1.5);
    }
}

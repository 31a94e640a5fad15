//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! a ` #` on a value line. Keys are case-sensitive and may repeat; callers
//! decide whether repetition is an error.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: Vec<(String, String, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or(KvError::Syntax { line })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(KvError::EmptyKey { line });
            }
            let value = match v.find(" #") {
                Some(pos) => &v[..pos],
                None => v,
            };
            entries.push((key.to_string(), value.trim().to_string(), line));
        }
        Ok(KvDoc { entries })
    }

    /// Value of a key that may appear at most once.
    pub fn get(&self, key: &str) -> Result<Option<&str>, KvError> {
        let mut found = None;
        for (k, v, _) in &self.entries {
            if k == key {
                if found.is_some() {
                    return Err(KvError::Duplicate(key.to_string()));
                }
                found = Some(v.as_str());
            }
        }
        Ok(found)
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        match self.get(key)? {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|_| KvError::Invalid { key: key.to_string(), reason: format!("cannot parse `{v}`") })
            }
        }
    }

    /// Comma-separated list value; empty items are dropped.
    pub fn list(&self, key: &str) -> Result<Vec<String>, KvError> {
        Ok(self.get(key)?.map(split_list).unwrap_or_default())
    }

    /// All entries whose key starts with `prefix`, with the prefix stripped,
    /// in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, v, _)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let doc = KvDoc::parse("# header\ncase_id = Case ID  # trailing\n\nattrs = a, b,,c\n").unwrap();
        assert_eq!(doc.require("case_id").unwrap(), "Case ID");
        assert_eq!(doc.list("attrs").unwrap(), vec!["a", "b", "c"]);
        assert_eq!(doc.get("nope").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(KvDoc::parse("novalue\n").unwrap_err(), KvError::Syntax { line: 1 });
        assert_eq!(KvDoc::parse(" = 3").unwrap_err(), KvError::EmptyKey { line: 1 });
        let doc = KvDoc::parse("a = 1\na = 2").unwrap();
        assert_eq!(doc.get("a").unwrap_err(), KvError::Duplicate("a".into()));
    }
}

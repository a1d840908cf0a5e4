//! Plain-text model records.
//!
//! A record is an ordered list of `key: value` lines. Values are either a
//! single token or a whitespace-separated list of numbers; floats are written
//! with full round-trip precision. Composite models nest by key prefix, e.g.
//! `learner.0.params`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record line {line}: {text:?}")]
    Malformed { line: usize, text: String },
    #[error("missing key {0:?}")]
    MissingKey(String),
    #[error("key {key:?}: cannot parse {token:?} as {kind}")]
    BadValue {
        key: String,
        token: String,
        kind: &'static str,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, RecordError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_str(&mut self, key: &str, value: &str) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_u64(&mut self, key: &str, value: u64) {
        self.push_str(key, &value.to_string());
    }

    pub fn push_i64(&mut self, key: &str, value: i64) {
        self.push_str(key, &value.to_string());
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push_str(key, &format_f64(value));
    }

    pub fn push_f64_slice(&mut self, key: &str, values: &[f64]) {
        let joined = values.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(" ");
        self.push_str(key, &joined);
    }

    /// Merge `other` under a key prefix.
    pub fn push_nested(&mut self, prefix: &str, other: &Record) {
        for (k, v) in &other.entries {
            self.entries.push((format!("{prefix}.{k}"), v.clone()));
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| RecordError::MissingKey(key.to_string()))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        parse_token(key, self.get(key)?, "u64")
    }

    pub fn get_i64(&self, key: &str) -> Result<i64> {
        parse_token(key, self.get(key)?, "i64")
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        parse_token(key, self.get(key)?, "f64")
    }

    pub fn get_f64_slice(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.get(key)?;
        raw.split_whitespace()
            .map(|tok| parse_token(key, tok, "f64"))
            .collect()
    }

    /// Extract the sub-record under `prefix.` with the prefix stripped.
    pub fn nested(&self, prefix: &str) -> Record {
        let want = format!("{prefix}.");
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(&want))
            .map(|(k, v)| (k[want.len()..].to_string(), v.clone()))
            .collect();
        Record { entries }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Record> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(':').ok_or_else(|| RecordError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Record { entries })
    }
}

fn format_f64(v: f64) -> String {
    // `{:?}` preserves round-trip precision for f64
    format!("{v:?}")
}

fn parse_token<T: std::str::FromStr>(key: &str, token: &str, kind: &'static str) -> Result<T> {
    token.trim().parse().map_err(|_| RecordError::BadValue {
        key: key.to_string(),
        token: token.to_string(),
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_preserves_floats() {
        let mut r = Record::new();
        r.push_str("kind", "arima");
        r.push_f64("intercept", 0.1 + 0.2);
        r.push_f64_slice("ar", &[0.5, -0.25, 1e-17]);
        let back = Record::from_text(&r.to_text()).unwrap();
        assert_eq!(back.get("kind").unwrap(), "arima");
        assert_eq!(back.get_f64("intercept").unwrap(), 0.1 + 0.2);
        assert_eq!(back.get_f64_slice("ar").unwrap(), vec![0.5, -0.25, 1e-17]);
    }

    #[test]
    fn nested_prefixes() {
        let mut inner = Record::new();
        inner.push_u64("seed", 7);
        let mut outer = Record::new();
        outer.push_nested("learner.0", &inner);
        assert_eq!(outer.nested("learner.0").get_u64("seed").unwrap(), 7);
    }

    #[test]
    fn missing_key_is_an_error() {
        let r = Record::new();
        assert!(matches!(r.get("nope"), Err(RecordError::MissingKey(_))));
    }
}

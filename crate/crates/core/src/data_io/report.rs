//! Line-delimited `key=value` report files.
//!
//! ```text
//! # report=<kind> fields=<f1>,<f2>,...
//! f1=<v> f2=<v> ...
//! ```
//! Fields appear in the same order on every line. Values may not contain
//! whitespace or `=`. Floats use Rust's shortest round-trip formatting.

use std::fmt::Display;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub kind: String,
    pub fields: Vec<String>,
    pub records: Vec<Vec<String>>,
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=' || c == ',') {
        return Err(Error::Data(format!("{what} `{s}` must be a non-empty token without whitespace, `=` or `,`")));
    }
    Ok(())
}

impl Report {
    pub fn new(kind: &str, fields: &[&str]) -> Result<Self> {
        check_token("report kind", kind)?;
        for f in fields {
            check_token("field name", f)?;
        }
        Ok(Self {
            kind: kind.to_string(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, values: &[&dyn Display]) -> Result<()> {
        if values.len() != self.fields.len() {
            return Err(Error::Data(format!(
                "record has {} values for {} fields",
                values.len(),
                self.fields.len()
            )));
        }
        let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        for v in &vals {
            if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '=') {
                return Err(Error::Data(format!("value `{v}` is not a token")));
            }
        }
        self.records.push(vals);
        Ok(())
    }

    /// Value of `field` in record `i`.
    pub fn get(&self, i: usize, field: &str) -> Option<&str> {
        let j = self.fields.iter().position(|f| f == field)?;
        self.records.get(i).map(|r| r[j].as_str())
    }

    pub fn get_f64(&self, i: usize, field: &str) -> Option<f64> {
        self.get(i, field)?.parse().ok()
    }

    pub fn render(&self) -> String {
        let mut out = format!("# report={} fields={}\n", self.kind, self.fields.join(","));
        for r in &self.records {
            let line: Vec<String> = self
                .fields
                .iter()
                .zip(r)
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |line: usize, m: &str| Error::Data(format!("report line {line}: {m}"));
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let rest = header.strip_prefix("# report=").ok_or_else(|| bad(1, "bad header"))?;
        let (kind, fields) = rest
            .split_once(" fields=")
            .ok_or_else(|| bad(1, "header lacks fields"))?;
        let fields: Vec<&str> = fields.split(',').collect();
        let mut report = Report::new(kind, &fields)?;
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != fields.len() {
                return Err(bad(n + 2, "wrong number of fields"));
            }
            let mut rec = Vec::with_capacity(parts.len());
            for (p, f) in parts.iter().zip(&fields) {
                match p.split_once('=') {
                    Some((k, v)) if k == *f => rec.push(v.to_string()),
                    _ => return Err(bad(n + 2, &format!("expected field `{f}`"))),
                }
            }
            report.records.push(rec);
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut r = Report::new("ood", &["method", "source", "auc"]).unwrap();
        r.push(&[&"redecnn", &"fashion", &0.8123456789012345f64]).unwrap();
        r.push(&[&"standard", &"fgsm", &0.1f64]).unwrap();
        let text = r.render();
        assert!(text.starts_with("# report=ood fields=method,source,auc\nmethod=redecnn "));
        let back = Report::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64(0, "auc"), Some(0.8123456789012345));
    }

    #[test]
    fn rejects_bad_tokens_and_lines() {
        let mut r = Report::new("x", &["a"]).unwrap();
        assert!(r.push(&[&"two words"]).is_err());
        assert!(r.push(&[&1, &2]).is_err());
        assert!(Report::new("x y", &["a"]).is_err());
        assert!(Report::parse("# report=x fields=a\nb=1\n").is_err());
        assert!(Report::parse("nonsense").is_err());
    }
}

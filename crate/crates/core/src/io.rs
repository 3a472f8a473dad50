//! Deterministic text emission: CSV tables with shortest round-trip floats and
//! LF line endings, plus finiteness scrubbing for JSON documents.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Column-named numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row.to_vec());
    }

    /// Serialized text; fails on any non-finite entry.
    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&self.headers.join(","));
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            for (c, value) in row.iter().enumerate() {
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "column {} row {r}: {value}",
                        self.headers[c]
                    )));
                }
                if c > 0 {
                    out.push(',');
                }
                // Display for f64 is the shortest representation that round-trips
                write!(out, "{value}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?)?;
        Ok(())
    }

    /// Inverse of [`CsvTable::render`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("empty csv document".into()))?;
        let headers: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Io(format!("csv line {}: {e}", k + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != headers.len() {
                return Err(Error::Io(format!(
                    "csv line {} has {} fields, header has {}",
                    k + 2,
                    row.len(),
                    headers.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Reject any NaN or infinity inside a JSON document.
///
/// serde_json turns non-finite floats into `null`, so nulls are rejected too;
/// optional fields must be skipped when absent rather than emitted as null.
pub fn ensure_finite_json(value: &serde_json::Value) -> Result<()> {
    fn walk(v: &serde_json::Value, path: &mut String) -> Result<()> {
        match v {
            serde_json::Value::Number(n) => {
                if let Some(f) = n.as_f64() {
                    if !f.is_finite() {
                        return Err(Error::NonFinite(path.clone()));
                    }
                }
                Ok(())
            }
            serde_json::Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    let len = path.len();
                    write!(path, "[{i}]").ok();
                    walk(item, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            serde_json::Value::Object(map) => {
                for (k, item) in map {
                    let len = path.len();
                    write!(path, ".{k}").ok();
                    walk(item, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            serde_json::Value::Null => Err(Error::NonFinite(format!("{path} is null"))),
            _ => Ok(()),
        }
    }
    walk(value, &mut String::from("$"))
}

/// Pretty JSON with a trailing newline, after checking finiteness.
pub fn render_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::NonFinite(e.to_string()))?;
    ensure_finite_json(&v)?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut t = CsvTable::new(&["x", "v"]);
        t.push_row(&[0.1, 1.0 / 3.0]);
        t.push_row(&[-2.5e-300, 123456789.12345679]);
        let text = t.render().unwrap();
        assert!(text.starts_with("x,v\n"));
        assert!(!text.contains('\r'));
        let back = CsvTable::parse(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut t = CsvTable::new(&["a"]);
        t.push_row(&[f64::NAN]);
        assert!(matches!(t.render(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn json_rejects_non_finite() {
        let v = serde_json::json!({"a": [1.0, 2.0], "b": {"c": 3}});
        assert!(ensure_finite_json(&v).is_ok());
        assert!(render_json(&vec![1.0, f64::NAN]).is_err());
        assert!(render_json(&f64::INFINITY).is_err());
        assert!(render_json(&v).unwrap().ends_with("}\n"));
    }
}

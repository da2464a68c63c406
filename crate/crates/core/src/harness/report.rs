use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tabular experiment result. `header`/`rows` and `artifacts` are fully
/// determined by the inputs; wall-clock measurements live in `timings` and
/// are kept out of the digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
    /// Extra files, `(file name, contents)`.
    pub artifacts: Vec<(String, String)>,
    /// `(cell, seconds)`.
    pub timings: Vec<(String, f64)>,
    /// Cell whose time is 1.0 in the relative column.
    pub timing_base: Option<String>,
}

impl Report {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} report row has {} fields, header has {}",
                self.name,
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows whose named columns equal the given values.
    pub fn select(&self, filter: &[(&str, &str)]) -> Vec<&Vec<String>> {
        let cols: Vec<Option<usize>> = filter.iter().map(|(c, _)| self.column(c)).collect();
        self.rows
            .iter()
            .filter(|r| {
                cols.iter()
                    .zip(filter)
                    .all(|(c, (_, v))| c.is_some_and(|c| r[c] == *v))
            })
            .collect()
    }

    /// Parse column `value` of the single row matching `filter`.
    pub fn value(&self, filter: &[(&str, &str)], value: &str) -> Result<f64> {
        let rows = self.select(filter);
        let col = self
            .column(value)
            .ok_or_else(|| Error::InvalidParameter(format!("{} has no column {value}", self.name)))?;
        match rows.as_slice() {
            [r] => r[col]
                .parse()
                .map_err(|_| Error::Format(format!("{value} = `{}` is not a number", r[col]))),
            _ => Err(Error::InvalidParameter(format!(
                "{} rows of {} match {filter:?}",
                rows.len(),
                self.name
            ))),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let base = self.timing_base.as_deref().and_then(|b| self.seconds(b));
        let mut s = String::from("cell,seconds,relative\n");
        for (c, t) in &self.timings {
            let rel = base.map(|b| format!("{:.3}", t / b)).unwrap_or_default();
            s.push_str(&format!("{c},{t:.3},{rel}\n"));
        }
        s
    }

    pub fn relative_time(&self, cell: &str) -> Option<f64> {
        Some(self.seconds(cell)? / self.seconds(self.timing_base.as_deref()?)?)
    }

    pub fn seconds(&self, cell: &str) -> Option<f64> {
        self.timings.iter().find(|(c, _)| c == cell).map(|(_, t)| *t)
    }

    /// SHA-256 over the CSV, notes and artifacts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv());
        for n in &self.notes {
            h.update(n);
            h.update([0]);
        }
        for (f, c) in &self.artifacts {
            h.update(f);
            h.update([0]);
            h.update(c);
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    /// `<name>.csv`, `<name>_timing.csv`, `<name>_notes.txt` (if any) and
    /// every artifact, all under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{}.csv", self.name)), self.to_csv())?;
        fs::write(dir.join(format!("{}_timing.csv", self.name)), self.timing_csv())?;
        if !self.notes.is_empty() {
            fs::write(dir.join(format!("{}_notes.txt", self.name)), self.notes.join("\n") + "\n")?;
        }
        for (f, c) in &self.artifacts {
            fs::write(dir.join(f), c)?;
        }
        Ok(())
    }
}

/// Short SHA-256 of a value's JSON form; tags report cells with their
/// configuration.
pub fn hash_json<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_string(v).expect("serializable config");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

/// Fixed-precision float formatting shared by all reports.
pub fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_checked_and_timings_do_not_touch_digest() {
        let mut r = Report::new("t", &["a", "b"]);
        assert!(r.push(vec!["1".into()]).is_err());
        r.push(vec!["x".into(), "0.5".into()]).unwrap();
        r.push(vec!["y".into(), "2".into()]).unwrap();
        let d = r.digest();
        r.timings.push(("x".into(), 1.5));
        r.timings.push(("y".into(), 3.0));
        r.timing_base = Some("x".into());
        assert_eq!(r.digest(), d);
        assert_eq!(r.relative_time("y"), Some(2.0));
        assert!(r.timing_csv().contains("y,3.000,2.000"));
        assert_eq!(r.value(&[("a", "y")], "b").unwrap(), 2.0);
        assert!(r.value(&[("a", "z")], "b").is_err());
        assert_eq!(r.to_csv(), "a,b\nx,0.5\ny,2\n");
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert!(dir.path().join("t_timing.csv").exists());
    }
}

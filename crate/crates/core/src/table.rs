//! Logits tables and their CSV representation.
//!
//! File layout: a header `label,z0,z1,...,z{K-1}` followed by one row per
//! sample. The label cell is either filled on every row or empty on every
//! row. Numbers are written with the shortest decimal string that parses
//! back to the same `f64`, so `write(read(f))` reproduces files that this
//! module wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `N x K` matrix of raw classifier scores with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsTable {
    logits: Vec<f64>,
    class_count: usize,
    labels: Option<Vec<usize>>,
}

impl LogitsTable {
    /// Builds a table from row-major logits.
    pub fn new(logits: Vec<f64>, class_count: usize, labels: Option<Vec<usize>>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::contract(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if logits.is_empty() || !logits.len().is_multiple_of(class_count) {
            return Err(Error::contract(format!(
                "{} logits do not form a non-empty table with {class_count} columns",
                logits.len()
            )));
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite logit {} at row {}, column {}",
                logits[pos],
                pos / class_count,
                pos % class_count
            )));
        }
        let n = logits.len() / class_count;
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::contract(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
                return Err(Error::contract(format!(
                    "label {bad} out of range for {class_count} classes"
                )));
            }
        }
        Ok(Self {
            logits,
            class_count,
            labels,
        })
    }

    /// Builds a table from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::contract(format!(
                "row {r} has {} columns, expected {k}",
                rows[r].len()
            )));
        }
        Self::new(rows.concat(), k, labels)
    }

    pub fn sample_count(&self) -> usize {
        self.logits.len() / self.class_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a contract error naming `what` needed them.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::contract(format!("{what} requires labeled logits")))
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.logits.chunks_exact(self.class_count)
    }

    /// Divides one row by a positive scalar in place.
    pub(crate) fn scale_row(&mut self, i: usize, temperature: f64) {
        let k = self.class_count;
        for v in &mut self.logits[i * k..(i + 1) * k] {
            *v /= temperature;
        }
    }

    /// Maps every logit through `f`, keeping labels. Fails if the result
    /// breaks the finiteness invariant.
    pub(crate) fn map_logits(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.logits.iter().map(|&v| f(v)).collect(),
            self.class_count,
            self.labels.clone(),
        )
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut logits = Vec::with_capacity(indices.len() * self.class_count);
        for &i in indices {
            logits.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(logits, self.class_count, labels)
    }

    /// Copy of this table with the labels replaced.
    pub fn with_labels(&self, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(self.logits.clone(), self.class_count, labels)
    }

    /// Checks that `other` describes the same samples: same shape and, when
    /// both carry labels, the same labels.
    pub fn check_aligned(&self, other: &LogitsTable, what: &str) -> Result<()> {
        if self.sample_count() != other.sample_count() || self.class_count != other.class_count {
            return Err(Error::contract(format!(
                "{what}: shape {}x{} does not match {}x{}",
                other.sample_count(),
                other.class_count,
                self.sample_count(),
                self.class_count
            )));
        }
        if let (Some(a), Some(b)) = (&self.labels, &other.labels) {
            if a != b {
                return Err(Error::contract(format!("{what}: label vectors differ")));
            }
        }
        Ok(())
    }

    /// Renders the table in the CSV layout described in the module docs.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.logits.len() * 20);
        out.push_str("label");
        for j in 0..self.class_count {
            let _ = write!(out, ",z{j}");
        }
        out.push('\n');
        for (i, row) in self.rows().enumerate() {
            if let Some(labels) = &self.labels {
                let _ = write!(out, "{}", labels[i]);
            }
            for v in row {
                // Debug formatting of f64 is the shortest round-trip form.
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV layout; `source` names the input in error messages.
    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.split('\n').enumerate();
        let header = match lines.next() {
            Some((_, h)) if !h.is_empty() => h.strip_suffix('\r').unwrap_or(h),
            _ => return Err(err(1, "missing header".into())),
        };
        let columns: Vec<&str> = header.split(',').collect();
        if columns[0] != "label" {
            return Err(err(
                1,
                format!(
                    "first header column must be `label`, found `{}`",
                    columns[0]
                ),
            ));
        }
        let k = columns.len() - 1;
        for (j, name) in columns[1..].iter().enumerate() {
            if *name != format!("z{j}") {
                return Err(err(
                    1,
                    format!("header column {} must be `z{j}`, found `{name}`", j + 1),
                ));
            }
        }
        if k < 2 {
            return Err(err(1, format!("need at least 2 logit columns, found {k}")));
        }

        let mut logits = Vec::new();
        let mut labels: Vec<Option<usize>> = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                // Only a trailing newline may produce an empty line.
                if text.split('\n').skip(idx + 1).all(str::is_empty) {
                    break;
                }
                return Err(err(line_no, "empty line".into()));
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != k + 1 {
                return Err(err(
                    line_no,
                    format!("expected {} columns, found {}", k + 1, cells.len()),
                ));
            }
            labels.push(if cells[0].is_empty() {
                None
            } else {
                let y: usize = cells[0]
                    .parse()
                    .map_err(|_| err(line_no, format!("invalid label `{}`", cells[0])))?;
                if y >= k {
                    return Err(err(
                        line_no,
                        format!("label {y} out of range for {k} classes"),
                    ));
                }
                Some(y)
            });
            for (j, cell) in cells[1..].iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| err(line_no, format!("invalid number `{cell}` in column z{j}")))?;
                if !v.is_finite() {
                    return Err(err(
                        line_no,
                        format!("non-finite value `{cell}` in column z{j}"),
                    ));
                }
                logits.push(v);
            }
        }
        if labels.is_empty() {
            return Err(err(0, "no data rows".into()));
        }
        let labeled = labels.iter().filter(|l| l.is_some()).count();
        let labels = if labeled == labels.len() {
            Some(labels.into_iter().flatten().collect())
        } else if labeled == 0 {
            None
        } else {
            let first_empty = labels.iter().position(Option::is_none).unwrap_or(0);
            return Err(err(
                first_empty + 2,
                "label column mixes empty and non-empty cells".into(),
            ));
        };
        Self::new(logits, k, labels).map_err(|e| err(0, e.to_string()))
    }
}

/// Reads a logits CSV file.
pub fn read_logits_csv(path: impl AsRef<Path>) -> Result<LogitsTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LogitsTable::parse_csv(&text, &path.display().to_string())
}

/// Writes a logits CSV file.
pub fn write_logits_csv(table: &LogitsTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_csv_string()).map_err(|e| Error::io(path, e))
}

//! Vector and sequence datasets, label coding and standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class labels in full disjunctive coding, one row per point.
///
/// Rows may be fuzzy (entries in `[0,1]` summing to one). Points whose mask
/// entry is `false` carry no label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    classes: Vec<String>,
    coding: Vec<f64>,
    mask: Vec<bool>,
}

impl Labels {
    /// Crisp one-hot labels; `None` marks an unlabeled point.
    pub fn from_classes(class_of: &[Option<usize>], classes: Vec<String>) -> Result<Self> {
        let d = classes.len();
        if d == 0 {
            return Err(Error::data("labels need at least one class"));
        }
        let mut coding = vec![0.0; class_of.len() * d];
        let mut mask = vec![false; class_of.len()];
        for (i, c) in class_of.iter().enumerate() {
            if let Some(c) = *c {
                if c >= d {
                    return Err(Error::data(format!("class index {c} out of range for {d} classes")));
                }
                coding[i * d + c] = 1.0;
                mask[i] = true;
            }
        }
        Ok(Self { classes, coding, mask })
    }

    /// Fuzzy labels given directly as an `n × d` row-major matrix.
    pub fn from_coding(coding: Vec<f64>, mask: Vec<bool>, classes: Vec<String>) -> Result<Self> {
        let d = classes.len();
        if d == 0 || coding.len() != mask.len() * d {
            return Err(Error::Shape { expected: mask.len() * d.max(1), got: coding.len() });
        }
        for (i, row) in coding.chunks(d).enumerate() {
            if !mask[i] {
                continue;
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::data(format!("label row {i} has entries outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::data(format!("label row {i} sums to {s}, expected 1")));
            }
        }
        Ok(Self { classes, coding, mask })
    }

    pub fn dim(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coding[i * d..(i + 1) * d]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn labeled_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Crisp class of a labeled point (largest coding entry, lowest index on ties).
    pub fn class_of(&self, i: usize) -> Option<usize> {
        self.mask[i].then(|| argmax(self.row(i)))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut coding = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            coding.extend_from_slice(self.row(i));
        }
        Self { classes: self.classes.clone(), coding, mask: idx.iter().map(|&i| self.mask[i]).collect() }
    }
}

/// Index of the largest entry, lowest index among equal maxima.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `N` points in `R^M`, row-major, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    n: usize,
    dim: usize,
    values: Vec<f64>,
    labels: Option<Labels>,
}

impl VectorDataset {
    pub fn new(values: Vec<f64>, dim: usize, labels: Option<Labels>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::data(format!("cannot shape {} values into rows of {dim}", values.len())));
        }
        let n = values.len() / dim;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite value in row {}", pos / dim)));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape { expected: n, got: l.len() });
            }
        }
        Ok(Self { n, dim, values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Labels>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::data(format!("row {bad} has {} columns, expected {dim}", rows[bad].len())));
        }
        Self::new(rows.concat(), dim, labels)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.point(i));
        }
        Self { n: idx.len(), dim: self.dim, values, labels: self.labels.as_ref().map(|l| l.subset(idx)) }
    }

    /// Parses delimited text: one point per line, comma or whitespace separated.
    /// With `label_column` the last field of every row is a class name; an
    /// empty field or `?` leaves the point unlabeled.
    pub fn parse(text: &str, label_column: bool) -> Result<Self> {
        let mut rows = Vec::new();
        let mut names: Vec<String> = Vec::new();
        let mut class_of = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = split_fields(line);
            if label_column {
                let name = fields.pop().ok_or_else(|| Error::data(format!("line {}: empty row", lineno + 1)))?;
                class_of.push(match name {
                    "" | "?" => None,
                    name => Some(match names.iter().position(|c| c == name) {
                        Some(c) => c,
                        None => {
                            names.push(name.to_string());
                            names.len() - 1
                        }
                    }),
                });
            }
            let row = fields
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::data(format!("line {}: bad number {f:?}", lineno + 1))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::data("no data rows"));
        }
        let labels = if label_column { Some(Labels::from_classes(&class_of, names)?) } else { None };
        Self::from_rows(&rows, labels)
    }

    pub fn load(path: impl AsRef<Path>, label_column: bool) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, label_column)
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Variable-length real sequences, e.g. chromosome thickness profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    sequences: Vec<Vec<f64>>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Vec<f64>>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::data("no sequences"));
        }
        for (i, s) in sequences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::data(format!("sequence {i} is empty")));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("sequence {i} has a non-finite entry")));
            }
        }
        Ok(Self { sequences })
    }

    /// One sequence per line, whitespace-separated entries.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seqs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| Error::data(format!("line {}: bad number {f:?}", lineno + 1))))
                .collect::<Result<Vec<f64>>>()?;
            seqs.push(seq);
        }
        Self::new(seqs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.sequences[i]
    }
}

/// Divisor used for the standard deviation in z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdConvention {
    /// Divide by `N`.
    #[default]
    Population,
    /// Divide by `N - 1`.
    Sample,
}

/// Centers every column and scales it to unit standard deviation.
/// Zero-variance columns are only centered. Labels are carried over.
pub fn zscore_standardize(data: &VectorDataset, convention: SdConvention) -> VectorDataset {
    let (n, m) = (data.n, data.dim);
    let denom = match convention {
        SdConvention::Population => n as f64,
        SdConvention::Sample => (n.max(2) - 1) as f64,
    };
    let mut values = data.values.clone();
    for c in 0..m {
        let mean = (0..n).map(|i| data.values[i * m + c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data.values[i * m + c] - mean).powi(2)).sum::<f64>() / denom;
        let sd = var.sqrt();
        for i in 0..n {
            let v = data.values[i * m + c] - mean;
            values[i * m + c] = if sd > 0.0 { v / sd } else { 0.0 };
        }
    }
    VectorDataset { n, dim: m, values, labels: data.labels.clone() }
}

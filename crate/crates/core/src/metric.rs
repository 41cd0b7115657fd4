//! Built-in dissimilarity measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indel cost used for the chromosome profiles.
pub const DEFAULT_INDEL_COST: f64 = 4.5;

/// Identifies one of the built-in metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Metric {
    SquaredEuclidean,
    Cosine,
    Edit { indel: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::SquaredEuclidean => "squared-euclidean",
            Metric::Cosine => "cosine",
            Metric::Edit { .. } => "edit",
        }
    }

    pub fn is_vector_metric(&self) -> bool {
        !matches!(self, Metric::Edit { .. })
    }
}

pub fn squared_euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    Ok(sq_dist(x, y))
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `1 - x·y / (‖x‖‖y‖)`, clamped to `[0, 2]`.
pub fn cosine_dissimilarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Domain("cosine dissimilarity of a zero vector".into()));
    }
    Ok(cosine_with_norms(x, y, nx, ny))
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn cosine_with_norms(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (1.0 - dot / (nx * ny)).clamp(0.0, 2.0)
}

/// Edit distance where substituting `u` by `v` costs `|u - v|` and every
/// insertion or deletion costs `indel`.
pub fn weighted_edit_distance(a: &[f64], b: &[f64], indel: f64) -> f64 {
    // single rolling row over b
    let mut row: Vec<f64> = (0..=b.len()).map(|j| j as f64 * indel).collect();
    for (i, &u) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = (i + 1) as f64 * indel;
        for (j, &v) in b.iter().enumerate() {
            let sub = diag + (u - v).abs();
            let del = row[j + 1] + indel;
            let ins = row[j] + indel;
            diag = row[j + 1];
            row[j + 1] = sub.min(del).min(ins);
        }
    }
    row[b.len()]
}

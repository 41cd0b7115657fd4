//! Fixed neuron neighborhoods for the SOM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::h;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatticeShape {
    Rectangular { rows: usize, cols: usize },
    /// Offset rows, odd rows shifted by half a cell; `nd` is the Euclidean
    /// distance between cell centres, so nearest neighbours are at 1.
    Hexagonal { rows: usize, cols: usize },
    Table,
}

/// Neuron layout with its precomputed `K × K` distance table `nd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    k: usize,
    shape: LatticeShape,
    nd: Vec<f64>,
}

impl Lattice {
    pub fn rectangular(rows: usize, cols: usize) -> Result<Self> {
        Self::from_positions(LatticeShape::Rectangular { rows, cols }, rows, cols, |r, c| (c as f64, r as f64))
    }

    pub fn hexagonal(rows: usize, cols: usize) -> Result<Self> {
        let dy = 3f64.sqrt() / 2.0;
        Self::from_positions(LatticeShape::Hexagonal { rows, cols }, rows, cols, |r, c| {
            (c as f64 + 0.5 * (r % 2) as f64, r as f64 * dy)
        })
    }

    /// `1 × k` chain.
    /// Hexagonal grid of `k` neurons with the factorization `rows × cols`
    /// closest to square (`rows ≤ cols`); a prime `k` yields a single row.
    pub fn near_square_hexagonal(k: usize) -> Result<Self> {
        let rows = (1..=k).take_while(|r| r * r <= k).filter(|r| k.is_multiple_of(*r)).last().unwrap_or(1);
        Self::hexagonal(rows, k / rows.max(1))
    }

    pub fn chain(k: usize) -> Result<Self> {
        Self::rectangular(1, k)
    }

    pub fn from_table(k: usize, nd: Vec<f64>) -> Result<Self> {
        if k == 0 || nd.len() != k * k {
            return Err(Error::Shape { expected: k * k, got: nd.len() });
        }
        for j in 0..k {
            for l in 0..k {
                let v = nd[j * k + l];
                let ok = v.is_finite() && v == nd[l * k + j] && if j == l { v == 0.0 } else { v > 0.0 };
                if !ok {
                    return Err(Error::config(format!("lattice distance nd({j},{l}) = {v} is invalid")));
                }
            }
        }
        Ok(Self { k, shape: LatticeShape::Table, nd })
    }

    fn from_positions(
        shape: LatticeShape,
        rows: usize,
        cols: usize,
        pos: impl Fn(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config("lattice needs at least one row and one column"));
        }
        let k = rows * cols;
        let p: Vec<(f64, f64)> = (0..k).map(|j| pos(j / cols, j % cols)).collect();
        let mut nd = vec![0.0; k * k];
        for j in 0..k {
            for l in 0..k {
                nd[j * k + l] = ((p[j].0 - p[l].0).powi(2) + (p[j].1 - p[l].1).powi(2)).sqrt();
            }
        }
        Ok(Self { k, shape, nd })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    #[inline]
    pub fn nd(&self, j: usize, l: usize) -> f64 {
        self.nd[j * self.k + l]
    }

    /// Largest neuron distance.
    pub fn diameter(&self) -> f64 {
        self.nd.iter().copied().fold(0.0, f64::max)
    }

    /// `h_σ(nd(j,l))` as a row-major `K × K` table.
    pub fn weights(&self, sigma: f64) -> Vec<f64> {
        self.nd.iter().map(|&t| h(t, sigma)).collect()
    }
}

//! Batch K-means, batch neural gas and batch SOM (Heskes' cost-function
//! variant) for vector data. They serve as the vector-space baselines and as
//! semantic references for the median algorithms.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::VectorDataset;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::metric::sq_dist;
use crate::rank::{argmin, ranks_from_distances};
use crate::rng;
use crate::schedule::{rank_weights, AnnealingSchedule};

/// `K` prototypes in `R^M`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EuclideanPrototypes {
    k: usize,
    dim: usize,
    w: Vec<f64>,
}

impl EuclideanPrototypes {
    pub fn new(w: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || w.is_empty() || !w.len().is_multiple_of(dim) {
            return Err(Error::config("prototype matrix must hold at least one full row"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite prototype entry"));
        }
        Ok(Self { k: w.len() / dim, dim, w })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("prototype rows differ in length"));
        }
        Self::new(rows.concat(), dim)
    }

    /// `k` distinct data points chosen by `seed`.
    pub fn init_from_data(data: &VectorDataset, k: usize, seed: u64) -> Result<Self> {
        check_k(k, data.len())?;
        let idx = rng::sample_distinct(&mut rng::rng(seed), data.len(), k);
        let mut w = Vec::with_capacity(k * data.dim());
        for i in idx {
            w.extend_from_slice(data.point(i));
        }
        Self::new(w, data.dim())
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.w[j * self.dim..(j + 1) * self.dim]
    }

    fn distances_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = sq_dist(x, self.get(j));
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("need at least one prototype"));
    }
    if k > n {
        return Err(Error::config(format!("K = {k} exceeds the {n} available data points")));
    }
    Ok(())
}

/// Assignments of the last epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AssignmentState {
    /// Plain winner per point.
    pub winner: Vec<usize>,
    /// Row-major `N × K` ranks (neural gas only).
    pub ranks: Option<Vec<u32>>,
    /// Neighborhood-averaged winner `I*` per point (SOM only).
    pub som_winner: Option<Vec<usize>>,
}

/// Quantization error in the two conventions: `half = ½·Σ_i d(x_i, w_winner)`
/// and `norm = half / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantizationError {
    pub half: f64,
    pub norm: f64,
}

impl QuantizationError {
    pub fn from_winner_distances(d: impl IntoIterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        for v in d {
            sum += v;
            n += 1;
        }
        let half = 0.5 * sum;
        Self { half, norm: if n == 0 { 0.0 } else { half / n as f64 } }
    }
}

/// Cost and bookkeeping of one training epoch. `cost` is evaluated at the
/// assignments computed in that epoch and the prototypes entering it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sigma: f64,
    pub cost: f64,
    /// Points whose assignment changed relative to the previous epoch.
    pub changed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EuclideanFit {
    pub prototypes: EuclideanPrototypes,
    pub assignment: AssignmentState,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
}

impl EuclideanFit {
    pub fn quantization_error(&self, data: &VectorDataset) -> QuantizationError {
        quantization_error(data, &self.prototypes, &self.assignment.winner)
    }
}

/// Index of the closest prototype, lowest index on ties.
pub fn winner_index(x: &[f64], prototypes: &EuclideanPrototypes) -> Result<usize> {
    prototypes.check_dim(x)?;
    let mut d = vec![0.0; prototypes.len()];
    prototypes.distances_into(x, &mut d);
    Ok(argmin(&d))
}

/// Rank of every prototype by distance to `x`; ties ordered by index.
pub fn compute_ranks(x: &[f64], prototypes: &EuclideanPrototypes) -> Result<Vec<u32>> {
    prototypes.check_dim(x)?;
    let mut d = vec![0.0; prototypes.len()];
    prototypes.distances_into(x, &mut d);
    let mut r = vec![0; d.len()];
    ranks_from_distances(&d, &mut r);
    Ok(r)
}

/// `I*(x) = argmin_i Σ_l h_σ(nd(i,l))·d(x, w^l)`.
pub fn som_winner(x: &[f64], prototypes: &EuclideanPrototypes, lattice: &Lattice, sigma: f64) -> Result<usize> {
    prototypes.check_dim(x)?;
    if lattice.len() != prototypes.len() {
        return Err(Error::Shape { expected: prototypes.len(), got: lattice.len() });
    }
    let mut d = vec![0.0; prototypes.len()];
    prototypes.distances_into(x, &mut d);
    Ok(som_winner_from_distances(&d, &lattice.weights(sigma)))
}

/// `I*` given the distances to all prototypes and the `K × K` table `h_σ(nd)`.
pub(crate) fn som_winner_from_distances(d: &[f64], hw: &[f64]) -> usize {
    let k = d.len();
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..k {
        let row = &hw[i * k..(i + 1) * k];
        let v: f64 = row.iter().zip(d).map(|(h, d)| h * d).sum();
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

pub fn quantization_error(data: &VectorDataset, prototypes: &EuclideanPrototypes, winner: &[usize]) -> QuantizationError {
    QuantizationError::from_winner_distances(
        data.points().zip(winner).map(|(x, &j)| sq_dist(x, prototypes.get(j))),
    )
}

fn all_distances(data: &VectorDataset, w: &EuclideanPrototypes) -> Vec<f64> {
    let k = w.len();
    let mut d = vec![0.0; data.len() * k];
    d.par_chunks_mut(k).enumerate().for_each(|(i, row)| w.distances_into(data.point(i), row));
    d
}

fn check_data(data: &VectorDataset, w: &EuclideanPrototypes) -> Result<()> {
    if data.dim() != w.dim() {
        return Err(Error::Shape { expected: w.dim(), got: data.dim() });
    }
    check_k(w.len(), data.len())
}

fn count_changed<T: PartialEq>(prev: Option<&[T]>, cur: &[T], stride: usize) -> usize {
    match prev {
        None => cur.len() / stride,
        Some(p) => p.chunks(stride).zip(cur.chunks(stride)).filter(|(a, b)| a != b).count(),
    }
}

/// Batch K-means from `k` seeded data points.
pub fn batch_kmeans(data: &VectorDataset, k: usize, epochs: usize, seed: u64) -> Result<EuclideanFit> {
    let init = EuclideanPrototypes::init_from_data(data, k, seed)?;
    batch_kmeans_from(data, init, epochs)
}

/// Batch K-means from given prototypes. Stops when assignments repeat.
/// A prototype left without points is moved onto the point farthest from
/// its winner.
pub fn batch_kmeans_from(data: &VectorDataset, mut w: EuclideanPrototypes, epochs: usize) -> Result<EuclideanFit> {
    check_data(data, &w)?;
    let (n, k, m) = (data.len(), w.len(), data.dim());
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut converged = false;
    for epoch in 0..epochs {
        let d = all_distances(data, &w);
        let winner: Vec<usize> = d.chunks(k).map(argmin).collect();
        let cost = 0.5 * (0..n).map(|i| d[i * k + winner[i]]).sum::<f64>();
        history.push(EpochRecord { epoch, sigma: 0.0, cost, changed: count_changed(prev.as_deref(), &winner, 1) });
        if prev.as_ref() == Some(&winner) {
            converged = true;
            break;
        }
        let mut sums = vec![0.0; k * m];
        let mut counts = vec![0usize; k];
        for (i, &j) in winner.iter().enumerate() {
            counts[j] += 1;
            for (s, x) in sums[j * m..(j + 1) * m].iter_mut().zip(data.point(i)) {
                *s += x;
            }
        }
        // farthest points first, for re-seeding empty clusters
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| d[b * k + winner[b]].total_cmp(&d[a * k + winner[a]]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for j in 0..k {
            let row = &mut w.w[j * m..(j + 1) * m];
            if counts[j] > 0 {
                for (r, s) in row.iter_mut().zip(&sums[j * m..(j + 1) * m]) {
                    *r = s / counts[j] as f64;
                }
            } else if let Some(p) = far.next() {
                row.copy_from_slice(data.point(p));
            }
        }
        prev = Some(winner);
    }
    let winner = match prev {
        Some(p) if converged => p,
        _ => all_distances(data, &w).chunks(k).map(argmin).collect(),
    };
    Ok(EuclideanFit { prototypes: w, assignment: AssignmentState { winner, ..Default::default() }, history, converged })
}

/// Batch neural gas from `k` seeded data points.
pub fn batch_ng(data: &VectorDataset, k: usize, schedule: &AnnealingSchedule, seed: u64) -> Result<EuclideanFit> {
    let init = EuclideanPrototypes::init_from_data(data, k, seed)?;
    batch_ng_from(data, init, schedule)
}

/// Batch neural gas: ranks, then `w^j = Σ_i h_σ(k_ij) x^i / Σ_i h_σ(k_ij)`.
/// Runs `schedule.epochs` epochs, or fewer if the ranks repeat at the final σ.
pub fn batch_ng_from(data: &VectorDataset, mut w: EuclideanPrototypes, schedule: &AnnealingSchedule) -> Result<EuclideanFit> {
    check_data(data, &w)?;
    let (n, k, m) = (data.len(), w.len(), data.dim());
    let mut history = Vec::new();
    let mut prev: Option<(Vec<u32>, f64)> = None;
    let mut converged = false;
    let mut last_ranks = None;
    for epoch in 0..schedule.epochs {
        let sigma = schedule.sigma_clamped(epoch);
        let hk = rank_weights(k, sigma);
        let d = all_distances(data, &w);
        let mut ranks = vec![0u32; n * k];
        ranks.par_chunks_mut(k).zip(d.par_chunks(k)).for_each(|(r, dr)| ranks_from_distances(dr, r));
        let cost = 0.5 * (0..n * k).map(|x| hk[ranks[x] as usize] * d[x]).sum::<f64>();
        let changed = count_changed(prev.as_ref().map(|p| p.0.as_slice()), &ranks, k);
        history.push(EpochRecord { epoch, sigma, cost, changed });
        if matches!(&prev, Some((p, s)) if *p == ranks && *s == sigma) {
            converged = true;
            last_ranks = Some(ranks);
            break;
        }
        let updated: Vec<Option<Vec<f64>>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let mut num = vec![0.0; m];
                let mut den = 0.0;
                for i in 0..n {
                    let hv = hk[ranks[i * k + j] as usize];
                    if hv == 0.0 {
                        continue;
                    }
                    den += hv;
                    for (a, x) in num.iter_mut().zip(data.point(i)) {
                        *a += hv * x;
                    }
                }
                (den > 0.0).then(|| num.into_iter().map(|a| a / den).collect())
            })
            .collect();
        for (j, u) in updated.into_iter().enumerate() {
            if let Some(u) = u {
                w.w[j * m..(j + 1) * m].copy_from_slice(&u);
            }
        }
        prev = Some((ranks, sigma));
    }
    let ranks = match last_ranks {
        Some(r) => r,
        None => {
            let d = all_distances(data, &w);
            let mut r = vec![0u32; n * k];
            r.par_chunks_mut(k).zip(d.par_chunks(k)).for_each(|(r, dr)| ranks_from_distances(dr, r));
            r
        }
    };
    let winner = ranks.chunks(k).map(|r| r.iter().position(|&x| x == 0).unwrap()).collect();
    Ok(EuclideanFit {
        prototypes: w,
        assignment: AssignmentState { winner, ranks: Some(ranks), som_winner: None },
        history,
        converged,
    })
}

/// Batch SOM from seeded data points; `K` is the lattice size.
pub fn batch_som(data: &VectorDataset, lattice: &Lattice, schedule: &AnnealingSchedule, seed: u64) -> Result<EuclideanFit> {
    let init = EuclideanPrototypes::init_from_data(data, lattice.len(), seed)?;
    batch_som_from(data, init, lattice, schedule)
}

/// Batch SOM: `I*` assignments, then
/// `w^j = Σ_i h_σ(nd(I*(i),j)) x^i / Σ_i h_σ(nd(I*(i),j))`.
/// A prototype whose denominator vanishes keeps its position.
pub fn batch_som_from(
    data: &VectorDataset,
    mut w: EuclideanPrototypes,
    lattice: &Lattice,
    schedule: &AnnealingSchedule,
) -> Result<EuclideanFit> {
    check_data(data, &w)?;
    if lattice.len() != w.len() {
        return Err(Error::Shape { expected: w.len(), got: lattice.len() });
    }
    let (n, k, m) = (data.len(), w.len(), data.dim());
    let mut history = Vec::new();
    let mut prev: Option<(Vec<usize>, f64)> = None;
    let mut converged = false;
    for epoch in 0..schedule.epochs {
        let sigma = schedule.sigma_clamped(epoch);
        let hw = lattice.weights(sigma);
        let d = all_distances(data, &w);
        let star: Vec<usize> = d.par_chunks(k).map(|dr| som_winner_from_distances(dr, &hw)).collect();
        let cost = 0.5
            * (0..n)
                .map(|i| (0..k).map(|l| hw[star[i] * k + l] * d[i * k + l]).sum::<f64>())
                .sum::<f64>();
        let changed = count_changed(prev.as_ref().map(|p| p.0.as_slice()), &star, 1);
        history.push(EpochRecord { epoch, sigma, cost, changed });
        if matches!(&prev, Some((p, s)) if *p == star && *s == sigma) {
            converged = true;
            break;
        }
        let mut sums = vec![0.0; k * m];
        let mut counts = vec![0.0; k];
        for (i, &c) in star.iter().enumerate() {
            counts[c] += 1.0;
            for (s, x) in sums[c * m..(c + 1) * m].iter_mut().zip(data.point(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            let mut num = vec![0.0; m];
            let mut den = 0.0;
            for c in 0..k {
                let hv = hw[c * k + j];
                if counts[c] == 0.0 || hv == 0.0 {
                    continue;
                }
                den += hv * counts[c];
                for (a, s) in num.iter_mut().zip(&sums[c * m..(c + 1) * m]) {
                    *a += hv * s;
                }
            }
            if den > 0.0 {
                for (r, a) in w.w[j * m..(j + 1) * m].iter_mut().zip(num) {
                    *r = a / den;
                }
            }
        }
        prev = Some((star, sigma));
    }
    let hw = lattice.weights(schedule.sigma_clamped(schedule.epochs.saturating_sub(1)));
    let d = all_distances(data, &w);
    let winner = d.chunks(k).map(argmin).collect();
    let star = d.chunks(k).map(|dr| som_winner_from_distances(dr, &hw)).collect();
    Ok(EuclideanFit {
        prototypes: w,
        assignment: AssignmentState { winner, ranks: None, som_winner: Some(star) },
        history,
        converged,
    })
}

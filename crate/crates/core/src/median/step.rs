//! One epoch of each median algorithm over a prepared problem.

use rayon::prelude::*;

use super::{choose_distinct, label_gap, naive, MedianPrototypes, SearchCounters, SupervisionConfig};
use crate::dataset::Labels;
use crate::dissim::{Columns, Dissimilarity};
use crate::error::{Error, Result};
use crate::euclid::som_winner_from_distances;
use crate::fast_ng::{NgImpl, NgSearcher};
use crate::fast_som::{SomImpl, SomSearcher};
use crate::lattice::Lattice;
use crate::rank::{ranks_from_distances, TieBreak, TiePolicy};
use crate::schedule::rank_weights;

/// Column-major dissimilarities with point weights and optional labels.
pub(crate) struct Problem<'a> {
    pub(crate) cols: Columns<'a>,
    /// Point multiplicities; all ones when unweighted.
    pub(crate) m: Vec<f64>,
    pub(crate) labels: Option<&'a Labels>,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(d: &'a dyn Dissimilarity, labels: Option<&'a Labels>, weights: Option<&[f64]>) -> Result<Self> {
        let n = d.len();
        if let Some(l) = labels {
            if l.len() != n {
                return Err(Error::Shape { expected: n, got: l.len() });
            }
        }
        let m = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::Shape { expected: n, got: w.len() });
                }
                if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::Domain(format!("point weights must be positive, got {bad}")));
                }
                w.to_vec()
            }
            None => vec![1.0; n],
        };
        Ok(Self { cols: Columns::new(d), m, labels })
    }

    pub(crate) fn from_columns(cols: Columns<'a>, m: Vec<f64>, labels: Option<&'a Labels>) -> Self {
        Self { cols, m, labels }
    }

    pub(crate) fn n(&self) -> usize {
        self.cols.len()
    }

    /// Row-major `N × K` table of `d(i, loc_j)`.
    fn input_table(&self, loc: &[usize]) -> Vec<f64> {
        let n = self.n();
        let k = loc.len();
        let mut t = vec![0.0; n * k];
        t.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
            for (v, &l) in row.iter_mut().zip(loc) {
                *v = self.cols.at(i, l);
            }
        });
        t
    }

    /// Row-major `N × K` table of `d_β(i, w^j)`; plain `d` when unsupervised.
    fn blended_table(&self, protos: &MedianPrototypes, sup: &SupervisionConfig) -> Vec<f64> {
        let mut t = self.input_table(&protos.loc);
        let (Some(labels), Some(_), true) = (self.labels, protos.labels.as_ref(), sup.enabled) else {
            return t;
        };
        let k = protos.len();
        let beta = sup.beta;
        t.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
            let y = labels.is_labeled(i).then(|| labels.row(i));
            for (j, v) in row.iter_mut().enumerate() {
                *v = match y {
                    Some(y) => beta * *v + (1.0 - beta) * label_gap(y, protos.label(j).expect("labels")),
                    None => beta * *v,
                };
            }
        });
        t
    }

    pub(crate) fn input_winners(&self, loc: &[usize]) -> Vec<usize> {
        let k = loc.len();
        self.input_table(loc).chunks(k).map(crate::rank::argmin).collect()
    }
}

pub(crate) struct StepConfig {
    pub(crate) supervision: SupervisionConfig,
    pub(crate) tie: TiePolicy,
    pub(crate) epoch: usize,
}

impl StepConfig {
    pub(crate) fn new(supervision: SupervisionConfig, tie: TiePolicy, epoch: usize) -> Self {
        Self { supervision, tie, epoch }
    }

    fn tie_break(&self, n: usize) -> TieBreak {
        TieBreak::new(self.tie, n, self.epoch)
    }
}

pub(crate) struct StepOutput {
    pub(crate) next: MedianPrototypes,
    /// Flattened assignment state (ranks, SOM winners or winners).
    pub(crate) assignment: Vec<u32>,
    pub(crate) cost: f64,
    pub(crate) collisions: usize,
    pub(crate) counters: SearchCounters,
}

/// `Y^j = Σ_i a(i,j)·y^i / Σ_i a(i,j)` over labeled points; rows with zero
/// mass keep their previous value.
fn update_labels(p: &Problem<'_>, protos: &MedianPrototypes, weight: impl Fn(usize, usize) -> f64 + Sync) -> Option<Vec<f64>> {
    let (labels, old) = (p.labels?, protos.labels.as_ref()?);
    let dim = protos.label_dim;
    let k = protos.len();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut num = vec![0.0; dim];
            let mut den = 0.0;
            for i in 0..p.n() {
                if !labels.is_labeled(i) {
                    continue;
                }
                let a = weight(i, j);
                if a == 0.0 {
                    continue;
                }
                den += a;
                for (s, y) in num.iter_mut().zip(labels.row(i)) {
                    *s += a * y;
                }
            }
            if den > 0.0 {
                num.iter_mut().for_each(|s| *s /= den);
                num
            } else {
                old[j * dim..(j + 1) * dim].to_vec()
            }
        })
        .collect();
    Some(rows.concat())
}

fn supervised(p: &Problem<'_>, protos: &MedianPrototypes, sup: &SupervisionConfig) -> bool {
    sup.enabled && p.labels.is_some() && protos.labels.is_some()
}

pub(crate) fn ng_step(
    p: &Problem<'_>,
    protos: &MedianPrototypes,
    sigma: f64,
    cfg: &StepConfig,
    imp: NgImpl,
) -> StepOutput {
    let n = p.n();
    let k = protos.len();
    let sup = supervised(p, protos, &cfg.supervision);
    let dist = p.blended_table(protos, &cfg.supervision);
    let rank_basis = if sup && !cfg.supervision.rank_on_blended { p.input_table(&protos.loc) } else { dist.clone() };
    let mut ranks = vec![0u32; n * k];
    ranks.par_chunks_mut(k).zip(rank_basis.par_chunks(k)).for_each(|(r, d)| ranks_from_distances(d, r));
    let h = rank_weights(k, sigma);

    let cost = 0.5
        * (0..n)
            .map(|i| {
                let r = &ranks[i * k..(i + 1) * k];
                let d = &dist[i * k..(i + 1) * k];
                p.m[i] * r.iter().zip(d).map(|(&r, &d)| h[r as usize] * d).sum::<f64>()
            })
            .sum::<f64>();

    let mut ranks_t = vec![0u32; k * n];
    for i in 0..n {
        for j in 0..k {
            ranks_t[j * n + i] = ranks[i * k + j];
        }
    }
    let tie = cfg.tie_break(n);
    let ctx = NgContext { cols: &p.cols, m: &p.m, ranks_t: &ranks_t, h: &h, n, k, tie: &tie };
    let (loc, collisions, counters) = match imp {
        NgImpl::Naive => choose_distinct(k, n, |j, ex| naive::ng_search(&ctx, j, ex)),
        _ => {
            let s = NgSearcher::new(&ctx, imp, &protos.loc);
            choose_distinct(k, n, |j, ex| s.search(j, ex))
        }
    };
    let labels = if sup {
        update_labels(p, protos, |i, j| h[ranks[i * k + j] as usize] * p.m[i])
    } else {
        protos.labels.clone()
    };
    StepOutput {
        next: MedianPrototypes { loc, labels, label_dim: protos.label_dim },
        assignment: ranks,
        cost,
        collisions,
        counters,
    }
}

/// Read-only state of one NG epoch. `ranks_t[j*N + i]` is the rank of
/// prototype `j` for point `i`.
pub(crate) struct NgContext<'a> {
    pub(crate) cols: &'a Columns<'a>,
    pub(crate) m: &'a [f64],
    pub(crate) ranks_t: &'a [u32],
    pub(crate) h: &'a [f64],
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) tie: &'a TieBreak,
}

impl NgContext<'_> {
    pub(crate) fn ranks_of(&self, j: usize) -> &[u32] {
        &self.ranks_t[j * self.n..(j + 1) * self.n]
    }
}

/// Read-only state of one SOM epoch. `hw[k*K + j] = h_σ(nd(k, j))`;
/// `owner[i]` is the SOM winner of point `i`.
pub(crate) struct SomContext<'a> {
    pub(crate) cols: &'a Columns<'a>,
    pub(crate) m: &'a [f64],
    pub(crate) owner: &'a [usize],
    pub(crate) hw: &'a [f64],
    pub(crate) lattice: &'a Lattice,
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) tie: &'a TieBreak,
}

pub(crate) fn som_step(
    p: &Problem<'_>,
    protos: &MedianPrototypes,
    lattice: &Lattice,
    sigma: f64,
    cfg: &StepConfig,
    imp: SomImpl,
) -> StepOutput {
    let n = p.n();
    let k = protos.len();
    let sup = supervised(p, protos, &cfg.supervision);
    let dist = p.blended_table(protos, &cfg.supervision);
    let hw = lattice.weights(sigma);
    let winner_basis = if sup && !cfg.supervision.rank_on_blended { p.input_table(&protos.loc) } else { dist.clone() };
    let owner: Vec<usize> = winner_basis.par_chunks(k).map(|d| som_winner_from_distances(d, &hw)).collect();

    let cost = 0.5
        * (0..n)
            .map(|i| {
                let row = &hw[owner[i] * k..(owner[i] + 1) * k];
                p.m[i] * row.iter().zip(&dist[i * k..(i + 1) * k]).map(|(h, d)| h * d).sum::<f64>()
            })
            .sum::<f64>();

    let tie = cfg.tie_break(n);
    let ctx = SomContext { cols: &p.cols, m: &p.m, owner: &owner, hw: &hw, lattice, n, k, tie: &tie };
    let (loc, collisions, counters) = match imp {
        SomImpl::Naive => choose_distinct(k, n, |j, ex| naive::som_search(&ctx, j, ex)),
        _ => {
            let s = SomSearcher::new(&ctx, imp);
            choose_distinct(k, n, |j, ex| s.search(j, ex))
        }
    };
    let labels = if sup {
        update_labels(p, protos, |i, j| hw[owner[i] * k + j] * p.m[i])
    } else {
        protos.labels.clone()
    };
    StepOutput {
        next: MedianPrototypes { loc, labels, label_dim: protos.label_dim },
        assignment: owner.iter().map(|&o| o as u32).collect(),
        cost,
        collisions,
        counters,
    }
}

pub(crate) fn kmedoids_step(p: &Problem<'_>, protos: &MedianPrototypes, cfg: &StepConfig) -> StepOutput {
    let n = p.n();
    let k = protos.len();
    let sup = supervised(p, protos, &cfg.supervision);
    let dist = p.blended_table(protos, &cfg.supervision);
    let basis = if sup && !cfg.supervision.rank_on_blended { p.input_table(&protos.loc) } else { dist.clone() };
    let winner: Vec<usize> = basis.chunks(k).map(crate::rank::argmin).collect();
    let cost = 0.5 * (0..n).map(|i| p.m[i] * dist[i * k + winner[i]]).sum::<f64>();

    let mut fields = vec![Vec::new(); k];
    for (i, &j) in winner.iter().enumerate() {
        fields[j].push(i);
    }
    // Farthest point from its winner, used to re-seed empty fields.
    let mut spread: Vec<usize> = (0..n).collect();
    spread.sort_by(|&a, &b| basis[b * k + winner[b]].total_cmp(&basis[a * k + winner[a]]).then(a.cmp(&b)));

    let tie = cfg.tie_break(n);
    let (loc, collisions, counters) = choose_distinct(k, n, |j, ex| {
        naive::medoid_search(&p.cols, &p.m, &fields[j], protos.loc[j], &spread, &tie, ex)
    });
    let labels = if sup {
        update_labels(p, protos, |i, j| if winner[i] == j { p.m[i] } else { 0.0 })
    } else {
        protos.labels.clone()
    };
    StepOutput {
        next: MedianPrototypes { loc, labels, label_dim: protos.label_dim },
        assignment: winner.iter().map(|&w| w as u32).collect(),
        cost,
        collisions,
        counters,
    }
}

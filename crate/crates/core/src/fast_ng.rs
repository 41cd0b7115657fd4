//! Exact accelerated median NG search: rank partitions `R^j_k`, candidate
//! orderings and early stopping.
//!
//! Ordered searches accumulate the criterion class by class in the same
//! order as the naive scan, so each partial sum is a prefix of the final
//! value and abandoning on `partial > best` never drops a candidate that
//! could win or tie. The unordered variants keep the canonical per-class
//! sums alongside a running estimate and abandon only past a relative
//! margin that dominates the rounding difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissim::{Columns, Dissimilarity};
use crate::error::{Error, Result};
use crate::median::step::NgContext;
use crate::median::SearchCounters;
use crate::median::naive::weighted_sum;
use crate::rank::TieBreak;

/// Relative slack for abandoning on a sum accumulated out of canonical order.
pub(crate) const ABANDON_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NgImpl {
    Naive,
    EarlyNone,
    EarlyCandidate,
    EarlyFine,
    #[default]
    EarlyCoarse,
}

impl NgImpl {
    pub const ALL: [NgImpl; 5] =
        [NgImpl::Naive, NgImpl::EarlyNone, NgImpl::EarlyCandidate, NgImpl::EarlyFine, NgImpl::EarlyCoarse];

    pub fn id(&self) -> &'static str {
        match self {
            NgImpl::Naive => "naive",
            NgImpl::EarlyNone => "ng-early-none",
            NgImpl::EarlyCandidate => "ng-early-candidate",
            NgImpl::EarlyFine => "ng-early-fine",
            NgImpl::EarlyCoarse => "ng-early-coarse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|i| i.id() == s)
            .ok_or_else(|| Error::config(format!("unknown median NG implementation `{s}`")))
    }
}

/// For every prototype `j`, the points grouped by the rank of `j`:
/// `R^j_k = {i : rk(x^i, w^j) = k}`, members in ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPartition {
    n: usize,
    k: usize,
    /// `offsets[j*(K+1) + r]` indexes into the `j`-th block of `members`.
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl RankPartition {
    /// From a row-major `N × K` rank table.
    pub fn new(ranks: &[u32], n: usize, k: usize) -> Result<Self> {
        if ranks.len() != n * k {
            return Err(Error::Shape { expected: n * k, got: ranks.len() });
        }
        if let Some(&r) = ranks.iter().find(|&&r| r as usize >= k) {
            return Err(Error::Range(format!("rank {r} outside 0..{k}")));
        }
        let mut t = vec![0u32; n * k];
        for i in 0..n {
            for j in 0..k {
                t[j * n + i] = ranks[i * k + j];
            }
        }
        Ok(Self::from_transposed(&t, n, k))
    }

    /// From `ranks_t[j*N + i]`, by a counting sort per prototype.
    pub(crate) fn from_transposed(ranks_t: &[u32], n: usize, k: usize) -> Self {
        let mut offsets = vec![0usize; k * (k + 1)];
        let mut members = vec![0u32; k * n];
        offsets.par_chunks_mut(k + 1).zip(members.par_chunks_mut(n.max(1))).enumerate().for_each(
            |(j, (off, mem))| {
                let r = &ranks_t[j * n..(j + 1) * n];
                for &x in r {
                    off[x as usize + 1] += 1;
                }
                for c in 0..k {
                    off[c + 1] += off[c];
                }
                let mut next = off[..k].to_vec();
                for (i, &x) in r.iter().enumerate() {
                    mem[next[x as usize]] = i as u32;
                    next[x as usize] += 1;
                }
            },
        );
        Self { n, k, offsets, members }
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn prototypes(&self) -> usize {
        self.k
    }

    /// `R^j_r`.
    pub fn class(&self, j: usize, r: usize) -> &[u32] {
        let off = &self.offsets[j * (self.k + 1)..];
        &self.members[j * self.n + off[r]..j * self.n + off[r + 1]]
    }

    /// All points ordered by the rank of prototype `j`, then by index.
    pub fn order(&self, j: usize) -> &[u32] {
        &self.members[j * self.n..(j + 1) * self.n]
    }
}

/// Partition of a row-major `N × K` rank table.
pub fn rank_partition(ranks: &[u32], n: usize, k: usize) -> Result<RankPartition> {
    RankPartition::new(ranks, n, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grain {
    /// Check the budget after every added term.
    Fine,
    /// Check the budget after every completed rank class.
    Coarse,
}

/// Factorized criterion `Σ_r h(r)·Σ_{i∈R^j_r} m_i·col[i]` with budget `q`;
/// `None` once a partial sum exceeds `q`. Classes with `h(r) = 0` add
/// nothing and end the sum, since `h` is nonincreasing.
#[inline]
fn ordered_criterion(col: &[f64], m: &[f64], part: &RankPartition, j: usize, h: &[f64], q: f64, grain: Grain) -> Result<f64, f64> {
    let mut s = 0.0;
    for (r, &hr) in h.iter().enumerate() {
        if hr == 0.0 {
            break;
        }
        let mut t = 0.0;
        match grain {
            Grain::Fine => {
                for &i in part.class(j, r) {
                    let i = i as usize;
                    t += m[i] * col[i];
                    if s + hr * t > q {
                        return Err(s + hr * t);
                    }
                }
                s += hr * t;
            }
            Grain::Coarse => {
                for &i in part.class(j, r) {
                    let i = i as usize;
                    t += m[i] * col[i];
                }
                s += hr * t;
                if s > q {
                    return Err(s);
                }
            }
        }
    }
    Ok(s)
}

/// Criterion of candidate `l` for prototype `j` with coarse-grain stopping
/// at budget `q`. Returns the value (a partial sum if stopped) and whether
/// the evaluation stopped early. `h[r] = h_σ(r)`.
pub fn factorized_criterion(
    d: &dyn Dissimilarity,
    l: usize,
    j: usize,
    part: &RankPartition,
    h: &[f64],
    q: f64,
) -> Result<(f64, bool)> {
    check_inputs(d, part, h)?;
    let col: Vec<f64> = (0..d.len()).map(|i| d.get(i, l)).collect();
    let m = vec![1.0; d.len()];
    Ok(match ordered_criterion(&col, &m, part, j, h, q, Grain::Coarse) {
        Ok(v) => (v, false),
        Err(v) => (v, true),
    })
}

fn check_inputs(d: &dyn Dissimilarity, part: &RankPartition, h: &[f64]) -> Result<()> {
    if d.len() != part.n {
        return Err(Error::Shape { expected: part.n, got: d.len() });
    }
    if h.len() != part.k {
        return Err(Error::Shape { expected: part.k, got: h.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrder {
    /// Field of `j`, then the other fields by increasing `d(w^j, w^k)`.
    FieldDistance,
    /// By the rank of `j`, i.e. `R^j_0, R^j_1, …`.
    Rank,
}

/// Candidate order for prototype `j` at locations `loc`. Fields are the
/// rank-0 classes of `part`; ties in prototype distance go to the lower
/// prototype index and members stay in ascending index.
pub fn order_candidates(j: usize, mode: CandidateOrder, loc: &[usize], d: &dyn Dissimilarity, part: &RankPartition) -> Vec<usize> {
    match mode {
        CandidateOrder::Rank => part.order(j).iter().map(|&i| i as usize).collect(),
        CandidateOrder::FieldDistance => field_order(j, loc, |a, b| d.get(a, b), part),
    }
}

fn field_order(j: usize, loc: &[usize], d: impl Fn(usize, usize) -> f64, part: &RankPartition) -> Vec<usize> {
    let mut protos: Vec<(f64, usize)> = (0..loc.len()).filter(|&k| k != j).map(|k| (d(loc[j], loc[k]), k)).collect();
    protos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(part.n);
    out.extend(part.class(j, 0).iter().map(|&i| i as usize));
    for (_, k) in protos {
        out.extend(part.class(k, 0).iter().map(|&i| i as usize));
    }
    out
}

/// Scans `ordering` keeping the best candidate, evaluating each with the
/// factorized criterion under the current best as budget. Returns the
/// winning index (lowest index on ties) and its exact criterion value.
pub fn ng_prototype_search(
    j: usize,
    ordering: &[usize],
    part: &RankPartition,
    d: &dyn Dissimilarity,
    h: &[f64],
    grain: Grain,
) -> Result<(usize, f64)> {
    check_inputs(d, part, h)?;
    if ordering.is_empty() {
        return Err(Error::config("empty candidate ordering"));
    }
    let cols = Columns::new(d);
    let m = vec![1.0; d.len()];
    let tie = TieBreak::new(Default::default(), d.len(), 0);
    let mut best: Option<(usize, f64)> = None;
    for &l in ordering {
        let q = best.map_or(f64::INFINITY, |b| b.1);
        if let Ok(v) = ordered_criterion(cols.col(l), &m, part, j, h, q, grain) {
            if best.is_none_or(|(bl, bv)| tie.better(v, l, bv, bl)) {
                best = Some((l, v));
            }
        }
    }
    Ok(best.expect("nonempty ordering"))
}

/// Per-epoch searcher for the early-stopping variants.
pub(crate) struct NgSearcher<'c, 'a> {
    ctx: &'c NgContext<'a>,
    imp: NgImpl,
    part: RankPartition,
    field_orders: Vec<Vec<u32>>,
}

impl<'c, 'a> NgSearcher<'c, 'a> {
    pub(crate) fn new(ctx: &'c NgContext<'a>, imp: NgImpl, loc: &[usize]) -> Self {
        let part = RankPartition::from_transposed(ctx.ranks_t, ctx.n, ctx.k);
        let field_orders = if imp == NgImpl::EarlyCandidate {
            (0..ctx.k)
                .into_par_iter()
                .map(|j| field_order(j, loc, |a, b| ctx.cols.at(a, b), &part).into_iter().map(|i| i as u32).collect())
                .collect()
        } else {
            Vec::new()
        };
        Self { ctx, imp, part, field_orders }
    }

    pub(crate) fn search(&self, j: usize, ex: Option<&[bool]>) -> (usize, SearchCounters) {
        let ctx = self.ctx;
        let mut c = SearchCounters::default();
        let mut best: Option<(usize, f64)> = None;
        let offer = |l: usize, v: f64, best: &mut Option<(usize, f64)>| {
            if best.is_none_or(|(bl, bv)| ctx.tie.better(v, l, bv, bl)) {
                *best = Some((l, v));
            }
        };
        match self.imp {
            NgImpl::EarlyFine | NgImpl::EarlyCoarse => {
                let grain = if self.imp == NgImpl::EarlyFine { Grain::Fine } else { Grain::Coarse };
                for &l in self.part.order(j) {
                    let l = l as usize;
                    if ex.is_some_and(|e| e[l]) {
                        continue;
                    }
                    c.candidates_evaluated += 1;
                    let q = best.map_or(f64::INFINITY, |b| b.1);
                    match ordered_criterion(ctx.cols.col(l), ctx.m, &self.part, j, ctx.h, q, grain) {
                        Ok(v) => offer(l, v, &mut best),
                        Err(_) => c.partial_sums_abandoned += 1,
                    }
                }
            }
            NgImpl::EarlyNone | NgImpl::EarlyCandidate | NgImpl::Naive => {
                let ranks = ctx.ranks_of(j);
                let mut acc = vec![0.0; ctx.k];
                let mut visit = |l: usize, best: &mut Option<(usize, f64)>, c: &mut SearchCounters| {
                    if ex.is_some_and(|e| e[l]) {
                        return;
                    }
                    c.candidates_evaluated += 1;
                    acc.fill(0.0);
                    let col = ctx.cols.col(l);
                    let limit = best.map_or(f64::INFINITY, |b| b.1 * (1.0 + ABANDON_MARGIN));
                    let mut est = 0.0;
                    for i in 0..ctx.n {
                        let r = ranks[i] as usize;
                        let x = ctx.m[i] * col[i];
                        acc[r] += x;
                        est += ctx.h[r] * x;
                        if est > limit {
                            c.partial_sums_abandoned += 1;
                            return;
                        }
                    }
                    offer(l, weighted_sum(ctx.h, &acc), best);
                };
                if self.imp == NgImpl::EarlyCandidate {
                    for &l in &self.field_orders[j] {
                        visit(l as usize, &mut best, &mut c);
                    }
                } else {
                    for l in 0..ctx.n {
                        visit(l, &mut best, &mut c);
                    }
                }
            }
        }
        (best.expect("an unexcluded candidate exists").0, c)
    }
}

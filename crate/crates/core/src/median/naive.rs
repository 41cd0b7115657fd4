//! Exhaustive O(N²) per-prototype scans; the reference the fast searches must match.

use super::step::{NgContext, SomContext};
use super::SearchCounters;
use crate::dissim::Columns;
use crate::rank::TieBreak;

#[inline]
fn skip(ex: Option<&[bool]>, l: usize) -> bool {
    ex.is_some_and(|e| e[l])
}

/// `argmin_l Σ_k h(k)·Σ_{i: rank(i,j)=k} m_i·d(i,l)` over all non-excluded `l`.
pub(crate) fn ng_search(ctx: &NgContext<'_>, j: usize, ex: Option<&[bool]>) -> (usize, SearchCounters) {
    let ranks = ctx.ranks_of(j);
    let mut acc = vec![0.0; ctx.k];
    let mut best: Option<(usize, f64)> = None;
    let mut c = SearchCounters::default();
    for l in 0..ctx.n {
        if skip(ex, l) {
            continue;
        }
        c.candidates_evaluated += 1;
        acc.fill(0.0);
        let col = ctx.cols.col(l);
        for i in 0..ctx.n {
            acc[ranks[i] as usize] += ctx.m[i] * col[i];
        }
        let v = weighted_sum(ctx.h, &acc);
        if best.is_none_or(|(bl, bv)| ctx.tie.better(v, l, bv, bl)) {
            best = Some((l, v));
        }
    }
    (best.expect("an unexcluded candidate exists").0, c)
}

/// `argmin_l Σ_k h(nd(k,j))·Σ_{i∈C*_k} m_i·d(i,l)` over all non-excluded `l`.
pub(crate) fn som_search(ctx: &SomContext<'_>, j: usize, ex: Option<&[bool]>) -> (usize, SearchCounters) {
    let k = ctx.k;
    let hj: Vec<f64> = (0..k).map(|r| ctx.hw[r * k + j]).collect();
    let mut acc = vec![0.0; k];
    let mut best: Option<(usize, f64)> = None;
    let mut c = SearchCounters::default();
    for l in 0..ctx.n {
        if skip(ex, l) {
            continue;
        }
        c.candidates_evaluated += 1;
        acc.fill(0.0);
        let col = ctx.cols.col(l);
        for i in 0..ctx.n {
            acc[ctx.owner[i]] += ctx.m[i] * col[i];
        }
        let v = weighted_sum(&hj, &acc);
        if best.is_none_or(|(bl, bv)| ctx.tie.better(v, l, bv, bl)) {
            best = Some((l, v));
        }
    }
    (best.expect("an unexcluded candidate exists").0, c)
}

/// The canonical outer sum `Σ_k w_k·a_k`, `k` ascending.
#[inline]
pub(crate) fn weighted_sum(w: &[f64], a: &[f64]) -> f64 {
    let mut s = 0.0;
    for (w, a) in w.iter().zip(a) {
        s += w * a;
    }
    s
}

/// Medoid of `field` restricted to its own non-excluded members. An empty
/// field keeps `current` if free, else takes the first free point of
/// `spread`. A field whose members are all claimed searches every free point.
pub(crate) fn medoid_search(
    cols: &Columns<'_>,
    m: &[f64],
    field: &[usize],
    current: usize,
    spread: &[usize],
    tie: &TieBreak,
    ex: Option<&[bool]>,
) -> (usize, SearchCounters) {
    let mut c = SearchCounters::default();
    if field.is_empty() {
        if !skip(ex, current) {
            return (current, c);
        }
        let l = *spread.iter().find(|&&l| !skip(ex, l)).expect("a free point exists");
        return (l, c);
    }
    let eval = |l: usize| {
        let col = cols.col(l);
        let mut s = 0.0;
        for &i in field {
            s += m[i] * col[i];
        }
        s
    };
    let mut best: Option<(usize, f64)> = None;
    let consider = |l: usize, best: &mut Option<(usize, f64)>, c: &mut SearchCounters| {
        c.candidates_evaluated += 1;
        let v = eval(l);
        if best.is_none_or(|(bl, bv)| tie.better(v, l, bv, bl)) {
            *best = Some((l, v));
        }
    };
    for &l in field {
        if !skip(ex, l) {
            consider(l, &mut best, &mut c);
        }
    }
    if best.is_none() {
        for l in 0..cols.len() {
            if !skip(ex, l) {
                consider(l, &mut best, &mut c);
            }
        }
    }
    (best.expect("a free point exists").0, c)
}

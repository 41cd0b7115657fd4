//! Collision prevention: no two prototypes may sit on the same data point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rank::TieBreak;

/// Greedy next-best reassignment on full candidate cost lists.
///
/// `costs[j][l]` is the criterion of candidate `l` for prototype `j`.
/// Prototypes are processed in index order; a prototype whose best candidate
/// is already claimed takes its best unclaimed candidate (lowest index on ties).
pub fn resolve_collisions(costs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let k = costs.len();
    let n = costs.first().map_or(0, Vec::len);
    if costs.iter().any(|c| c.len() != n) {
        return Err(Error::config("candidate cost lists differ in length"));
    }
    if k > n {
        return Err(Error::config(format!("{k} prototypes cannot occupy {n} distinct points")));
    }
    let tie = TieBreak::new(Default::default(), n, 0);
    let mut claimed = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for row in costs {
        let mut best: Option<(usize, f64)> = None;
        for (l, &v) in row.iter().enumerate() {
            if claimed[l] {
                continue;
            }
            if best.is_none_or(|(bl, bv)| tie.better(v, l, bv, bl)) {
                best = Some((l, v));
            }
        }
        let (l, _) = best.expect("k <= n leaves an unclaimed candidate");
        claimed[l] = true;
        out.push(l);
    }
    Ok(out)
}

/// Runs `search` for every prototype in parallel, then resolves collisions
/// sequentially in prototype order by re-running the search with the
/// claimed points excluded. Equivalent to [`resolve_collisions`] on the
/// full cost lists as long as `search` is an exact argmin.
///
/// Returns the chosen points and the number of redirected prototypes.
pub(crate) fn choose_distinct<S, C>(k: usize, n: usize, search: S) -> (Vec<usize>, usize, C)
where
    S: Fn(usize, Option<&[bool]>) -> (usize, C) + Sync,
    C: Send + Default + std::ops::AddAssign,
{
    let first: Vec<(usize, C)> = (0..k).into_par_iter().map(|j| search(j, None)).collect();
    let mut claimed = vec![false; n];
    let mut chosen = Vec::with_capacity(k);
    let mut redirects = 0;
    let mut counters = C::default();
    for (j, (mut l, c)) in first.into_iter().enumerate() {
        counters += c;
        if claimed[l] {
            let (l2, c2) = search(j, Some(&claimed));
            counters += c2;
            l = l2;
            redirects += 1;
        }
        claimed[l] = true;
        chosen.push(l);
    }
    (chosen, redirects, counters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_collision_is_identity() {
        let costs = vec![vec![3.0, 1.0, 2.0], vec![0.5, 2.0, 1.0]];
        assert_eq!(resolve_collisions(&costs).unwrap(), vec![1, 0]);
    }

    #[test]
    fn second_prototype_takes_next_best() {
        let mut a = vec![10.0; 8];
        let mut b = vec![10.0; 8];
        a[4] = 1.0;
        b[4] = 1.0;
        b[7] = 2.0;
        assert_eq!(resolve_collisions(&[a, b]).unwrap(), vec![4, 7]);
    }

    #[test]
    fn k_equals_n_claims_everything_once() {
        let costs = vec![vec![0.0, 1.0, 2.0]; 3];
        let mut out = resolve_collisions(&costs).unwrap();
        out.sort();
        assert_eq!(out, vec![0, 1, 2]);
        assert!(resolve_collisions(&[vec![0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn search_based_resolution_matches_cost_lists() {
        let costs: Vec<Vec<f64>> = (0..5)
            .map(|j| (0..9).map(|l| (((j * 7 + l * 3) % 5) as f64) + 0.1 * (l % 2) as f64).collect())
            .collect();
        let search = |j: usize, ex: Option<&[bool]>| {
            let mut best: Option<(usize, f64)> = None;
            for (l, &v) in costs[j].iter().enumerate() {
                if ex.is_some_and(|e| e[l]) {
                    continue;
                }
                if best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((l, v));
                }
            }
            (best.unwrap().0, 0usize)
        };
        let (chosen, _, _) = choose_distinct(5, 9, search);
        assert_eq!(chosen, resolve_collisions(&costs).unwrap());
    }
}

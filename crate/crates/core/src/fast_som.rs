//! Exact accelerated median SOM: block sums `S(k,l)`, lower bounds
//! `η(m,j,Θ)` for branch and bound, and early stopping.
//!
//! A candidate's criterion is `Σ_k h(nd(k,j))·S(k,l)` summed over `k`
//! ascending, exactly as the naive scan sums its per-class accumulators.
//! `η` is summed in the same order from `minS(k,m) ≤ S(k,l)`, so in floating
//! point it stays below every member's criterion and a class is pruned only
//! when `η > best`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissim::{Columns, Dissimilarity};
use crate::error::{Error, Result};
use crate::euclid::som_winner_from_distances;
use crate::fast_ng::ABANDON_MARGIN;
use crate::lattice::Lattice;
use crate::median::naive::weighted_sum;
use crate::median::step::SomContext;
use crate::median::{MedianPrototypes, SearchCounters};
use crate::rank::TieBreak;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SomImpl {
    Naive,
    Block,
    BnbSelf,
    BnbFull,
    #[default]
    BnbFullEarly,
}

impl SomImpl {
    pub const ALL: [SomImpl; 5] = [SomImpl::Naive, SomImpl::Block, SomImpl::BnbSelf, SomImpl::BnbFull, SomImpl::BnbFullEarly];

    pub fn id(&self) -> &'static str {
        match self {
            SomImpl::Naive => "naive",
            SomImpl::Block => "block",
            SomImpl::BnbSelf => "bnb-self",
            SomImpl::BnbFull => "bnb-full",
            SomImpl::BnbFullEarly => "bnb-full-early",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|i| i.id() == s)
            .ok_or_else(|| Error::config(format!("unknown median SOM implementation `{s}`")))
    }
}

/// Partition `C*` of the points by SOM winner; members in ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveFields {
    owner: Vec<usize>,
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl ReceptiveFields {
    pub fn from_owner(owner: Vec<usize>, k: usize) -> Result<Self> {
        let mut offsets = vec![0usize; k + 1];
        for &o in &owner {
            if o >= k {
                return Err(Error::Range(format!("winner {o} outside {k} neurons")));
            }
            offsets[o + 1] += 1;
        }
        for c in 0..k {
            offsets[c + 1] += offsets[c];
        }
        let mut next = offsets[..k].to_vec();
        let mut members = vec![0usize; owner.len()];
        for (i, &o) in owner.iter().enumerate() {
            members[next[o]] = i;
            next[o] += 1;
        }
        Ok(Self { owner, offsets, members })
    }

    pub fn k(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn class(&self, k: usize) -> &[usize] {
        &self.members[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `C*_j = {i : I*(x^i) = j}` with `I*` the neighborhood-averaged winner.
pub fn receptive_fields(d: &dyn Dissimilarity, protos: &MedianPrototypes, lattice: &Lattice, sigma: f64) -> Result<ReceptiveFields> {
    let k = protos.len();
    protos.validate(d.len())?;
    crate::median::check_lattice(lattice, k)?;
    let hw = lattice.weights(sigma);
    let owner: Vec<usize> = (0..d.len())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = protos.loc.iter().map(|&l| d.get(i, l)).collect();
            som_winner_from_distances(&row, &hw)
        })
        .collect();
    ReceptiveFields::from_owner(owner, k)
}

/// `S(k,l) = Σ_{i∈C*_k} m_i·d(i,l)` stored candidate-major, together with
/// `minS(k,m) = min_{l∈C*_m} S(k,l)` gathered in the same pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSums {
    n: usize,
    k: usize,
    /// `s[l*K + k]`.
    s: Vec<f64>,
    /// `min_s[k*K + m]`; `+∞` for empty `C*_m`.
    min_s: Vec<f64>,
    fields: ReceptiveFields,
}

impl BlockSums {
    pub(crate) fn compute(cols: &Columns<'_>, m: &[f64], fields: ReceptiveFields) -> Self {
        let n = cols.len();
        let k = fields.k();
        let owner = fields.owner();
        let mut s = vec![0.0; n * k];
        let min_s = s
            .par_chunks_mut(k)
            .enumerate()
            .fold(
                || vec![f64::INFINITY; k * k],
                |mut mins, (l, row)| {
                    let col = cols.col(l);
                    for i in 0..n {
                        row[owner[i]] += m[i] * col[i];
                    }
                    let c = owner[l];
                    for (r, &v) in row.iter().enumerate() {
                        let e = &mut mins[r * k + c];
                        if v < *e {
                            *e = v;
                        }
                    }
                    mins
                },
            )
            .reduce(|| vec![f64::INFINITY; k * k], |a, b| a.into_iter().zip(b).map(|(x, y)| x.min(y)).collect());
        Self { n, k, s, min_s, fields }
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.s[l * self.k + k]
    }

    pub fn min_s(&self, k: usize, m: usize) -> f64 {
        self.min_s[k * self.k + m]
    }

    pub fn fields(&self) -> &ReceptiveFields {
        &self.fields
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.fields.sizes()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, l: usize) -> &[f64] {
        &self.s[l * self.k..(l + 1) * self.k]
    }
}

/// Block sums of `d` over the partition `fields`.
pub fn block_sums(d: &dyn Dissimilarity, fields: &ReceptiveFields) -> Result<BlockSums> {
    if fields.owner().len() != d.len() {
        return Err(Error::Shape { expected: d.len(), got: fields.owner().len() });
    }
    let cols = Columns::new(d);
    Ok(BlockSums::compute(&cols, &vec![1.0; d.len()], fields.clone()))
}

fn column_weights(hw: &[f64], k: usize, j: usize) -> Vec<f64> {
    (0..k).map(|r| hw[r * k + j]).collect()
}

fn block_search_one(s: &BlockSums, hj: &[f64], tie: &TieBreak, ex: Option<&[bool]>) -> (usize, SearchCounters) {
    let mut c = SearchCounters::default();
    let mut best: Option<(usize, f64)> = None;
    for l in 0..s.n {
        if ex.is_some_and(|e| e[l]) {
            continue;
        }
        c.candidates_evaluated += 1;
        let v = weighted_sum(hj, s.row(l));
        if best.is_none_or(|(bl, bv)| tie.better(v, l, bv, bl)) {
            best = Some((l, v));
        }
    }
    (best.expect("an unexcluded candidate exists").0, c)
}

/// For each prototype, `argmin_l Σ_k h_σ(nd(k,j))·S(k,l)`, lowest index on ties.
pub fn block_prototype_update(s: &BlockSums, lattice: &Lattice, sigma: f64) -> Result<Vec<usize>> {
    crate::median::check_lattice(lattice, s.k)?;
    let hw = lattice.weights(sigma);
    let tie = TieBreak::new(Default::default(), s.n, 0);
    Ok((0..s.k).into_par_iter().map(|j| block_search_one(s, &column_weights(&hw, s.k, j), &tie, None).0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theta {
    /// `Θ = {j}`.
    SelfOnly,
    /// `Θ = {0, …, K-1}`.
    Full,
}

/// `η(m,j,Θ) = Σ_{k∈Θ} h_σ(nd(k,j))·minS(k,m)`, stored `eta[j*K + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    k: usize,
    theta: Theta,
    eta: Vec<f64>,
}

impl BoundTable {
    fn compute(s: &BlockSums, hw: &[f64], theta: Theta) -> Self {
        let k = s.k;
        let sizes = s.fields.sizes();
        let mut eta = vec![0.0; k * k];
        eta.par_chunks_mut(k).enumerate().for_each(|(j, row)| {
            for (m, e) in row.iter_mut().enumerate() {
                *e = if sizes[m] == 0 {
                    f64::INFINITY
                } else {
                    match theta {
                        Theta::SelfOnly => hw[j * k + j] * s.min_s(j, m),
                        Theta::Full => {
                            let mut acc = 0.0;
                            for r in 0..k {
                                acc += hw[r * k + j] * s.min_s(r, m);
                            }
                            acc
                        }
                    }
                };
            }
        });
        Self { k, theta, eta }
    }

    pub fn eta(&self, m: usize, j: usize) -> f64 {
        self.eta[j * self.k + m]
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }
}

pub fn bnb_bounds(s: &BlockSums, theta: Theta, lattice: &Lattice, sigma: f64) -> Result<BoundTable> {
    crate::median::check_lattice(lattice, s.k)?;
    Ok(BoundTable::compute(s, &lattice.weights(sigma), theta))
}

struct BnbQuery<'s> {
    s: &'s BlockSums,
    bounds: &'s BoundTable,
    lattice: &'s Lattice,
    hj: Vec<f64>,
    /// Neurons by decreasing `h(nd(k,j))`, ties by index; zero weights dropped.
    korder: Vec<usize>,
    early: bool,
}

impl<'s> BnbQuery<'s> {
    fn new(s: &'s BlockSums, bounds: &'s BoundTable, lattice: &'s Lattice, hw: &[f64], j: usize, early: bool) -> Self {
        let hj = column_weights(hw, s.k, j);
        let korder = if early {
            let mut o: Vec<usize> = (0..s.k).filter(|&r| hj[r] > 0.0).collect();
            o.sort_by(|&a, &b| hj[b].total_cmp(&hj[a]).then(a.cmp(&b)));
            o
        } else {
            Vec::new()
        };
        Self { s, bounds, lattice, hj, korder, early }
    }

    /// Canonical criterion of `l`, or `None` if early stopping proves it
    /// exceeds `best`.
    fn evaluate(&self, l: usize, best: Option<f64>, c: &mut SearchCounters) -> Option<f64> {
        c.candidates_evaluated += 1;
        let row = self.s.row(l);
        if let (true, Some(b)) = (self.early, best) {
            let limit = b * (1.0 + ABANDON_MARGIN);
            let mut p = 0.0;
            for &r in &self.korder {
                p += self.hj[r] * row[r];
                if p > limit {
                    c.partial_sums_abandoned += 1;
                    return None;
                }
            }
        }
        Some(weighted_sum(&self.hj, row))
    }

    fn search(&self, j: usize, tie: &TieBreak, ex: Option<&[bool]>) -> (usize, SearchCounters) {
        let k = self.s.k;
        let fields = &self.s.fields;
        let free = |l: usize| !ex.is_some_and(|e| e[l]);
        let has_free = |m: usize| fields.class(m).iter().any(|&l| free(l));
        let start = if has_free(j) {
            j
        } else {
            (0..k)
                .filter(|&m| has_free(m))
                .min_by(|&a, &b| self.lattice.nd(j, a).total_cmp(&self.lattice.nd(j, b)).then(a.cmp(&b)))
                .expect("a free point exists")
        };
        let mut c = SearchCounters::default();
        let mut best: Option<(usize, f64)> = None;
        let scan = |m: usize, best: &mut Option<(usize, f64)>, c: &mut SearchCounters| {
            for &l in fields.class(m) {
                if !free(l) {
                    continue;
                }
                if let Some(v) = self.evaluate(l, best.map(|b| b.1), c) {
                    if best.is_none_or(|(bl, bv)| tie.better(v, l, bv, bl)) {
                        *best = Some((l, v));
                    }
                }
            }
        };
        scan(start, &mut best, &mut c);
        let mut rest: Vec<usize> = (0..k).filter(|&m| m != start && !fields.class(m).is_empty()).collect();
        rest.sort_by(|&a, &b| self.bounds.eta(a, j).total_cmp(&self.bounds.eta(b, j)).then(a.cmp(&b)));
        for (pos, &m) in rest.iter().enumerate() {
            let b = best.expect("start class holds a free point").1;
            if self.bounds.eta(m, j) > b {
                c.classes_pruned += (rest.len() - pos) as u64;
                break;
            }
            scan(m, &mut best, &mut c);
        }
        (best.expect("start class holds a free point").0, c)
    }
}

/// Branch-and-bound search for every prototype; same result as
/// [`block_prototype_update`].
pub fn bnb_prototype_search(s: &BlockSums, bounds: &BoundTable, lattice: &Lattice, sigma: f64, early_stop: bool) -> Result<Vec<usize>> {
    crate::median::check_lattice(lattice, s.k)?;
    let hw = lattice.weights(sigma);
    let tie = TieBreak::new(Default::default(), s.n, 0);
    Ok((0..s.k)
        .into_par_iter()
        .map(|j| BnbQuery::new(s, bounds, lattice, &hw, j, early_stop).search(j, &tie, None).0)
        .collect())
}

/// Per-epoch searcher for the block and branch-and-bound variants.
pub(crate) struct SomSearcher<'c, 'a> {
    ctx: &'c SomContext<'a>,
    imp: SomImpl,
    sums: BlockSums,
    bounds: Option<BoundTable>,
}

impl<'c, 'a> SomSearcher<'c, 'a> {
    pub(crate) fn new(ctx: &'c SomContext<'a>, imp: SomImpl) -> Self {
        let fields = ReceptiveFields::from_owner(ctx.owner.to_vec(), ctx.k).expect("owners are valid neurons");
        let sums = BlockSums::compute(ctx.cols, ctx.m, fields);
        let bounds = match imp {
            SomImpl::BnbSelf => Some(BoundTable::compute(&sums, ctx.hw, Theta::SelfOnly)),
            SomImpl::BnbFull | SomImpl::BnbFullEarly => Some(BoundTable::compute(&sums, ctx.hw, Theta::Full)),
            _ => None,
        };
        Self { ctx, imp, sums, bounds }
    }

    pub(crate) fn search(&self, j: usize, ex: Option<&[bool]>) -> (usize, SearchCounters) {
        match &self.bounds {
            None => block_search_one(&self.sums, &column_weights(self.ctx.hw, self.ctx.k, j), self.ctx.tie, ex),
            Some(b) => BnbQuery::new(&self.sums, b, self.ctx.lattice, self.ctx.hw, j, self.imp == SomImpl::BnbFullEarly)
                .search(j, self.ctx.tie, ex),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        DenseMatrix::from_fn(n, |i, j| (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum()).unwrap()
    }

    fn random_owner(n: usize, k: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..k)).collect()
    }

    fn criterion(d: &DenseMatrix, owner: &[usize], hw: &[f64], k: usize, j: usize, l: usize) -> f64 {
        (0..d.len()).map(|i| hw[owner[i] * k + j] * d.get(i, l)).sum()
    }

    #[test]
    fn block_sums_match_double_loop() {
        let d = random_matrix(8, 1);
        let owner = random_owner(8, 3, 2);
        let f = ReceptiveFields::from_owner(owner.clone(), 3).unwrap();
        let s = block_sums(&d, &f).unwrap();
        for k in 0..3 {
            for l in 0..8 {
                let want: f64 = (0..8).filter(|&i| owner[i] == k).map(|i| d.get(i, l)).sum();
                assert!((s.get(k, l) - want).abs() < 1e-12);
            }
        }
        for l in 0..8 {
            let total: f64 = (0..3).map(|k| s.get(k, l)).sum();
            let row: f64 = (0..8).map(|i| d.get(i, l)).sum();
            assert!((total - row).abs() < 1e-12);
        }
        for k in 0..3 {
            for m in 0..3 {
                let want = f.class(m).iter().map(|&l| s.get(k, l)).fold(f64::INFINITY, f64::min);
                assert_eq!(s.min_s(k, m), want);
            }
        }
    }

    #[test]
    fn singleton_and_single_class_sums() {
        let d = random_matrix(5, 3);
        let one = block_sums(&d, &ReceptiveFields::from_owner(vec![0; 5], 1).unwrap()).unwrap();
        for l in 0..5 {
            assert!((one.get(0, l) - (0..5).map(|i| d.get(i, l)).sum::<f64>()).abs() < 1e-12);
        }
        let single = block_sums(&d, &ReceptiveFields::from_owner(vec![0, 1, 2, 3, 4], 5).unwrap()).unwrap();
        for k in 0..5 {
            for l in 0..5 {
                assert_eq!(single.get(k, l), d.get(k, l));
            }
        }
    }

    #[test]
    fn receptive_fields_hand_example() {
        // Points 0,1,2 near 0 and 3,4,5 near 10 on a line; chain of two neurons.
        let xs = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let d = DenseMatrix::from_fn(6, |i, j| (xs[i] - xs[j]) * (xs[i] - xs[j])).unwrap();
        let protos = MedianPrototypes::new(vec![1, 4]);
        let f = receptive_fields(&d, &protos, &Lattice::chain(2).unwrap(), 0.5).unwrap();
        assert_eq!(f.class(0), &[0, 1, 2]);
        assert_eq!(f.class(1), &[3, 4, 5]);
        let all = receptive_fields(&d, &MedianPrototypes::new(vec![2]), &Lattice::chain(1).unwrap(), 1.0).unwrap();
        assert_eq!(all.class(0).len(), 6);
    }

    #[test]
    fn bounds_are_sound_and_monotone() {
        for seed in 0..6 {
            let n = 60;
            let k = 6;
            let d = random_matrix(n, 10 + seed);
            let owner = random_owner(n, k, 20 + seed);
            let f = ReceptiveFields::from_owner(owner.clone(), k).unwrap();
            let s = block_sums(&d, &f).unwrap();
            let lat = Lattice::rectangular(2, 3).unwrap();
            let sigma = 0.8;
            let hw = lat.weights(sigma);
            let selfb = bnb_bounds(&s, Theta::SelfOnly, &lat, sigma).unwrap();
            let full = bnb_bounds(&s, Theta::Full, &lat, sigma).unwrap();
            for j in 0..k {
                for m in 0..k {
                    assert!(full.eta(m, j) >= selfb.eta(m, j));
                    if f.class(m).is_empty() {
                        assert_eq!(full.eta(m, j), f64::INFINITY);
                        continue;
                    }
                    let min = f.class(m).iter().map(|&l| criterion(&d, &owner, &hw, k, j, l)).fold(f64::INFINITY, f64::min);
                    assert!(full.eta(m, j) <= min * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn all_searches_agree() {
        for seed in 0..8 {
            let n = 120;
            let lat = Lattice::hexagonal(3, 3).unwrap();
            let k = lat.len();
            let d = random_matrix(n, 40 + seed);
            let f = ReceptiveFields::from_owner(random_owner(n, k, 50 + seed), k).unwrap();
            let s = block_sums(&d, &f).unwrap();
            let sigma = [2.0, 0.5, 0.05][seed as usize % 3];
            let block = block_prototype_update(&s, &lat, sigma).unwrap();
            for (theta, early) in [(Theta::SelfOnly, false), (Theta::Full, false), (Theta::Full, true)] {
                let b = bnb_bounds(&s, theta, &lat, sigma).unwrap();
                assert_eq!(bnb_prototype_search(&s, &b, &lat, sigma, early).unwrap(), block);
            }
        }
    }

    #[test]
    fn impl_ids_round_trip() {
        for i in SomImpl::ALL {
            assert_eq!(SomImpl::parse(i.id()).unwrap(), i);
        }
        assert!(SomImpl::parse("fast").is_err());
    }
}

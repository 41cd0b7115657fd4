//! Single-pass patch median NG for dissimilarity matrices too large to hold.
//!
//! The points are cut into `n_p` consecutive patches. Each patch is trained
//! together with the prototypes of the previous step, which enter as extra
//! points weighted by the number of original points they represent.

use std::io::Read;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{argmax, Labels};
use crate::dissim::{Columns, DenseMatrix, Dissimilarity, DsmRowReader};
use crate::error::{Error, Result};
use crate::median::{train_on, MedianConfig, MedianPrototypes, Problem};
use crate::rng::derive_seed;

/// Consecutive patches; the first `N - p·n_p` get one extra point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    n: usize,
    base: usize,
    bounds: Vec<Range<usize>>,
}

impl PatchPlan {
    pub fn new(n: usize, n_p: usize) -> Result<Self> {
        if n_p == 0 || n_p > n {
            return Err(Error::config(format!("cannot cut {n} points into {n_p} patches")));
        }
        let base = n / n_p;
        let extra = n - base * n_p;
        let mut bounds = Vec::with_capacity(n_p);
        let mut start = 0;
        for i in 0..n_p {
            let len = base + usize::from(i < extra);
            bounds.push(start..start + len);
            start += len;
        }
        Ok(Self { n, base, bounds })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// `p = floor(N / n_p)`.
    pub fn base_size(&self) -> usize {
        self.base
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.bounds[i].clone()
    }
}

/// Prototypes handed from one patch to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriedPrototypes {
    /// Global data indices.
    pub loc: Vec<usize>,
    /// Total multiplicity of each receptive field.
    pub mass: Vec<f64>,
    /// Row-major `K × C` class counts represented by each prototype.
    pub class_mass: Option<Vec<f64>>,
    /// Trained label vectors when supervised.
    pub labels: Option<Vec<f64>>,
    /// Row-major `K × K` dissimilarities among the prototypes, kept from the
    /// previous extended patch so they are not read again.
    pub dissim: Option<Vec<f64>>,
}

/// Carried prototypes followed by the points of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPatch {
    pub dissim: DenseMatrix,
    pub multiplicity: Vec<f64>,
    /// Global index of every row.
    pub origin: Vec<usize>,
    /// Number of leading rows that are carried prototypes.
    pub carried: usize,
}

impl ExtendedPatch {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }
}

fn require_symmetric(d: &dyn Dissimilarity) -> Result<()> {
    if !d.is_symmetric() {
        return Err(Error::config("patch clustering needs a symmetric dissimilarity source"));
    }
    Ok(())
}

/// Assembles patch `i` with the carried prototypes, reading each needed
/// entry of `d` once from the upper triangle. The diagonal is zero.
/// Distances among carried prototypes come from `prev.dissim` when present.
pub fn build_extended_patch(d: &dyn Dissimilarity, plan: &PatchPlan, i: usize, prev: Option<&CarriedPrototypes>) -> Result<ExtendedPatch> {
    require_symmetric(d)?;
    if plan.points() != d.len() {
        return Err(Error::Shape { expected: plan.points(), got: d.len() });
    }
    if i >= plan.len() {
        return Err(Error::Range(format!("patch {i} outside {} patches", plan.len())));
    }
    let mut origin = Vec::new();
    let mut multiplicity = Vec::new();
    if let Some(c) = prev {
        origin.extend_from_slice(&c.loc);
        multiplicity.extend_from_slice(&c.mass);
    }
    let carried = origin.len();
    origin.extend(plan.range(i));
    multiplicity.resize(origin.len(), 1.0);
    let m = origin.len();
    let mut data = vec![0.0; m * m];
    let cached = prev.and_then(|c| c.dissim.as_ref());
    if let Some(block) = cached {
        if block.len() != carried * carried {
            return Err(Error::Shape { expected: carried * carried, got: block.len() });
        }
        for a in 0..carried {
            data[a * m..a * m + carried].copy_from_slice(&block[a * carried..(a + 1) * carried]);
        }
    }
    for a in 0..m {
        let from = if cached.is_some() && a < carried { carried } else { a + 1 };
        for b in from..m {
            let v = d.get(origin[a], origin[b]);
            data[a * m + b] = v;
            data[b * m + a] = v;
        }
    }
    Ok(ExtendedPatch { dissim: DenseMatrix::from_vec(m, data)?, multiplicity, origin, carried })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplicityMode {
    /// Weight `m_i` of the summed point, in cost and argmin.
    #[default]
    Point,
    /// Weight `m_j` of the prototype; constant in the argmin, so the update
    /// ignores multiplicities.
    PrototypeLiteral,
}

/// Outcome of weighted median NG on one extended patch.
#[derive(Debug, Clone)]
pub struct WeightedResult {
    /// Local row indices into the extended patch.
    pub prototypes: MedianPrototypes,
    /// Σ of multiplicities over each receptive field.
    pub mass: Vec<f64>,
    pub winner: Vec<usize>,
    pub epochs_run: usize,
    pub quantization_half: f64,
}

/// Median NG where row `i` of the extended patch stands for `m_i` points.
pub fn weighted_median_ng(
    ext: &ExtendedPatch,
    labels: Option<&Labels>,
    config: &MedianConfig,
    mode: MultiplicityMode,
) -> Result<WeightedResult> {
    let weights = match mode {
        MultiplicityMode::Point => ext.multiplicity.clone(),
        MultiplicityMode::PrototypeLiteral => vec![1.0; ext.len()],
    };
    let problem = Problem::from_columns(Columns::new(&ext.dissim), weights, labels);
    let fit = train_on(&problem, None, config)?;
    let mut mass = vec![0.0; config.k];
    for (i, &j) in fit.winner.iter().enumerate() {
        mass[j] += ext.multiplicity[i];
    }
    Ok(WeightedResult {
        prototypes: fit.prototypes,
        mass,
        winner: fit.winner,
        epochs_run: fit.epochs_run,
        quantization_half: fit.quantization.half,
    })
}

#[derive(Debug, Clone)]
pub struct PatchConfig {
    /// Per-patch training; its schedule restarts in every patch.
    pub median: MedianConfig,
    pub n_p: usize,
    pub multiplicity: MultiplicityMode,
}

impl PatchConfig {
    pub fn new(median: MedianConfig, n_p: usize) -> Self {
        Self { median, n_p, multiplicity: MultiplicityMode::Point }
    }
}

/// Bookkeeping of one processed patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch: usize,
    pub rows: usize,
    pub epochs_run: usize,
    pub quantization_half: f64,
    /// Σ of carried multiplicities after this patch.
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct PatchFit {
    pub prototypes: CarriedPrototypes,
    pub history: Vec<PatchRecord>,
    pub plan: PatchPlan,
}

impl PatchFit {
    /// Majority class of the labeled points each prototype represents,
    /// lowest class on ties; `None` without labels.
    pub fn prototype_classes(&self) -> Option<Vec<usize>> {
        let cm = self.prototypes.class_mass.as_ref()?;
        let k = self.prototypes.loc.len();
        let c = cm.len() / k.max(1);
        Some(cm.chunks(c.max(1)).take(k).map(argmax).collect())
    }
}

/// Labels of the extended patch rows: carried prototypes use their trained
/// label vector (renormalized) when supervised, else their own point's label.
fn extended_labels(labels: &Labels, origin: &[usize], prev: Option<&CarriedPrototypes>) -> Result<Labels> {
    let c = labels.dim();
    let mut coding = vec![0.0; origin.len() * c];
    let mut mask = vec![false; origin.len()];
    for (r, &g) in origin.iter().enumerate() {
        let trained = prev.and_then(|p| p.labels.as_ref()).filter(|_| r < prev.map_or(0, |p| p.loc.len()));
        if let Some(y) = trained {
            let row = &y[r * c..(r + 1) * c];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for (o, v) in coding[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *o = v / s;
                }
                mask[r] = true;
            }
        } else if labels.is_labeled(g) {
            coding[r * c..(r + 1) * c].copy_from_slice(labels.row(g));
            mask[r] = true;
        }
    }
    Labels::from_coding(coding, mask, labels.classes().to_vec())
}

struct PatchState {
    carried: Option<CarriedPrototypes>,
    history: Vec<PatchRecord>,
    seen: usize,
}

impl PatchState {
    fn absorb(&mut self, i: usize, ext: &ExtendedPatch, labels: Option<&Labels>, config: &PatchConfig) -> Result<()> {
        let mut median = config.median.clone();
        if i > 0 {
            median.seed = derive_seed(config.median.seed, i as u64);
        }
        let ext_labels = labels.map(|l| extended_labels(l, &ext.origin, self.carried.as_ref())).transpose()?;
        let res = weighted_median_ng(ext, ext_labels.as_ref(), &median, config.multiplicity)?;

        let class_mass = labels.map(|l| {
            let c = l.dim();
            let k = median.k;
            let mut cm = vec![0.0; k * c];
            for (r, &j) in res.winner.iter().enumerate() {
                let src: Vec<f64> = match (&self.carried, r < ext.carried) {
                    (Some(p), true) => p.class_mass.as_ref().expect("class mass tracked")[r * c..(r + 1) * c].to_vec(),
                    _ => {
                        let g = ext.origin[r];
                        if l.is_labeled(g) { l.row(g).to_vec() } else { vec![0.0; c] }
                    }
                };
                for (t, v) in cm[j * c..(j + 1) * c].iter_mut().zip(src) {
                    *t += v;
                }
            }
            cm
        });
        self.seen += ext.len() - ext.carried;
        let total: f64 = res.mass.iter().sum();
        self.history.push(PatchRecord {
            patch: i,
            rows: ext.len(),
            epochs_run: res.epochs_run,
            quantization_half: res.quantization_half,
            mass: total,
        });
        let local = &res.prototypes.loc;
        let dissim = local.iter().flat_map(|&a| local.iter().map(move |&b| ext.dissim.get(a, b))).collect();
        self.carried = Some(CarriedPrototypes {
            loc: local.iter().map(|&r| ext.origin[r]).collect(),
            mass: res.mass,
            class_mass,
            labels: res.prototypes.labels,
            dissim: Some(dissim),
        });
        Ok(())
    }

    fn finish(self, plan: PatchPlan) -> PatchFit {
        PatchFit { prototypes: self.carried.expect("at least one patch"), history: self.history, plan }
    }
}

fn check_config(n: usize, config: &PatchConfig) -> Result<PatchPlan> {
    let plan = PatchPlan::new(n, config.n_p)?;
    if config.median.k > plan.base_size() {
        return Err(Error::config(format!(
            "K = {} exceeds the patch size {}",
            config.median.k,
            plan.base_size()
        )));
    }
    if config.median.algorithm != crate::median::Algorithm::MedianNg {
        return Err(Error::config("patch clustering is implemented for median NG only"));
    }
    Ok(plan)
}

/// Patch median NG over a symmetric in-memory or on-the-fly source.
pub fn patch_median_ng(d: &dyn Dissimilarity, labels: Option<&Labels>, config: &PatchConfig) -> Result<PatchFit> {
    require_symmetric(d)?;
    if let Some(l) = labels {
        if l.len() != d.len() {
            return Err(Error::Shape { expected: d.len(), got: l.len() });
        }
    }
    let plan = check_config(d.len(), config)?;
    let mut state = PatchState { carried: None, history: Vec::new(), seen: 0 };
    for i in 0..plan.len() {
        let ext = build_extended_patch(d, &plan, i, state.carried.as_ref())?;
        state.absorb(i, &ext, labels, config)?;
    }
    debug_assert_eq!(state.seen, d.len());
    Ok(state.finish(plan))
}

/// Patch median NG reading the matrix row by row; only the current patch's
/// block and the columns of the carried prototypes are kept.
pub fn patch_median_ng_streaming<R: Read>(
    mut rows: DsmRowReader<R>,
    labels: Option<&Labels>,
    config: &PatchConfig,
) -> Result<PatchFit> {
    let n = rows.len();
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Shape { expected: n, got: l.len() });
        }
    }
    let plan = check_config(n, config)?;
    let mut state = PatchState { carried: None, history: Vec::new(), seen: 0 };
    for i in 0..plan.len() {
        let range = plan.range(i);
        let carried = state.carried.as_ref();
        let kc = carried.map_or(0, |c| c.loc.len());
        let mut origin: Vec<usize> = carried.map_or_else(Vec::new, |c| c.loc.clone());
        origin.extend(range.clone());
        let m = origin.len();
        let mut data = vec![0.0; m * m];
        if let Some(block) = carried.and_then(|c| c.dissim.as_ref()) {
            for a in 0..kc {
                data[a * m..a * m + kc].copy_from_slice(&block[a * kc..(a + 1) * kc]);
            }
        }
        for (r, g) in range.clone().enumerate() {
            let row = rows.next_row()?.ok_or_else(|| Error::data(format!("matrix ended before row {g}")))?;
            let a = kc + r;
            for b in 0..m {
                if b == a {
                    continue;
                }
                let v = row[origin[b]];
                data[a * m + b] = v;
                if b < kc {
                    data[b * m + a] = v;
                }
            }
        }
        for a in kc..m {
            for b in a + 1..m {
                if data[a * m + b] != data[b * m + a] {
                    return Err(Error::config(format!(
                        "streamed matrix is not symmetric at ({}, {})",
                        origin[a], origin[b]
                    )));
                }
            }
        }
        let mut multiplicity = carried.map_or_else(Vec::new, |c| c.mass.clone());
        multiplicity.resize(m, 1.0);
        let ext = ExtendedPatch { dissim: DenseMatrix::from_vec(m, data)?, multiplicity, origin, carried: kc };
        state.absorb(i, &ext, labels, config)?;
    }
    Ok(state.finish(plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::CountingSource;
    use crate::median::{train_median, Algorithm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        DenseMatrix::from_fn(n, |i, j| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()).unwrap()
    }

    #[test]
    fn plan_distributes_remainder_first() {
        let p = PatchPlan::new(17, 5).unwrap();
        assert_eq!(p.base_size(), 3);
        let sizes: Vec<usize> = (0..5).map(|i| p.range(i).len()).collect();
        assert_eq!(sizes, vec![4, 4, 3, 3, 3]);
        assert_eq!(p.range(4).end, 17);
        assert!(PatchPlan::new(3, 4).is_err());
        assert!(PatchPlan::new(3, 0).is_err());
    }

    #[test]
    fn extended_patch_layout() {
        let d = random_matrix(10, 1);
        let plan = PatchPlan::new(10, 2).unwrap();
        let prev = CarriedPrototypes { loc: vec![1, 3], mass: vec![2.0, 3.0], class_mass: None, labels: None, dissim: None };
        let ext = build_extended_patch(&d, &plan, 1, Some(&prev)).unwrap();
        assert_eq!(ext.len(), 7);
        assert_eq!(ext.origin, vec![1, 3, 5, 6, 7, 8, 9]);
        assert_eq!(ext.multiplicity, vec![2.0, 3.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        for a in 0..7 {
            for b in 0..7 {
                assert_eq!(ext.dissim.get(a, b), d.get(ext.origin[a], ext.origin[b]));
            }
        }
        let plain = build_extended_patch(&d, &plan, 0, None).unwrap();
        assert_eq!(plain.origin, vec![0, 1, 2, 3, 4]);
        let asym = DenseMatrix::from_vec(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(build_extended_patch(&asym, &PatchPlan::new(2, 1).unwrap(), 0, None).is_err());
    }

    #[test]
    fn one_patch_equals_plain_median_ng() {
        let d = random_matrix(60, 2);
        let median = MedianConfig::new(Algorithm::MedianNg, 5).epochs(30).seed(7);
        let plain = train_median(&d, None, &median).unwrap();
        let fit = patch_median_ng(&d, None, &PatchConfig::new(median, 1)).unwrap();
        assert_eq!(fit.prototypes.loc, plain.prototypes.loc);
        assert_eq!(fit.history[0].quantization_half, plain.quantization.half);
    }

    #[test]
    fn mass_is_conserved() {
        let d = random_matrix(103, 3);
        let median = MedianConfig::new(Algorithm::MedianNg, 6).epochs(20).seed(1);
        let fit = patch_median_ng(&d, None, &PatchConfig::new(median, 4)).unwrap();
        let plan = PatchPlan::new(103, 4).unwrap();
        let mut seen = 0;
        for (i, rec) in fit.history.iter().enumerate() {
            seen += plan.range(i).len();
            assert_eq!(rec.mass, seen as f64);
        }
        assert_eq!(fit.prototypes.mass.iter().sum::<f64>(), 103.0);
    }

    #[test]
    fn accesses_stay_within_single_pass_bound() {
        let d = random_matrix(1000, 4);
        let counted = CountingSource::with_entry_counts(&d);
        let median = MedianConfig::new(Algorithm::MedianNg, 10).epochs(5).seed(2);
        patch_median_ng(&counted, None, &PatchConfig::new(median, 10)).unwrap();
        assert!(counted.accesses() <= 1000 * 100 + 1000 * 10);
        let plan = PatchPlan::new(1000, 10).unwrap();
        for p in 0..10 {
            for i in plan.range(p) {
                for j in plan.range(p) {
                    assert!(counted.entry_count(i, j).unwrap() + counted.entry_count(j, i).unwrap() <= 1);
                }
            }
        }
        for i in 0..1000 {
            for j in 0..1000 {
                assert!(counted.entry_count(i, j).unwrap() <= 1);
            }
        }
    }

    #[test]
    fn k_above_patch_size_is_rejected() {
        let d = random_matrix(20, 5);
        let median = MedianConfig::new(Algorithm::MedianNg, 6).epochs(2);
        assert!(patch_median_ng(&d, None, &PatchConfig::new(median, 4)).is_err());
    }

    #[test]
    fn streaming_matches_in_memory() {
        let d = random_matrix(90, 6);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(crate::dissim::DSM_MAGIC);
        bytes.extend_from_slice(&(90u64).to_le_bytes());
        for v in d.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let median = MedianConfig::new(Algorithm::MedianNg, 5).epochs(15).seed(3);
        let cfg = PatchConfig::new(median, 3);
        let a = patch_median_ng(&d, None, &cfg).unwrap();
        let b = patch_median_ng_streaming(DsmRowReader::from_reader(bytes.as_slice()).unwrap(), None, &cfg).unwrap();
        assert_eq!(a.prototypes, b.prototypes);
    }

    #[test]
    fn weighted_k1_is_weighted_generalized_median() {
        let d = random_matrix(15, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Vec<f64> = (0..15).map(|_| rng.gen_range(1..5) as f64).collect();
        let ext = ExtendedPatch { dissim: d.clone(), multiplicity: m.clone(), origin: (0..15).collect(), carried: 0 };
        let cfg = MedianConfig::new(Algorithm::MedianNg, 1).epochs(3);
        let res = weighted_median_ng(&ext, None, &cfg, MultiplicityMode::Point).unwrap();
        let sums: Vec<f64> = (0..15).map(|l| (0..15).map(|i| m[i] * d.get(i, l)).sum()).collect();
        assert_eq!(res.prototypes.loc, vec![crate::rank::argmin(&sums)]);
        assert_eq!(res.mass, vec![m.iter().sum::<f64>()]);
    }

    #[test]
    fn unit_multiplicities_match_plain_training() {
        let d = random_matrix(40, 10);
        let ext = ExtendedPatch { dissim: d.clone(), multiplicity: vec![1.0; 40], origin: (0..40).collect(), carried: 0 };
        let cfg = MedianConfig::new(Algorithm::MedianNg, 4).epochs(20).seed(5);
        let res = weighted_median_ng(&ext, None, &cfg, MultiplicityMode::Point).unwrap();
        assert_eq!(res.prototypes.loc, train_median(&d, None, &cfg).unwrap().prototypes.loc);
    }
}

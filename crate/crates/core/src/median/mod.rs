//! Median clustering: prototypes are restricted to data points and all
//! computation runs on a dissimilarity source.
//!
//! Every criterion value is summed in one canonical order (per-class
//! partial sums over ascending point index, classes in ascending order), so
//! the naive scans here and the accelerated searches in [`crate::fast_ng`]
//! and [`crate::fast_som`] select identical prototypes.

mod collision;
pub(crate) mod naive;
pub(crate) mod step;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use collision::resolve_collisions;
pub(crate) use collision::choose_distinct;
pub(crate) use step::Problem;

use crate::dataset::{argmax, Labels};
use crate::dissim::Dissimilarity;
use crate::error::{Error, Result};
use crate::euclid::{check_k, QuantizationError};
use crate::fast_ng::NgImpl;
use crate::fast_som::SomImpl;
use crate::lattice::Lattice;
use crate::rank::TiePolicy;
use crate::rng::{rng, sample_distinct, GENERATOR};
use crate::schedule::AnnealingSchedule;

/// Prototype locations (data indices) and optional label vectors `Y^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianPrototypes {
    pub loc: Vec<usize>,
    /// Row-major `K × label_dim`.
    pub labels: Option<Vec<f64>>,
    pub label_dim: usize,
}

impl MedianPrototypes {
    pub fn new(loc: Vec<usize>) -> Self {
        Self { loc, labels: None, label_dim: 0 }
    }

    /// Prototypes at `loc` whose label vectors start at the labels of their points
    /// (zero for unlabeled points).
    pub fn with_labels_from(loc: Vec<usize>, labels: &Labels) -> Result<Self> {
        let d = labels.dim();
        let mut y = vec![0.0; loc.len() * d];
        for (j, &l) in loc.iter().enumerate() {
            if l >= labels.len() {
                return Err(Error::Range(format!("prototype location {l} outside {} points", labels.len())));
            }
            if labels.is_labeled(l) {
                y[j * d..(j + 1) * d].copy_from_slice(labels.row(l));
            }
        }
        Ok(Self { loc, labels: Some(y), label_dim: d })
    }

    /// `K` distinct indices of `0..n` drawn from `seed`.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        check_k(k, n)?;
        Ok(Self::new(sample_distinct(&mut rng(seed), n, k)))
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    pub fn label(&self, j: usize) -> Option<&[f64]> {
        self.labels.as_ref().map(|y| &y[j * self.label_dim..(j + 1) * self.label_dim])
    }

    /// Crisp class of each prototype label vector, lowest class on ties.
    pub fn crisp_labels(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|y| {
            y.chunks(self.label_dim.max(1)).take(self.loc.len()).map(argmax).collect()
        })
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        check_k(self.loc.len(), n)?;
        let mut seen = vec![false; n];
        for &l in &self.loc {
            if l >= n {
                return Err(Error::Range(format!("prototype location {l} outside {n} points")));
            }
            if std::mem::replace(&mut seen[l], true) {
                return Err(Error::Invariant(format!("two prototypes share point {l}")));
            }
        }
        if let Some(y) = &self.labels {
            if y.len() != self.loc.len() * self.label_dim {
                return Err(Error::Shape { expected: self.loc.len() * self.label_dim, got: y.len() });
            }
        }
        Ok(())
    }
}

/// Label blending: `d_β = β·d + (1-β)·‖y - Y‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisionConfig {
    pub beta: f64,
    pub enabled: bool,
    /// Ranks and winners use `d_β` (true) or the input dissimilarity alone.
    pub rank_on_blended: bool,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self { beta: 1.0, enabled: false, rank_on_blended: true }
    }
}

impl SupervisionConfig {
    pub fn supervised(beta: f64) -> Result<Self> {
        let s = Self { beta, enabled: true, rank_on_blended: true };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// `β·d + (1-β)·‖y - Y‖²`; an unlabeled point contributes `β·d` only.
pub fn blended_distance(d_input: f64, y: Option<&[f64]>, proto_label: &[f64], beta: f64) -> f64 {
    match y {
        Some(y) => beta * d_input + (1.0 - beta) * label_gap(y, proto_label),
        None => beta * d_input,
    }
}

#[inline]
pub(crate) fn label_gap(y: &[f64], proto_label: &[f64]) -> f64 {
    y.iter().zip(proto_label).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MedianNg,
    MedianSom,
    Kmedoids,
}

impl Algorithm {
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::MedianNg => "median-ng",
            Algorithm::MedianSom => "median-som",
            Algorithm::Kmedoids => "kmedoids",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "median-ng" => Ok(Algorithm::MedianNg),
            "median-som" => Ok(Algorithm::MedianSom),
            "kmedoids" => Ok(Algorithm::Kmedoids),
            _ => Err(Error::config(format!("unknown algorithm `{s}`"))),
        }
    }
}

/// Search and collision counters of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchCounters {
    pub candidates_evaluated: u64,
    pub classes_pruned: u64,
    pub partial_sums_abandoned: u64,
}

impl std::ops::AddAssign for SearchCounters {
    fn add_assign(&mut self, o: Self) {
        self.candidates_evaluated += o.candidates_evaluated;
        self.classes_pruned += o.classes_pruned;
        self.partial_sums_abandoned += o.partial_sums_abandoned;
    }
}

/// One training epoch. `cost` is the algorithm's cost at the assignments
/// computed in this epoch and the prototypes entering it, halved like
/// [`QuantizationError::half`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianEpoch {
    pub epoch: usize,
    pub sigma: f64,
    pub cost: f64,
    pub moved: usize,
    pub collisions: usize,
    pub counters: SearchCounters,
    pub seconds: f64,
}

/// Training configuration shared by the three median algorithms.
#[derive(Debug, Clone)]
pub struct MedianConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    /// Epoch budget.
    pub epochs: usize,
    /// Defaults to an exponential anneal over `epochs` from `K/2` (NG) or half
    /// the lattice diameter (SOM) down to 0.01.
    pub schedule: Option<AnnealingSchedule>,
    pub seed: u64,
    pub supervision: SupervisionConfig,
    pub tie: TiePolicy,
    pub ng_impl: NgImpl,
    pub som_impl: SomImpl,
    /// SOM lattice; defaults to the near-square hexagonal grid of `K` neurons.
    pub lattice: Option<Lattice>,
}

pub const DEFAULT_SIGMA_END: f64 = 0.01;

impl MedianConfig {
    pub fn new(algorithm: Algorithm, k: usize) -> Self {
        Self {
            algorithm,
            k,
            epochs: 100,
            schedule: None,
            seed: 0,
            supervision: SupervisionConfig::default(),
            tie: TiePolicy::default(),
            ng_impl: NgImpl::default(),
            som_impl: SomImpl::default(),
            lattice: None,
        }
    }

    pub fn epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn schedule(mut self, schedule: AnnealingSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn supervision(mut self, supervision: SupervisionConfig) -> Self {
        self.supervision = supervision;
        self
    }

    pub fn tie(mut self, tie: TiePolicy) -> Self {
        self.tie = tie;
        self
    }

    pub fn ng_impl(mut self, imp: NgImpl) -> Self {
        self.ng_impl = imp;
        self
    }

    pub fn som_impl(mut self, imp: SomImpl) -> Self {
        self.som_impl = imp;
        self
    }

    pub fn lattice(mut self, lattice: Lattice) -> Self {
        self.lattice = Some(lattice);
        self
    }

    pub fn resolved_lattice(&self) -> Result<Lattice> {
        match &self.lattice {
            Some(l) if l.len() != self.k => {
                Err(Error::config(format!("lattice has {} neurons but K = {}", l.len(), self.k)))
            }
            Some(l) => Ok(l.clone()),
            None => Lattice::near_square_hexagonal(self.k),
        }
    }

    pub fn resolved_schedule(&self) -> Result<AnnealingSchedule> {
        if let Some(s) = self.schedule {
            return Ok(s);
        }
        let start = match self.algorithm {
            Algorithm::MedianNg => self.k as f64 / 2.0,
            Algorithm::MedianSom => self.resolved_lattice()?.diameter() / 2.0,
            Algorithm::Kmedoids => DEFAULT_SIGMA_END,
        };
        AnnealingSchedule::new(start.max(DEFAULT_SIGMA_END), DEFAULT_SIGMA_END, self.epochs.max(1))
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_k(self.k, n)?;
        self.supervision.validate()
    }
}

/// Result of a median training run.
#[derive(Debug, Clone)]
pub struct MedianFit {
    pub prototypes: MedianPrototypes,
    /// Winner of every point by input dissimilarity at the final prototypes.
    pub winner: Vec<usize>,
    pub history: Vec<MedianEpoch>,
    /// Prototype locations after each recorded epoch.
    pub trajectory: Vec<Vec<usize>>,
    pub converged: bool,
    pub epochs_run: usize,
    pub schedule: AnnealingSchedule,
    /// Weighted by point multiplicities when present.
    pub quantization: QuantizationError,
    /// Sum of point weights in each receptive field of `winner`.
    pub field_mass: Vec<f64>,
}

impl MedianFit {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.history.is_empty() {
            return 0.0;
        }
        self.history.iter().map(|e| e.seconds).sum::<f64>() / self.history.len() as f64
    }

    pub fn total_counters(&self) -> SearchCounters {
        let mut c = SearchCounters::default();
        for e in &self.history {
            c += e.counters;
        }
        c
    }
}

/// One median NG epoch with the naive exhaustive search.
pub fn median_ng_epoch(
    d: &dyn Dissimilarity,
    protos: &MedianPrototypes,
    sigma: f64,
    supervision: &SupervisionConfig,
    labels: Option<&Labels>,
) -> Result<MedianPrototypes> {
    let p = Problem::new(d, labels, None)?;
    protos.validate(p.n())?;
    let cfg = step::StepConfig::new(*supervision, TiePolicy::LowestIndex, 0);
    Ok(step::ng_step(&p, protos, sigma, &cfg, NgImpl::Naive).next)
}

/// One median SOM epoch with the naive exhaustive search.
pub fn median_som_epoch(
    d: &dyn Dissimilarity,
    protos: &MedianPrototypes,
    lattice: &Lattice,
    sigma: f64,
    supervision: &SupervisionConfig,
    labels: Option<&Labels>,
) -> Result<MedianPrototypes> {
    let p = Problem::new(d, labels, None)?;
    protos.validate(p.n())?;
    check_lattice(lattice, protos.len())?;
    let cfg = step::StepConfig::new(*supervision, TiePolicy::LowestIndex, 0);
    Ok(step::som_step(&p, protos, lattice, sigma, &cfg, SomImpl::Naive).next)
}

/// One K-medoids epoch: winner assignment, then the medoid of every field.
pub fn kmedoids_epoch(
    d: &dyn Dissimilarity,
    protos: &MedianPrototypes,
    supervision: &SupervisionConfig,
    labels: Option<&Labels>,
) -> Result<MedianPrototypes> {
    let p = Problem::new(d, labels, None)?;
    protos.validate(p.n())?;
    let cfg = step::StepConfig::new(*supervision, TiePolicy::LowestIndex, 0);
    Ok(step::kmedoids_step(&p, protos, &cfg).next)
}

/// Unsupervised K-medoids from `K` seeded random points.
pub fn kmedoids(d: &dyn Dissimilarity, k: usize, epochs: usize, seed: u64) -> Result<MedianFit> {
    train_median(d, None, &MedianConfig::new(Algorithm::Kmedoids, k).epochs(epochs).seed(seed))
}

pub(crate) fn check_lattice(lattice: &Lattice, k: usize) -> Result<()> {
    if lattice.len() != k {
        return Err(Error::config(format!("lattice has {} neurons but K = {k}", lattice.len())));
    }
    Ok(())
}

/// Majority class of the labeled points in each receptive field, lowest
/// class on ties. A field without labeled points takes the class of the
/// labeled point closest to its prototype under `dist(i, j)`.
pub fn posterior_label(
    assignments: &[usize],
    k: usize,
    labels: &Labels,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<Vec<usize>> {
    if labels.len() != assignments.len() {
        return Err(Error::Shape { expected: labels.len(), got: assignments.len() });
    }
    if labels.labeled_count() == 0 {
        return Err(Error::config("posterior labeling needs labeled data"));
    }
    let c = labels.classes().len().max(labels.dim());
    let mut votes = vec![0.0; k * c];
    for (i, &j) in assignments.iter().enumerate() {
        if j >= k {
            return Err(Error::Range(format!("assignment {j} outside {k} prototypes")));
        }
        if let Some(cls) = labels.class_of(i) {
            votes[j * c + cls] += 1.0;
        }
    }
    Ok((0..k)
        .map(|j| {
            let row = &votes[j * c..(j + 1) * c];
            if row.iter().any(|&v| v > 0.0) {
                argmax(row)
            } else {
                let mut best: Option<(f64, usize)> = None;
                for i in 0..labels.len() {
                    if labels.is_labeled(i) {
                        let v = dist(i, j);
                        if best.is_none_or(|(bv, _)| v < bv) {
                            best = Some((v, i));
                        }
                    }
                }
                labels.class_of(best.expect("labeled point exists").1).expect("labeled")
            }
        })
        .collect())
}

/// Trains one of the median algorithms from seeded random prototypes.
pub fn train_median(d: &dyn Dissimilarity, labels: Option<&Labels>, config: &MedianConfig) -> Result<MedianFit> {
    train_median_weighted(d, labels, None, None, config)
}

/// Full training entry point: optional point multiplicities and optional
/// initial prototypes (seeded random distinct points otherwise).
pub fn train_median_weighted(
    d: &dyn Dissimilarity,
    labels: Option<&Labels>,
    weights: Option<&[f64]>,
    init: Option<MedianPrototypes>,
    config: &MedianConfig,
) -> Result<MedianFit> {
    let p = Problem::new(d, labels, weights)?;
    train_on(&p, init, config)
}

pub(crate) fn train_on(p: &Problem<'_>, init: Option<MedianPrototypes>, config: &MedianConfig) -> Result<MedianFit> {
    let n = p.n();
    config.validate(n)?;
    let supervised = config.supervision.enabled;
    if supervised && p.labels.is_none() {
        return Err(Error::config("supervision enabled without labels"));
    }
    let schedule = config.resolved_schedule()?;
    let lattice = match config.algorithm {
        Algorithm::MedianSom => Some(config.resolved_lattice()?),
        _ => None,
    };
    let mut protos = match init {
        Some(mut pr) => {
            if pr.len() != config.k {
                return Err(Error::config(format!("{} initial prototypes for K = {}", pr.len(), config.k)));
            }
            if supervised && pr.labels.is_none() {
                pr = MedianPrototypes::with_labels_from(pr.loc, p.labels.expect("checked"))?;
            }
            pr
        }
        None => {
            let loc = MedianPrototypes::random(n, config.k, config.seed)?.loc;
            match (supervised, p.labels) {
                (true, Some(l)) => MedianPrototypes::with_labels_from(loc, l)?,
                _ => MedianPrototypes::new(loc),
            }
        }
    };
    protos.validate(n)?;

    let mut history = Vec::new();
    let mut trajectory = Vec::new();
    let mut previous: Option<(Vec<usize>, Vec<u32>, f64)> = None;
    let mut converged = false;
    for t in 0..config.epochs {
        let sigma = schedule.sigma_clamped(t);
        let cfg = step::StepConfig::new(config.supervision, config.tie, t);
        let start = Instant::now();
        let out = match config.algorithm {
            Algorithm::MedianNg => step::ng_step(p, &protos, sigma, &cfg, config.ng_impl),
            Algorithm::MedianSom => {
                step::som_step(p, &protos, lattice.as_ref().expect("som lattice"), sigma, &cfg, config.som_impl)
            }
            Algorithm::Kmedoids => step::kmedoids_step(p, &protos, &cfg),
        };
        let seconds = start.elapsed().as_secs_f64();
        if let Some((loc, assign, s)) = &previous {
            if *loc == protos.loc && *assign == out.assignment && *s == sigma {
                converged = true;
                break;
            }
        }
        let moved = protos.loc.iter().zip(&out.next.loc).filter(|(a, b)| a != b).count();
        history.push(MedianEpoch {
            epoch: t,
            sigma,
            cost: out.cost,
            moved,
            collisions: out.collisions,
            counters: out.counters,
            seconds,
        });
        trajectory.push(out.next.loc.clone());
        previous = Some((std::mem::take(&mut protos.loc), out.assignment, sigma));
        protos = out.next;
    }

    let winner = p.input_winners(&protos.loc);
    let mut field_mass = vec![0.0; config.k];
    let mut total = 0.0;
    for (i, &j) in winner.iter().enumerate() {
        field_mass[j] += p.m[i];
        total += p.m[i] * p.cols.at(i, protos.loc[j]);
    }
    let half = 0.5 * total;
    let quantization = QuantizationError { half, norm: if n == 0 { 0.0 } else { half / n as f64 } };
    Ok(MedianFit {
        epochs_run: history.len(),
        prototypes: protos,
        winner,
        history,
        trajectory,
        converged,
        schedule,
        quantization,
        field_mass,
    })
}

/// Persisted form of a trained median model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianModel {
    pub algorithm: Algorithm,
    #[serde(rename = "K")]
    pub k: usize,
    pub prototype_indices: Vec<usize>,
    /// Class index per prototype (label argmax when supervised, posterior otherwise).
    pub prototype_labels: Option<Vec<usize>>,
    pub classes: Option<Vec<String>>,
    pub sigma_schedule: AnnealingSchedule,
    pub beta: Option<f64>,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub lattice: Option<crate::lattice::LatticeShape>,
    pub tie_policy: TiePolicy,
    pub generator: String,
}

impl MedianModel {
    /// Model of `fit`; prototype classes come from the trained label vectors
    /// when supervised, otherwise from a posterior vote when labels exist.
    pub fn from_fit(
        fit: &MedianFit,
        config: &MedianConfig,
        d: &dyn Dissimilarity,
        labels: Option<&Labels>,
    ) -> Result<Self> {
        let prototype_labels = match (fit.prototypes.crisp_labels(), labels) {
            (Some(c), _) if config.supervision.enabled => Some(c),
            (_, Some(l)) if l.labeled_count() > 0 => {
                let loc = &fit.prototypes.loc;
                Some(posterior_label(&fit.winner, config.k, l, |i, j| d.get(i, loc[j]))?)
            }
            _ => None,
        };
        Ok(Self {
            algorithm: config.algorithm,
            k: config.k,
            prototype_indices: fit.prototypes.loc.clone(),
            prototype_labels,
            classes: labels.map(|l| l.classes().to_vec()),
            sigma_schedule: fit.schedule,
            beta: config.supervision.enabled.then_some(config.supervision.beta),
            seed: config.seed,
            epochs_run: fit.epochs_run,
            final_cost: fit.quantization.half,
            converged: fit.converged,
            lattice: match config.algorithm {
                Algorithm::MedianSom => Some(config.resolved_lattice()?.shape()),
                _ => None,
            },
            tie_policy: config.tie,
            generator: GENERATOR.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Winner and its dissimilarity for every point of `d` at locations `loc`.
pub fn assign_to_locations(d: &dyn Dissimilarity, loc: &[usize]) -> Vec<(usize, f64)> {
    (0..d.len())
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for (j, &l) in loc.iter().enumerate() {
                let v = d.get(i, l);
                if v < best.1 {
                    best = (j, v);
                }
            }
            best
        })
        .collect()
}

//! Train/test splitting, repeated cross-validation and implementation
//! benchmarks over a precomputed dissimilarity matrix.
//!
//! All randomness derives from `ExperimentConfig::seed`. Runs execute in
//! parallel and are merged by run index, so reports do not depend on the
//! worker count apart from the timing fields.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Labels;
use crate::dissim::{Dissimilarity, SubsetSource};
use crate::error::{Error, Result};
use crate::euclid::QuantizationError;
use crate::fast_ng::NgImpl;
use crate::fast_som::SomImpl;
use crate::median::{
    assign_to_locations, posterior_label, train_median, Algorithm, MedianConfig, SearchCounters,
    SupervisionConfig,
};
use crate::patch::{patch_median_ng, PatchConfig};
use crate::rng::{derive_seed, rng, GENERATOR};

pub const REPORT_VERSION: u32 = 1;

const SPLIT_STREAM: u64 = 0x5EED_5EED;

/// How test sets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// `repeats × folds` runs; each fold is the test set once.
    KFold,
    /// `repeats` runs; half the points train, the rest test.
    RandomHalves,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kfold" | "k-fold" => Ok(Protocol::KFold),
            "halves" | "random-halves" => Ok(Protocol::RandomHalves),
            _ => Err(Error::config(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub implementation: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub epochs: usize,
    /// Supervised training with this mixing weight when set.
    pub beta: Option<f64>,
    pub n_p: usize,
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    pub metric: String,
    pub standardize: bool,
    pub protocol: Protocol,
    /// Class-stratified splits.
    pub stratify: bool,
}

impl ExperimentConfig {
    /// Stratified 10-fold cross-validation, one repeat, default implementation.
    pub fn new(algorithm: Algorithm, k: usize) -> Self {
        let implementation = match algorithm {
            Algorithm::MedianNg => NgImpl::default().id(),
            Algorithm::MedianSom => SomImpl::default().id(),
            Algorithm::Kmedoids => "naive",
        };
        Self {
            algorithm,
            implementation: implementation.to_string(),
            k,
            epochs: 100,
            beta: None,
            n_p: 1,
            seed: 0,
            folds: 10,
            repeats: 1,
            metric: "precomputed".to_string(),
            standardize: false,
            protocol: Protocol::KFold,
            stratify: true,
        }
    }

    /// `repeats` unstratified 50/50 splits.
    pub fn random_halves(mut self, repeats: usize) -> Self {
        self.protocol = Protocol::RandomHalves;
        self.repeats = repeats;
        self.stratify = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.median_config()?;
        if self.protocol == Protocol::KFold && self.folds < 2 {
            return Err(Error::config("cross-validation needs at least 2 folds"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be positive"));
        }
        if self.n_p == 0 {
            return Err(Error::config("n_p must be positive"));
        }
        if self.n_p > 1 && self.algorithm != Algorithm::MedianNg {
            return Err(Error::config("patch training is only available for median-ng"));
        }
        Ok(())
    }

    /// Training configuration for one run, without its run-specific seed.
    pub fn median_config(&self) -> Result<MedianConfig> {
        let mut c = MedianConfig::new(self.algorithm, self.k).epochs(self.epochs).seed(self.seed);
        let id = self.implementation.as_str();
        match self.algorithm {
            Algorithm::MedianNg => c = c.ng_impl(NgImpl::parse(id)?),
            Algorithm::MedianSom => c = c.som_impl(SomImpl::parse(id)?),
            Algorithm::Kmedoids if id == "naive" => {}
            Algorithm::Kmedoids => {
                return Err(Error::config(format!("implementation {id:?} is not available for kmedoids")))
            }
        }
        if let Some(beta) = self.beta {
            c = c.supervision(SupervisionConfig::supervised(beta)?);
        }
        Ok(c)
    }

    pub fn runs(&self) -> usize {
        match self.protocol {
            Protocol::KFold => self.repeats * self.folds,
            Protocol::RandomHalves => self.repeats,
        }
    }
}

/// Returns `(winner, class)`: the nearest prototype by `dists[j]`, lowest
/// index on ties, and its label.
pub fn classify_by_prototypes(proto_labels: &[usize], dists: &[f64]) -> Result<(usize, usize)> {
    if dists.is_empty() {
        return Err(Error::data("no distances to prototypes"));
    }
    if dists.len() != proto_labels.len() {
        return Err(Error::Shape { expected: proto_labels.len(), got: dists.len() });
    }
    let mut best = 0;
    for (j, &v) in dists.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::data(format!("non-finite distance to prototype {j}")));
        }
        if v < dists[best] {
            best = j;
        }
    }
    Ok((best, proto_labels[best]))
}

/// `folds` disjoint test sets covering `0..class_of.len()`, each sorted.
/// Stratified splits shuffle every class separately and deal its points
/// round-robin, continuing where the previous class stopped.
pub fn kfold_splits(class_of: &[Option<usize>], folds: usize, stratify: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = class_of.len();
    if folds < 2 || folds > n {
        return Err(Error::config(format!("{folds} folds for {n} points")));
    }
    let mut r = rng(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for group in groups(class_of, stratify) {
        let mut g = group;
        g.shuffle(&mut r);
        for i in g {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// `(train, test)` with `⌊n/2⌋` training points, both sorted. Stratified
/// halves split every class in half, rounding its training share down.
pub fn random_halves(class_of: &[Option<usize>], stratify: bool, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = class_of.len();
    if n < 2 {
        return Err(Error::config("random halves need at least 2 points"));
    }
    let mut r = rng(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for group in groups(class_of, stratify) {
        let mut g = group;
        g.shuffle(&mut r);
        let cut = if stratify { g.len() / 2 } else { n / 2 };
        train.extend_from_slice(&g[..cut]);
        test.extend_from_slice(&g[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Index groups in ascending order; one group per class (unlabeled last)
/// when stratifying, else all points.
fn groups(class_of: &[Option<usize>], stratify: bool) -> Vec<Vec<usize>> {
    if !stratify {
        return vec![(0..class_of.len()).collect()];
    }
    let c = class_of.iter().flatten().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); c + 1];
    for (i, cls) in class_of.iter().enumerate() {
        g[cls.unwrap_or(c)].push(i);
    }
    g.retain(|v| !v.is_empty());
    g
}

/// One classified test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point: usize,
    /// Prototype index.
    pub winner: usize,
    /// Input dissimilarity to the winner's location.
    pub distance: f64,
    pub predicted: usize,
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Quantization error on the training points.
    pub e_half: f64,
    pub e_norm: f64,
    /// Correct fraction of the labeled test points.
    pub accuracy: f64,
    pub epochs: usize,
    pub converged: bool,
    pub seconds_per_epoch: f64,
    pub counters: SearchCounters,
    /// Global indices of the prototype locations.
    pub prototypes: Vec<usize>,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub e_half: Summary,
    pub e_norm: Summary,
    pub accuracy: Summary,
    pub epochs: Summary,
    pub seconds_per_epoch: Summary,
}

impl Aggregate {
    pub fn of(runs: &[RunRecord]) -> Self {
        Self {
            e_half: Summary::of(runs.iter().map(|r| r.e_half)),
            e_norm: Summary::of(runs.iter().map(|r| r.e_norm)),
            accuracy: Summary::of(runs.iter().map(|r| r.accuracy)),
            epochs: Summary::of(runs.iter().map(|r| r.epochs as f64)),
            seconds_per_epoch: Summary::of(runs.iter().map(|r| r.seconds_per_epoch)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub report_version: u32,
    pub generator: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Test predictions of every run, in run order.
    pub fn assignments_csv(&self) -> String {
        let mut s = String::from("run,point_index,winner,rank0_distance,predicted,truth\n");
        for r in &self.runs {
            for p in &r.predictions {
                let truth = p.truth.map_or(String::new(), |t| t.to_string());
                s.push_str(&format!("{},{},{},{:?},{},{}\n", r.run, p.point, p.winner, p.distance, p.predicted, truth));
            }
        }
        s
    }
}

/// Train/test index sets of every run, in run order.
pub fn experiment_splits(labels: &Labels, config: &ExperimentConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let class_of: Vec<Option<usize>> = (0..labels.len()).map(|i| labels.class_of(i)).collect();
    let mut out = Vec::with_capacity(config.runs());
    for rep in 0..config.repeats {
        let seed = derive_seed(config.seed ^ SPLIT_STREAM, rep as u64);
        match config.protocol {
            Protocol::KFold => {
                let folds = kfold_splits(&class_of, config.folds, config.stratify, seed)?;
                for test in &folds {
                    let mut in_test = vec![false; labels.len()];
                    test.iter().for_each(|&i| in_test[i] = true);
                    let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
                    out.push((train, test.clone()));
                }
            }
            Protocol::RandomHalves => out.push(random_halves(&class_of, config.stratify, seed)?),
        }
    }
    Ok(out)
}

/// Runs every split of `config`, trains on the training points and labels
/// the test points by their nearest prototype under input dissimilarity.
pub fn cross_validate(d: &dyn Dissimilarity, labels: &Labels, config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    if labels.len() != d.len() {
        return Err(Error::Shape { expected: d.len(), got: labels.len() });
    }
    if labels.labeled_count() == 0 {
        return Err(Error::config("accuracy evaluation needs labels"));
    }
    let splits = experiment_splits(labels, config)?;
    let runs_per_repeat = config.runs() / config.repeats;
    let mut runs = splits
        .par_iter()
        .enumerate()
        .map(|(run, (train, test))| {
            let mut rec = evaluate_split(d, labels, config, derive_seed(config.seed, run as u64), train, test)?;
            rec.run = run;
            rec.repeat = run / runs_per_repeat;
            rec.fold = run % runs_per_repeat;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| r.run);
    Ok(EvaluationReport {
        report_version: REPORT_VERSION,
        generator: GENERATOR.to_string(),
        config: config.clone(),
        aggregate: Aggregate::of(&runs),
        runs,
    })
}

/// Trained prototypes of one run as global locations with class labels.
struct Trained {
    loc: Vec<usize>,
    classes: Vec<usize>,
    quantization: QuantizationError,
    epochs: usize,
    converged: bool,
    seconds_per_epoch: f64,
    counters: SearchCounters,
}

fn train_split(d: &dyn Dissimilarity, labels: &Labels, config: &ExperimentConfig, seed: u64, train: &[usize]) -> Result<Trained> {
    let sub = SubsetSource::new(d, train);
    let train_labels = labels.subset(train);
    if train_labels.labeled_count() == 0 {
        return Err(Error::config("a training set has no labeled points"));
    }
    let mc = config.median_config()?.seed(seed);
    let supervised = mc.supervision.enabled;
    if config.n_p > 1 {
        let start = Instant::now();
        let fit = patch_median_ng(&sub, Some(&train_labels), &PatchConfig::new(mc, config.n_p))?;
        let seconds = start.elapsed().as_secs_f64();
        let local = fit.prototypes.loc.clone();
        let classes = match (&fit.prototypes.labels, supervised) {
            (Some(y), true) => {
                let c = train_labels.dim();
                y.chunks(c).map(crate::dataset::argmax).collect()
            }
            _ => fit.prototype_classes().ok_or_else(|| Error::Invariant("patch fit lost class counts".into()))?,
        };
        let quantization =
            QuantizationError::from_winner_distances(assign_to_locations(&sub, &local).into_iter().map(|(_, v)| v));
        let epochs: usize = fit.history.iter().map(|r| r.epochs_run).sum();
        return Ok(Trained {
            loc: local.iter().map(|&l| train[l]).collect(),
            classes,
            quantization,
            epochs,
            converged: true,
            seconds_per_epoch: if epochs > 0 { seconds / epochs as f64 } else { 0.0 },
            counters: SearchCounters::default(),
        });
    }
    let fit = train_median(&sub, Some(&train_labels), &mc)?;
    let loc = &fit.prototypes.loc;
    let classes = match fit.prototypes.crisp_labels() {
        Some(c) if supervised => c,
        _ => posterior_label(&fit.winner, config.k, &train_labels, |i, j| sub.get(i, loc[j]))?,
    };
    Ok(Trained {
        loc: loc.iter().map(|&l| train[l]).collect(),
        classes,
        quantization: fit.quantization,
        epochs: fit.epochs_run,
        converged: fit.converged,
        seconds_per_epoch: fit.mean_epoch_seconds(),
        counters: fit.total_counters(),
    })
}

fn evaluate_split(
    d: &dyn Dissimilarity,
    labels: &Labels,
    config: &ExperimentConfig,
    seed: u64,
    train: &[usize],
    test: &[usize],
) -> Result<RunRecord> {
    let t = train_split(d, labels, config, seed, train)?;
    let mut dists = vec![0.0; t.loc.len()];
    let mut predictions = Vec::with_capacity(test.len());
    let (mut correct, mut scored) = (0usize, 0usize);
    for &i in test {
        for (v, &l) in dists.iter_mut().zip(&t.loc) {
            *v = d.get(i, l);
        }
        let (winner, predicted) = classify_by_prototypes(&t.classes, &dists)?;
        let truth = labels.class_of(i);
        if let Some(c) = truth {
            scored += 1;
            correct += usize::from(c == predicted);
        }
        predictions.push(Prediction { point: i, winner, distance: dists[winner], predicted, truth });
    }
    Ok(RunRecord {
        run: 0,
        repeat: 0,
        fold: 0,
        seed,
        train_size: train.len(),
        test_size: test.len(),
        e_half: t.quantization.half,
        e_norm: t.quantization.norm,
        accuracy: if scored > 0 { correct as f64 / scored as f64 } else { f64::NAN },
        epochs: t.epochs,
        converged: t.converged,
        seconds_per_epoch: t.seconds_per_epoch,
        counters: t.counters,
        prototypes: t.loc,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub implementation: String,
    pub epochs: usize,
    pub mean_epoch_seconds: f64,
    pub total_seconds: f64,
    pub final_cost: f64,
    pub counters: SearchCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub algorithm: Algorithm,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub rows: Vec<BenchmarkRow>,
    /// Every implementation reproduced the first one's trajectory.
    pub equal: bool,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "implementation,epochs,mean_epoch_seconds,total_seconds,final_cost,candidates_evaluated,classes_pruned,partial_sums_abandoned,equal\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:?},{},{},{},{}\n",
                r.implementation,
                r.epochs,
                r.mean_epoch_seconds,
                r.total_seconds,
                r.final_cost,
                r.counters.candidates_evaluated,
                r.counters.classes_pruned,
                r.counters.partial_sums_abandoned,
                self.equal
            ));
        }
        s
    }
}

/// Trains once per implementation with identical seeds, one after another.
/// All implementations are exact, so any difference in the per-epoch
/// prototypes, costs and collision counts or in the final winners is an
/// invariant violation.
pub fn benchmark(
    d: &dyn Dissimilarity,
    labels: Option<&Labels>,
    impls: &[String],
    config: &ExperimentConfig,
) -> Result<BenchmarkTable> {
    if impls.is_empty() {
        return Err(Error::config("no implementations to benchmark"));
    }
    let mut rows = Vec::new();
    // (id, trajectory, final winners, per-epoch (cost bits, collisions))
    type Trace = (String, Vec<Vec<usize>>, Vec<usize>, Vec<(u64, usize)>);
    let mut reference: Option<Trace> = None;
    for id in impls {
        let mut c = config.clone();
        c.implementation = id.clone();
        let mc = c.median_config()?;
        let start = Instant::now();
        let fit = train_median(d, labels, &mc)?;
        let total_seconds = start.elapsed().as_secs_f64();
        let trace: Vec<(u64, usize)> = fit.history.iter().map(|e| (e.cost.to_bits(), e.collisions)).collect();
        match &reference {
            None => reference = Some((id.clone(), fit.trajectory.clone(), fit.winner.clone(), trace)),
            Some((rid, traj, winner, rtrace)) => {
                if *traj != fit.trajectory || *winner != fit.winner || *rtrace != trace {
                    return Err(Error::Invariant(format!("implementation {id} diverged from {rid}")));
                }
            }
        }
        rows.push(BenchmarkRow {
            implementation: id.clone(),
            epochs: fit.epochs_run,
            mean_epoch_seconds: fit.mean_epoch_seconds(),
            total_seconds,
            final_cost: fit.quantization.half,
            counters: fit.total_counters(),
        });
    }
    Ok(BenchmarkTable { algorithm: config.algorithm, k: config.k, n: d.len(), rows, equal: true })
}

//! `mediatop` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 configuration, 4 internal
//! invariant violation. `MEDIATOP_THREADS` caps the worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mediatop::dissim::{DataRef, DenseMatrix, Dissimilarity};
use mediatop::harness::{benchmark, cross_validate, ExperimentConfig, Protocol};
use mediatop::median::{assign_to_locations, train_median, MedianModel};
use mediatop::metric::DEFAULT_INDEL_COST;
use mediatop::patch::{patch_median_ng, PatchConfig};
use mediatop::rng::GENERATOR;
use mediatop::{
    materialize_dissimilarity, zscore_standardize, Algorithm, Error, Labels, Lattice, Metric, SdConvention,
    SequenceDataset, VectorDataset,
};

#[derive(Parser)]
#[command(name = "mediatop", version, about = "Median clustering on dissimilarity data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on all points.
    Train(TrainArgs),
    /// Cross-validated accuracy and quantization error.
    Evaluate(EvaluateArgs),
    /// Per-epoch timing of several implementations with an equality check.
    Benchmark(BenchmarkArgs),
    /// Materialize a dissimilarity matrix file.
    Distance(DistanceArgs),
    /// Receptive fields of a saved model.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Vector data, one point per line; the last field is the class unless --no-labels.
    #[arg(long, conflicts_with = "matrix")]
    input: Option<PathBuf>,
    /// Precomputed dissimilarity matrix (binary or text).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Class names, one per line, for --matrix; empty or `?` means unlabeled.
    #[arg(long, requires = "matrix")]
    labels: Option<PathBuf>,
    #[arg(long)]
    no_labels: bool,
    /// squared-euclidean or cosine, for --input.
    #[arg(long, default_value = "squared-euclidean")]
    metric: String,
    /// z-score every feature before computing dissimilarities.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "median-ng")]
    algorithm: String,
    /// Search implementation; the algorithm's fastest exact one by default.
    #[arg(long = "impl")]
    implementation: Option<String>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Supervised training with this mixing weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of patches (median-ng only).
    #[arg(long, default_value_t = 1)]
    n_p: usize,
    /// SOM lattice: rect:RxC or hex:RxC.
    #[arg(long)]
    lattice: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Model JSON; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV of point_index,winner,rank0_distance.
    #[arg(long)]
    assignments: Option<PathBuf>,
    /// Training report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// kfold or halves.
    #[arg(long, default_value = "kfold")]
    protocol: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Class-stratified splits; default on for kfold, off for halves.
    #[arg(long)]
    stratify: Option<bool>,
    /// Comma-separated β values; one report per value.
    #[arg(long, conflicts_with = "beta")]
    beta_grid: Option<String>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// CSV of every test prediction.
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated implementation ids.
    #[arg(long)]
    impls: String,
    /// Table CSV; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    /// edit (sequences), cosine or squared-euclidean (vectors).
    #[arg(long)]
    metric: String,
    #[arg(long, default_value_t = DEFAULT_INDEL_COST)]
    indel: f64,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Vector input without a class column.
    #[arg(long)]
    no_labels: bool,
    #[arg(long)]
    standardize: bool,
    /// binary or text.
    #[arg(long, default_value = "binary")]
    format: String,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Receptive field CSV; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-prototype CSV of location, label and field size.
    #[arg(long)]
    prototypes: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Data(_) | Error::Shape { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::Config(_) | Error::Domain(_) | Error::Range(_) => 3,
        Error::Invariant(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => bench(a),
        Command::Distance(a) => distance(a),
        Command::Inspect(a) => inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("MEDIATOP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MEDIATOP_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_vector_metric(s: &str) -> CliResult<Metric> {
    match s {
        "squared-euclidean" => Ok(Metric::SquaredEuclidean),
        "cosine" => Ok(Metric::Cosine),
        _ => Err(Error::Config(format!("unknown vector metric {s:?}")).into()),
    }
}

fn load_vectors(path: &Path, labels: bool, standardize: bool) -> CliResult<VectorDataset> {
    let data = VectorDataset::load(path, labels)?;
    Ok(if standardize { zscore_standardize(&data, SdConvention::default()) } else { data })
}

fn load_labels(path: &Path) -> CliResult<Labels> {
    let text = fs::read_to_string(path)?;
    let mut names: Vec<String> = Vec::new();
    let class_of: Vec<Option<usize>> = text
        .lines()
        .map(str::trim)
        .map(|name| match name {
            "" | "?" => None,
            name => Some(names.iter().position(|c| c == name).unwrap_or_else(|| {
                names.push(name.to_string());
                names.len() - 1
            })),
        })
        .collect();
    Ok(Labels::from_classes(&class_of, names)?)
}

struct Loaded {
    d: DenseMatrix,
    labels: Option<Labels>,
    metric: String,
}

fn load_data(a: &DataArgs) -> CliResult<Loaded> {
    match (&a.input, &a.matrix) {
        (Some(input), None) => {
            let metric = parse_vector_metric(&a.metric)?;
            let data = load_vectors(input, !a.no_labels, a.standardize)?;
            let d = materialize_dissimilarity(DataRef::Vectors(&data), metric)?;
            Ok(Loaded { d, labels: data.labels().cloned(), metric: metric.name().to_string() })
        }
        (None, Some(matrix)) => {
            let d = DenseMatrix::load(matrix)?;
            let labels = a.labels.as_deref().map(load_labels).transpose()?;
            if let Some(l) = &labels {
                if l.len() != d.len() {
                    return Err(Error::Shape { expected: d.len(), got: l.len() }.into());
                }
            }
            Ok(Loaded { d, labels, metric: "precomputed".to_string() })
        }
        _ => Err(Failure::Usage("exactly one of --input or --matrix is required".into())),
    }
}

fn parse_lattice(s: &str) -> CliResult<Lattice> {
    let bad = || Failure::Core(Error::Config(format!("lattice must be rect:RxC or hex:RxC, got {s:?}")));
    let (kind, dims) = s.split_once(':').ok_or_else(bad)?;
    let (r, c) = dims.split_once('x').ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
    Ok(match kind {
        "rect" => Lattice::rectangular(r, c)?,
        "hex" => Lattice::hexagonal(r, c)?,
        _ => return Err(bad()),
    })
}

fn experiment(m: &ModelArgs, metric: &str, standardize: bool) -> CliResult<ExperimentConfig> {
    let mut c = ExperimentConfig::new(Algorithm::parse(&m.algorithm)?, m.k);
    if let Some(i) = &m.implementation {
        c.implementation = i.clone();
    }
    c.epochs = m.epochs;
    c.seed = m.seed;
    c.beta = m.beta;
    c.n_p = m.n_p;
    c.metric = metric.to_string();
    c.standardize = standardize;
    Ok(c)
}

fn median_config(m: &ModelArgs, c: &ExperimentConfig) -> CliResult<mediatop::MedianConfig> {
    let mut mc = c.median_config()?;
    if let Some(l) = &m.lattice {
        mc = mc.lattice(parse_lattice(l)?);
    }
    Ok(mc)
}

fn train(a: TrainArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let ec = experiment(&a.model, &data.metric, a.data.standardize)?;
    ec.validate()?;
    let mc = median_config(&a.model, &ec)?;
    let labels = data.labels.as_ref();
    let (model, history, seconds) = if ec.n_p > 1 {
        let start = std::time::Instant::now();
        let fit = patch_median_ng(&data.d, labels, &PatchConfig::new(mc.clone(), ec.n_p))?;
        let seconds = start.elapsed().as_secs_f64();
        let loc = fit.prototypes.loc.clone();
        let winners = assign_to_locations(&data.d, &loc);
        let prototype_labels = match (&fit.prototypes.labels, labels) {
            (Some(y), Some(l)) if mc.supervision.enabled => Some(y.chunks(l.dim()).map(argmax).collect()),
            _ => fit.prototype_classes(),
        };
        let model = MedianModel {
            algorithm: mc.algorithm,
            k: mc.k,
            prototype_indices: loc,
            prototype_labels,
            classes: labels.map(|l| l.classes().to_vec()),
            sigma_schedule: mc.resolved_schedule()?,
            beta: mc.supervision.enabled.then_some(mc.supervision.beta),
            seed: mc.seed,
            epochs_run: fit.history.iter().map(|r| r.epochs_run).sum(),
            final_cost: winners.iter().map(|w| w.1).sum::<f64>() / 2.0,
            converged: false,
            lattice: None,
            tie_policy: mc.tie,
            generator: GENERATOR.to_string(),
        };
        (model, serde_json::to_value(&fit.history).map_err(Error::from)?, seconds)
    } else {
        let fit = train_median(&data.d, labels, &mc)?;
        let model = MedianModel::from_fit(&fit, &mc, &data.d, labels)?;
        let seconds = fit.history.iter().map(|e| e.seconds).sum();
        (model, serde_json::to_value(&fit.history).map_err(Error::from)?, seconds)
    };
    let winners = assign_to_locations(&data.d, &model.prototype_indices);
    if let Some(p) = &a.assignments {
        fs::write(p, assignments_csv(&winners))?;
    }
    if let Some(p) = &a.report {
        let n = winners.len() as f64;
        let e_half = winners.iter().map(|w| w.1).sum::<f64>() / 2.0;
        let report = serde_json::json!({
            "report_version": mediatop::harness::REPORT_VERSION,
            "generator": GENERATOR,
            "config": ec,
            "n": winners.len(),
            "epochs_run": model.epochs_run,
            "converged": model.converged,
            "e_half": e_half,
            "e_norm": e_half / n,
            "seconds": seconds,
            "history": history,
        });
        fs::write(p, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    }
    write_or_print(a.output.as_deref(), &(model.to_json()? + "\n"))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn assignments_csv(winners: &[(usize, f64)]) -> String {
    let mut s = String::from("point_index,winner,rank0_distance\n");
    for (i, (j, v)) in winners.iter().enumerate() {
        s.push_str(&format!("{i},{j},{v:?}\n"));
    }
    s
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let labels = data.labels.as_ref().ok_or_else(|| Error::Config("evaluation needs class labels".into()))?;
    let mut ec = experiment(&a.model, &data.metric, a.data.standardize)?;
    if a.model.lattice.is_some() {
        return Err(Failure::Usage("--lattice is not supported by evaluate".into()));
    }
    ec.protocol = Protocol::parse(&a.protocol)?;
    ec.folds = a.folds;
    ec.repeats = a.repeats;
    ec.stratify = a.stratify.unwrap_or(ec.protocol == Protocol::KFold);
    let betas: Vec<Option<f64>> = match &a.beta_grid {
        Some(g) => g
            .split(',')
            .map(|s| s.trim().parse::<f64>().map(Some).map_err(|_| Error::Config(format!("bad β value {s:?}"))))
            .collect::<Result<_, _>>()?,
        None => vec![ec.beta],
    };
    let mut reports = Vec::new();
    let mut csv = String::new();
    for beta in betas {
        let mut c = ec.clone();
        c.beta = beta;
        let r = cross_validate(&data.d, labels, &c)?;
        let body = r.assignments_csv();
        if csv.is_empty() {
            csv = body;
        } else {
            csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
        }
        reports.push(r);
    }
    if let Some(p) = &a.assignments {
        fs::write(p, csv)?;
    }
    let json = if a.beta_grid.is_some() {
        serde_json::to_string_pretty(&reports).map_err(Error::from)?
    } else {
        reports[0].to_json()?
    };
    write_or_print(a.report.as_deref(), &(json + "\n"))
}

fn bench(a: BenchmarkArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let ec = experiment(&a.model, &data.metric, a.data.standardize)?;
    if a.model.lattice.is_some() {
        return Err(Failure::Usage("--lattice is not supported by benchmark".into()));
    }
    let impls: Vec<String> = a.impls.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    let table = benchmark(&data.d, data.labels.as_ref().filter(|_| ec.beta.is_some()), &impls, &ec)?;
    write_or_print(a.output.as_deref(), &table.to_csv())
}

fn distance(a: DistanceArgs) -> CliResult<()> {
    let d = match a.metric.as_str() {
        "edit" => {
            let seqs = SequenceDataset::load(&a.input)?;
            materialize_dissimilarity(DataRef::Sequences(&seqs), Metric::Edit { indel: a.indel })?
        }
        m => {
            let metric = parse_vector_metric(m)?;
            let data = load_vectors(&a.input, !a.no_labels, a.standardize)?;
            materialize_dissimilarity(DataRef::Vectors(&data), metric)?
        }
    };
    match a.format.as_str() {
        "binary" => d.write_binary(&a.output)?,
        "text" => d.write_text(&a.output)?,
        f => return Err(Error::Config(format!("unknown format {f:?}")).into()),
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let model = MedianModel::from_json(&fs::read_to_string(&a.model)?)?;
    let data = load_data(&a.data)?;
    if let Some(&l) = model.prototype_indices.iter().find(|&&l| l >= data.d.len()) {
        return Err(Error::Data(format!("model location {l} outside {} points", data.d.len())).into());
    }
    let winners = assign_to_locations(&data.d, &model.prototype_indices);
    if let Some(p) = &a.prototypes {
        let mut sizes = vec![0usize; model.k];
        winners.iter().for_each(|w| sizes[w.0] += 1);
        let mut s = String::from("prototype,location,label,field_size\n");
        for (j, &l) in model.prototype_indices.iter().enumerate() {
            let label = match (&model.prototype_labels, &model.classes) {
                (Some(pl), Some(names)) => names.get(pl[j]).cloned().unwrap_or_else(|| pl[j].to_string()),
                (Some(pl), None) => pl[j].to_string(),
                _ => String::new(),
            };
            s.push_str(&format!("{j},{l},{label},{}\n", sizes[j]));
        }
        fs::write(p, s)?;
    }
    write_or_print(a.output.as_deref(), &assignments_csv(&winners))
}

//! Median neural gas, median self-organizing maps and K-medoids on
//! dissimilarity data, with exact accelerated prototype searches and a
//! single-pass patch variant for matrices that do not fit in memory.

pub mod dataset;
pub mod dissim;
pub mod error;
pub mod euclid;
pub mod fast_ng;
pub mod fast_som;
pub mod harness;
pub mod lattice;
pub mod median;
pub mod metric;
pub mod patch;
pub mod rank;
pub mod rng;
pub mod schedule;

pub use dataset::{zscore_standardize, Labels, SdConvention, SequenceDataset, VectorDataset};
pub use dissim::{materialize_dissimilarity, CountingSource, DataRef, DenseMatrix, Dissimilarity, MetricSource};
pub use error::{Error, Result};
pub use fast_ng::NgImpl;
pub use fast_som::SomImpl;
pub use harness::{benchmark, classify_by_prototypes, cross_validate, EvaluationReport, ExperimentConfig, Protocol};
pub use lattice::Lattice;
pub use median::{train_median, Algorithm, MedianConfig, MedianFit, MedianModel, MedianPrototypes, SupervisionConfig};
pub use metric::Metric;
pub use rank::TiePolicy;
pub use schedule::AnnealingSchedule;

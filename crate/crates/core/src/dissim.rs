//! Pairwise dissimilarity sources and the dense matrix file formats.
//!
//! Everything downstream reads dissimilarities through [`Dissimilarity`].
//! Access is side-effect free apart from the optional counters in
//! [`CountingSource`], which are atomic.

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rayon::prelude::*;

use crate::dataset::{SequenceDataset, VectorDataset};
use crate::error::{Error, Result};
use crate::metric::{self, Metric};

/// Random access to `d(i, j)` for `i, j < len()`.
pub trait Dissimilarity: Sync {
    fn len(&self) -> usize;

    fn get(&self, i: usize, j: usize) -> f64;

    /// Whether `d(i,j) = d(j,i)` is promised for all pairs.
    fn is_symmetric(&self) -> bool;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Direct view of an in-memory matrix, if the source is one.
    fn as_dense(&self) -> Option<&DenseMatrix> {
        None
    }
}

impl<T: Dissimilarity + ?Sized> Dissimilarity for &T {
    fn len(&self) -> usize {
        (**self).len()
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        (**self).get(i, j)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn as_dense(&self) -> Option<&DenseMatrix> {
        (**self).as_dense()
    }
}

/// Row-major `N × N` matrix held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl DenseMatrix {
    /// Validates entries (finite, nonnegative, zero diagonal) and detects symmetry.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape { expected: n * n, got: data.len() });
        }
        if n == 0 {
            return Err(Error::data("empty dissimilarity matrix"));
        }
        for i in 0..n {
            for j in 0..n {
                let v = data[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::data(format!("d({i},{j}) = {v} is not a finite nonnegative value")));
                }
            }
            if data[i * n + i] != 0.0 {
                return Err(Error::data(format!("d({i},{i}) = {} but the diagonal must be zero", data[i * n + i])));
            }
        }
        let symmetric = (0..n).all(|i| (i + 1..n).all(|j| data[i * n + j] == data[j * n + i]));
        Ok(Self { n, data, symmetric })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 0.0 } else { f(i, j) };
            }
        });
        Self::from_vec(n, data)
    }

    /// Copies any source into memory.
    pub fn from_source(src: &dyn Dissimilarity) -> Result<Self> {
        Self::from_fn(src.len(), |i, j| src.get(i, j))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DSM_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.n)?;
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads either the binary `DSM1` format or the text format (header line
    /// with `N`, then `N` rows of `N` reals).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let head = file.fill_buf()?;
        if head.starts_with(DSM_MAGIC) {
            let mut rows = DsmRowReader::from_reader(file)?;
            let n = rows.len();
            let mut data = Vec::with_capacity(n * n);
            while let Some(row) = rows.next_row()? {
                data.extend_from_slice(&row);
            }
            return Self::from_vec(n, data);
        }
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        Self::parse_text(&text)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or_else(|| Error::data("missing matrix size header"))?
            .parse()
            .map_err(|_| Error::data("matrix size header is not a count"))?;
        let data = tokens
            .map(|t| t.parse::<f64>().map_err(|_| Error::data(format!("bad matrix entry {t:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        Self::from_vec(n, data)
    }
}

impl Dissimilarity for DenseMatrix {
    fn len(&self) -> usize {
        self.n
    }
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn as_dense(&self) -> Option<&DenseMatrix> {
        Some(self)
    }
}

pub const DSM_MAGIC: &[u8; 4] = b"DSM1";

/// Row-by-row reader over a binary `DSM1` file, for when the matrix does not
/// fit in memory.
pub struct DsmRowReader<R> {
    inner: R,
    n: usize,
    next: usize,
}

impl DsmRowReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DsmRowReader<R> {
    pub fn from_reader(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic)?;
        if &magic != DSM_MAGIC {
            return Err(Error::data("not a DSM1 file"));
        }
        let mut len = [0u8; 8];
        inner.read_exact(&mut len)?;
        let n = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::data("matrix too large"))?;
        Ok(Self { inner, n, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn next_row(&mut self) -> Result<Option<Vec<f64>>> {
        if self.next >= self.n {
            return Ok(None);
        }
        let mut buf = vec![0u8; self.n * 8];
        self.inner.read_exact(&mut buf)?;
        self.next += 1;
        Ok(Some(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()))
    }
}

/// Borrowed dataset a metric can be evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum DataRef<'a> {
    Vectors(&'a VectorDataset),
    Sequences(&'a SequenceDataset),
}

/// Evaluates a metric on the fly; nothing is cached.
#[derive(Debug)]
pub struct MetricSource<'a> {
    data: DataRef<'a>,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a> MetricSource<'a> {
    pub fn new(data: DataRef<'a>, metric: Metric) -> Result<Self> {
        let norms = match (data, metric) {
            (DataRef::Vectors(v), Metric::Cosine) => {
                let norms: Vec<f64> = v.points().map(metric::norm).collect();
                if let Some(i) = norms.iter().position(|&x| x == 0.0) {
                    return Err(Error::Domain(format!("point {i} has zero norm, cosine undefined")));
                }
                norms
            }
            (DataRef::Vectors(_), Metric::SquaredEuclidean) => Vec::new(),
            (DataRef::Sequences(_), Metric::Edit { indel }) => {
                if !(indel > 0.0) {
                    return Err(Error::config(format!("indel cost must be positive, got {indel}")));
                }
                Vec::new()
            }
            (DataRef::Vectors(_), m) => {
                return Err(Error::config(format!("metric {} needs sequence data", m.name())));
            }
            (DataRef::Sequences(_), m) => {
                return Err(Error::config(format!("metric {} needs vector data", m.name())));
            }
        };
        Ok(Self { data, metric, norms })
    }
}

impl Dissimilarity for MetricSource<'_> {
    fn len(&self) -> usize {
        match self.data {
            DataRef::Vectors(v) => v.len(),
            DataRef::Sequences(s) => s.len(),
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match (self.data, self.metric) {
            (DataRef::Vectors(v), Metric::SquaredEuclidean) => metric::sq_dist(v.point(i), v.point(j)),
            (DataRef::Vectors(v), Metric::Cosine) => {
                metric::cosine_with_norms(v.point(i), v.point(j), self.norms[i], self.norms[j])
            }
            (DataRef::Sequences(s), Metric::Edit { indel }) => metric::weighted_edit_distance(s.get(i), s.get(j), indel),
            _ => unreachable!("checked in MetricSource::new"),
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Computes the full matrix `d(i,j) = metric(point_i, point_j)`.
pub fn materialize_dissimilarity(data: DataRef<'_>, metric: Metric) -> Result<DenseMatrix> {
    let src = MetricSource::new(data, metric)?;
    let n = src.len();
    // evaluate the upper triangle once and mirror it so symmetry is exact
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = match i.cmp(&j) {
                std::cmp::Ordering::Less => src.get(i, j),
                std::cmp::Ordering::Greater => src.get(j, i),
                std::cmp::Ordering::Equal => 0.0,
            };
        }
    });
    DenseMatrix::from_vec(n, data)
}

/// Restriction of a source to a list of indices.
pub struct SubsetSource<'a, S: ?Sized> {
    inner: &'a S,
    idx: &'a [usize],
}

impl<'a, S: Dissimilarity + ?Sized> SubsetSource<'a, S> {
    pub fn new(inner: &'a S, idx: &'a [usize]) -> Self {
        Self { inner, idx }
    }
}

impl<S: Dissimilarity + ?Sized> Dissimilarity for SubsetSource<'_, S> {
    fn len(&self) -> usize {
        self.idx.len()
    }
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(self.idx[i], self.idx[j])
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}

/// Wraps a source and counts every access, optionally per entry.
pub struct CountingSource<S> {
    inner: S,
    total: AtomicU64,
    per_entry: Option<Vec<AtomicU32>>,
}

impl<S: Dissimilarity> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, total: AtomicU64::new(0), per_entry: None }
    }

    /// Also records how often each `(i, j)` is read (`N²` counters).
    pub fn with_entry_counts(inner: S) -> Self {
        let n = inner.len();
        Self { inner, total: AtomicU64::new(0), per_entry: Some((0..n * n).map(|_| AtomicU32::new(0)).collect()) }
    }

    pub fn accesses(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn entry_count(&self, i: usize, j: usize) -> Option<u32> {
        self.per_entry.as_ref().map(|c| c[i * self.inner.len() + j].load(Ordering::Relaxed))
    }

    pub fn reset(&self) {
        self.total.store(0, Ordering::Relaxed);
        if let Some(c) = &self.per_entry {
            c.iter().for_each(|x| x.store(0, Ordering::Relaxed));
        }
    }
}

impl<S: Dissimilarity> Dissimilarity for CountingSource<S> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        self.total.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = &self.per_entry {
            c[i * self.inner.len() + j].fetch_add(1, Ordering::Relaxed);
        }
        self.inner.get(i, j)
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}

/// Checks the source invariants: zero diagonal, finite nonnegative entries
/// and, when declared, symmetry. All pairs are checked up to `N = 200`;
/// beyond that a deterministic stride sample.
pub fn validate_source(src: &dyn Dissimilarity) -> Result<()> {
    let n = src.len();
    if n == 0 {
        return Err(Error::data("empty dissimilarity source"));
    }
    let stride = if n <= 200 { 1 } else { n / 200 + 1 };
    for i in 0..n {
        if src.get(i, i) != 0.0 {
            return Err(Error::Invariant(format!("d({i},{i}) != 0")));
        }
    }
    for i in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            let v = src.get(i, j);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invariant(format!("d({i},{j}) = {v}")));
            }
            if src.is_symmetric() && v != src.get(j, i) {
                return Err(Error::Invariant(format!("d({i},{j}) != d({j},{i}) in a symmetric source")));
            }
        }
    }
    Ok(())
}

/// Column-major copy, `col(l)[i] = d(i, l)`: every prototype criterion sums
/// down a column, so this layout keeps those sweeps contiguous.
pub(crate) struct Columns<'a> {
    n: usize,
    data: Cow<'a, [f64]>,
}

impl<'a> Columns<'a> {
    pub(crate) fn new(src: &'a dyn Dissimilarity) -> Self {
        let n = src.len();
        if let Some(dense) = src.as_dense() {
            if dense.is_symmetric() {
                return Self { n, data: Cow::Borrowed(dense.as_slice()) };
            }
        }
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(l, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = src.get(i, l);
            }
        });
        Self { n, data: Cow::Owned(data) }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub(crate) fn col(&self, l: usize) -> &[f64] {
        &self.data[l * self.n..(l + 1) * self.n]
    }

    /// `d(i, l)`.
    #[inline]
    pub(crate) fn at(&self, i: usize, l: usize) -> f64 {
        self.data[l * self.n + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_INDEL_COST;

    #[test]
    fn materialize_examples() {
        let same = VectorDataset::from_rows(&vec![vec![1.0, 2.0]; 3], None).unwrap();
        let m = materialize_dissimilarity(DataRef::Vectors(&same), Metric::SquaredEuclidean).unwrap();
        assert!(m.as_slice().iter().all(|v| *v == 0.0));
        assert!(m.is_symmetric());

        let two = VectorDataset::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]], None).unwrap();
        let m = materialize_dissimilarity(DataRef::Vectors(&two), Metric::SquaredEuclidean).unwrap();
        assert_eq!(m.get(0, 1), 25.0);

        let seqs = SequenceDataset::new(vec![vec![1.0, 2.0], vec![1.0]]).unwrap();
        let m = materialize_dissimilarity(DataRef::Sequences(&seqs), Metric::Edit { indel: DEFAULT_INDEL_COST }).unwrap();
        assert_eq!(m.get(0, 1), 4.5);
        assert_eq!(m.get(1, 0), 4.5);
    }

    #[test]
    fn metric_data_mismatch_is_config_error() {
        let seqs = SequenceDataset::new(vec![vec![1.0]]).unwrap();
        assert!(matches!(
            materialize_dissimilarity(DataRef::Sequences(&seqs), Metric::Cosine),
            Err(Error::Config(_))
        ));
        let v = VectorDataset::from_rows(&[vec![1.0]], None).unwrap();
        assert!(matches!(
            materialize_dissimilarity(DataRef::Vectors(&v), Metric::Edit { indel: 4.5 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dense_rejects_bad_entries() {
        assert!(DenseMatrix::from_vec(2, vec![0.0, -1.0, 1.0, 0.0]).is_err());
        assert!(DenseMatrix::from_vec(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DenseMatrix::from_vec(2, vec![0.0, 1.0, 1.0]).is_err());
        let asym = DenseMatrix::from_vec(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(!asym.is_symmetric());
        validate_source(&asym).unwrap();
    }

    #[test]
    fn columns_of_asymmetric_matrix() {
        let asym = DenseMatrix::from_vec(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        let cols = Columns::new(&asym);
        assert_eq!(cols.at(0, 1), 1.0);
        assert_eq!(cols.at(1, 0), 2.0);
        assert_eq!(cols.col(1), &[1.0, 0.0]);
    }

    #[test]
    fn counting_source_counts() {
        let m = DenseMatrix::from_fn(4, |i, j| (i + j) as f64).unwrap();
        let c = CountingSource::with_entry_counts(&m);
        c.get(1, 2);
        c.get(1, 2);
        c.get(3, 0);
        assert_eq!(c.accesses(), 3);
        assert_eq!(c.entry_count(1, 2), Some(2));
        assert_eq!(c.entry_count(2, 1), Some(0));
    }

    #[test]
    fn subset_view() {
        let m = DenseMatrix::from_fn(5, |i, j| (i as f64 - j as f64).abs()).unwrap();
        let idx = [4, 1];
        let s = SubsetSource::new(&m, &idx);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(0, 1), 3.0);
    }

    #[test]
    fn text_and_binary_files_round_trip() {
        let dir = std::env::temp_dir().join(format!("mediatop-dsm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = DenseMatrix::from_fn(7, |i, j| ((i * 7 + j) as f64).sin().abs() + 0.1 * (i + j) as f64).unwrap();
        let bin = dir.join("m.dsm");
        let txt = dir.join("m.txt");
        m.write_binary(&bin).unwrap();
        m.write_text(&txt).unwrap();
        assert_eq!(DenseMatrix::load(&bin).unwrap(), m);
        assert_eq!(DenseMatrix::load(&txt).unwrap(), m);
        let mut rows = DsmRowReader::open(&bin).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows.next_row().unwrap().unwrap(), m.row(0));
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest::proptest! {
        #[test]
        fn materialized_sources_are_valid(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..60),
            cosine in proptest::bool::ANY,
        ) {
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r[0] += 10.0; r }).collect();
            let d = VectorDataset::from_rows(&rows, None).unwrap();
            let metric = if cosine { Metric::Cosine } else { Metric::SquaredEuclidean };
            let m = materialize_dissimilarity(DataRef::Vectors(&d), metric).unwrap();
            proptest::prop_assert!(validate_source(&m).is_ok());
            proptest::prop_assert!(m.is_symmetric());
        }
    }
}

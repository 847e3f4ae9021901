//! Multiview datasets: on-disk layout, missing-view masking and a synthetic
//! generator whose views are conditionally independent given the label.
//!
//! A dataset directory holds `view_1.csv` … `view_V.csv` (one numeric row per
//! sample, no header), `labels.csv` (one integer per row), an optional
//! `mask.csv` (V comma-separated 0/1 flags per row) and a `meta` file in TOML.

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng_from_seed;

/// Provenance recorded alongside a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    pub name: String,
    /// Seed of the generator, for synthetic data.
    pub seed: Option<u64>,
    pub missing_rate: f64,
    /// Seed of the masking draw.
    pub mask_seed: Option<u64>,
    /// `"minmax"` once per-column min-max scaling has been applied.
    pub normalization: Option<String>,
    /// Per view, per column `[min, max]` seen at normalization time.
    pub ranges: Vec<Vec<[f64; 2]>>,
}

/// `V` views of `N` samples with labels and an availability mask.
///
/// Masked entries keep their original values so the complete dataset can be
/// recovered for imputation scoring; nothing in the training path reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiviewDataset {
    views: Vec<Matrix>,
    labels: Vec<usize>,
    mask: Vec<Vec<bool>>,
    meta: DatasetMeta,
}

impl MultiviewDataset {
    /// A complete dataset when `mask` is `None`.
    pub fn new(views: Vec<Matrix>, labels: Vec<usize>, mask: Option<Vec<Vec<bool>>>, meta: DatasetMeta) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::format(format!("need at least 2 views, got {}", views.len())));
        }
        let n = labels.len();
        for (v, x) in views.iter().enumerate() {
            if x.rows() != n {
                return Err(Error::format(format!(
                    "view {} has {} rows but there are {n} labels",
                    v + 1,
                    x.rows()
                )));
            }
        }
        let mask = mask.unwrap_or_else(|| vec![vec![true; views.len()]; n]);
        if mask.len() != n {
            return Err(Error::format(format!("mask has {} rows, expected {n}", mask.len())));
        }
        for (i, row) in mask.iter().enumerate() {
            if row.len() != views.len() {
                return Err(Error::format(format!("mask row {} has {} flags", i + 1, row.len())));
            }
            if !row.iter().any(|&m| m) {
                return Err(Error::format(format!("sample {} has no available view", i + 1)));
            }
            for (v, x) in views.iter().enumerate() {
                if row[v] && !x.row(i).iter().all(|f| f.is_finite()) {
                    return Err(Error::format(format!(
                        "non-finite feature in available view {} of sample {}",
                        v + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { views, labels, mask, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, v: usize) -> &Matrix {
        &self.views[v]
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    /// Mutable features; tests use this to overwrite masked entries.
    pub fn view_mut(&mut self, v: usize) -> &mut Matrix {
        &mut self.views[v]
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `max label + 1`.
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn is_available(&self, n: usize, v: usize) -> bool {
        self.mask[n][v]
    }

    pub fn available_views(&self, n: usize) -> Vec<usize> {
        (0..self.num_views()).filter(|&v| self.mask[n][v]).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|row| row.iter().all(|&m| m))
    }

    /// Number of samples with at least one masked view.
    pub fn incomplete_count(&self) -> usize {
        self.mask.iter().filter(|row| row.iter().any(|&m| !m)).count()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut DatasetMeta {
        &mut self.meta
    }

    /// Same features and labels with every view available.
    pub fn unmasked(&self) -> Self {
        let mut out = self.clone();
        out.mask = vec![vec![true; self.num_views()]; self.len()];
        out.meta.missing_rate = 0.0;
        out.meta.mask_seed = None;
        out
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            views: self.views.iter().map(|x| x.select_rows(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            mask: idx.iter().map(|&i| self.mask[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Scales every column of every view to [0, 1] using the available rows.
    /// Constant columns map to 0. Applying it twice changes nothing.
    pub fn normalize(&mut self) {
        let mut ranges = Vec::with_capacity(self.views.len());
        for (v, x) in self.views.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..x.rows()).filter(|&n| self.mask[n][v]).collect();
            let mut view_ranges = Vec::with_capacity(x.cols());
            for c in 0..x.cols() {
                let (lo, hi) = rows
                    .iter()
                    .map(|&n| x.get(n, c))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f), hi.max(f)));
                view_ranges.push([lo, hi]);
                let span = hi - lo;
                for n in 0..x.rows() {
                    let f = x.get(n, c);
                    let scaled = if span > 0.0 { (f - lo) / span } else { 0.0 };
                    x.set(n, c, if rows.is_empty() { f } else { scaled });
                }
            }
            ranges.push(view_ranges);
        }
        self.meta.normalization = Some("minmax".into());
        self.meta.ranges = ranges;
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn read_rows<T: std::str::FromStr>(path: &Path) -> Result<Vec<Vec<T>>> {
    let mut rows = Vec::new();
    for (i, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<T>().map_err(|_| {
                    Error::format(format!("{} line {}: cannot parse {field:?}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_rows<T: ToString>(path: &Path, rows: impl Iterator<Item = Vec<T>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.write_record(row.iter().map(ToString::to_string))
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset directory and applies min-max normalization.
pub fn load_dataset(dir: &Path) -> Result<MultiviewDataset> {
    let mut ds = read_dataset_raw(dir)?;
    ds.normalize();
    Ok(ds)
}

/// Reads a dataset directory without rescaling features.
pub fn read_dataset_raw(dir: &Path) -> Result<MultiviewDataset> {
    let mut views = Vec::new();
    for v in 1.. {
        let path = dir.join(format!("view_{v}.csv"));
        if !path.exists() {
            break;
        }
        let rows: Vec<Vec<f64>> = read_rows(&path)?;
        let m = Matrix::from_rows(&rows)
            .map_err(|_| Error::format(format!("{}: rows have different lengths", path.display())))?;
        views.push(m);
    }
    let labels: Vec<usize> = read_rows::<usize>(&dir.join("labels.csv"))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [l] => Ok(*l),
            _ => Err(Error::format(format!("labels.csv line {}: expected one value", i + 1))),
        })
        .collect::<Result<_>>()?;
    let mask_path = dir.join("mask.csv");
    let mask = if mask_path.exists() {
        let rows: Vec<Vec<u8>> = read_rows(&mask_path)?;
        let mut mask = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            let flags = r
                .into_iter()
                .map(|f| match f {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::format(format!("mask.csv line {}: flag {other}", i + 1))),
                })
                .collect::<Result<Vec<bool>>>()?;
            mask.push(flags);
        }
        Some(mask)
    } else {
        None
    };
    let meta_path = dir.join("meta");
    let meta = if meta_path.exists() {
        toml::from_str(&fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?
    } else {
        DatasetMeta {
            name: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            ..Default::default()
        }
    };
    MultiviewDataset::new(views, labels, mask, meta)
}

/// Writes the directory layout read by [`load_dataset`]. Values are written in
/// shortest round-trip form, so a reload is exact.
pub fn write_dataset(ds: &MultiviewDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (v, x) in ds.views.iter().enumerate() {
        write_rows(&dir.join(format!("view_{}.csv", v + 1)), (0..x.rows()).map(|n| x.row(n).to_vec()))?;
    }
    write_rows(&dir.join("labels.csv"), ds.labels.iter().map(|&l| vec![l]))?;
    write_mask(ds, &dir.join("mask.csv"))?;
    let meta = toml::to_string(&ds.meta).map_err(|e| Error::format(e.to_string()))?;
    fs::write(dir.join("meta"), meta)?;
    Ok(())
}

pub fn write_mask(ds: &MultiviewDataset, path: &Path) -> Result<()> {
    write_rows(
        path,
        ds.mask.iter().map(|row| row.iter().map(|&m| u8::from(m)).collect()),
    )
}

/// Masks views of `⌊p·N⌋` samples chosen uniformly without replacement.
///
/// Each chosen sample loses a subset of views drawn uniformly from the
/// `2^V − 2` nonempty proper subsets, so no row ends up fully masked.
pub fn apply_missing(ds: &MultiviewDataset, missing_rate: f64, seed: u64) -> Result<MultiviewDataset> {
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::invalid(format!("missing rate {missing_rate} outside [0, 1)")));
    }
    if !ds.is_complete() {
        return Err(Error::invalid("masking expects a complete dataset"));
    }
    let views = ds.num_views();
    if views > 30 {
        return Err(Error::invalid(format!("{views} views is too many to enumerate subsets")));
    }
    let n = ds.len();
    let count = (missing_rate * n as f64).floor() as usize;
    let mut rng = rng_from_seed(seed);
    let chosen = sample_indices(&mut rng, n, count);
    let mut out = ds.clone();
    let subsets = (1u32 << views) - 2;
    for i in chosen.iter() {
        let masked = rng.random_range(1..=subsets);
        for v in 0..views {
            out.mask[i][v] = masked & (1 << v) == 0;
        }
    }
    out.meta.missing_rate = missing_rate;
    out.meta.mask_seed = Some(seed);
    Ok(out)
}

/// Gaussian mixture with one mean per (view, cluster).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub views: usize,
    /// Feature dimension of every view.
    pub dim: usize,
    /// Standard deviation of the cluster-mean coordinates.
    pub separation: f64,
    /// Standard deviation of the per-sample noise.
    pub noise: f64,
    pub samples: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 10,
            views: 3,
            dim: 20,
            separation: 1.0,
            noise: 0.3,
            samples: 3000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 || self.views < 2 || self.dim == 0 || self.samples == 0 {
            return Err(Error::invalid("synthetic spec needs k >= 2, V >= 2, dim >= 1, N >= 1"));
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::invalid("separation must be positive and noise nonnegative"));
        }
        Ok(())
    }
}

/// Draws `y ~ Uniform(k)` and, independently per view, `x_v = μ_{v,y} + σ ε`.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<MultiviewDataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let means: Vec<Vec<Vec<f64>>> = (0..spec.views)
        .map(|_| {
            (0..spec.clusters)
                .map(|_| {
                    (0..spec.dim)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            spec.separation * g
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..spec.samples).map(|_| rng.random_range(0..spec.clusters)).collect();
    let mut views = vec![Matrix::zeros(spec.samples, spec.dim); spec.views];
    for (n, &y) in labels.iter().enumerate() {
        for (v, x) in views.iter_mut().enumerate() {
            for (c, mu) in means[v][y].iter().enumerate() {
                let eps: f64 = StandardNormal.sample(&mut rng);
                x.set(n, c, mu + spec.noise * eps);
            }
        }
    }
    let meta = DatasetMeta {
        name: "synthetic".into(),
        seed: Some(seed),
        ..Default::default()
    };
    MultiviewDataset::new(views, labels, None, meta)
}

/// Shapes of the public benchmarks the runner is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchmarkLayout {
    Handwritten,
    Fashion,
    MsrcV1,
}

impl BenchmarkLayout {
    pub const ALL: [BenchmarkLayout; 3] = [Self::Handwritten, Self::Fashion, Self::MsrcV1];

    pub fn name(self) -> &'static str {
        match self {
            Self::Handwritten => "Handwritten",
            Self::Fashion => "Fashion",
            Self::MsrcV1 => "MSRC-v1",
        }
    }

    /// `(samples, views, clusters)`.
    pub fn shape(self) -> (usize, usize, usize) {
        match self {
            Self::Handwritten => (2000, 6, 10),
            Self::Fashion => (10000, 3, 10),
            Self::MsrcV1 => (210, 5, 7),
        }
    }

    /// Checks a loaded dataset against the expected shape.
    pub fn check(self, ds: &MultiviewDataset) -> Result<()> {
        let expected = self.shape();
        let found = (ds.len(), ds.num_views(), ds.num_clusters());
        if found != expected {
            return Err(Error::format(format!(
                "{} expects (N, V, k) = {expected:?}, found {found:?}",
                self.name()
            )));
        }
        Ok(())
    }
}

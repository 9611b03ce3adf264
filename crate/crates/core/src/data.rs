//! Dataset ingestion, synthetic weak-modality generation, splits and
//! normalization.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-modality feature matrices with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    /// One `[n, d_m]` matrix per modality.
    pub modalities: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// An immutable set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
    pub classes: usize,
    /// Which modality carried the signal, for synthetic data. Only the
    /// evaluation harness reads this; models never see it.
    pub informative: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(Tensor::cols).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let modalities = self
            .modalities
            .iter()
            .map(|t| {
                let d = t.cols();
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    data.extend_from_slice(t.row_slice(i));
                }
                Tensor::matrix(indices.len(), d, data).expect("row copy keeps shape")
            })
            .collect();
        Dataset {
            modalities,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            classes: self.classes,
            informative: self
                .informative
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> MultimodalBatch {
        let s = self.subset(indices);
        MultimodalBatch {
            modalities: s.modalities,
            labels: s.labels,
            ids: s.ids,
        }
    }

    pub fn as_batch(&self) -> MultimodalBatch {
        MultimodalBatch {
            modalities: self.modalities.clone(),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
        }
    }

    /// Single-modality view, for training per-modality baselines.
    pub fn project(&self, m: usize) -> Dataset {
        Dataset {
            modalities: vec![self.modalities[m].clone()],
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            classes: self.classes,
            informative: self.informative.clone(),
        }
    }

    /// Hash of labels and feature bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.classes as u64).to_le_bytes());
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for t in &self.modalities {
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Columns of one modality: an explicit list or an inclusive `"a-b"` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSet {
    List(Vec<usize>),
    Range(String),
}

impl ColumnSet {
    pub fn columns(&self) -> Result<Vec<usize>> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Range(s) => {
                let (a, b) = s.split_once('-').ok_or_else(|| {
                    Error::Config(format!("column range {s:?} must look like \"1-21\""))
                })?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad column bound in {s:?}")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(Error::Config(format!("empty column range {s:?}")));
                }
                Ok((a..=b).collect())
            }
        }
    }
}

fn default_label_column() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: usize,
    pub modalities: Vec<ColumnSet>,
    #[serde(default)]
    pub header: bool,
    /// Read at most this many data rows from the top of the file.
    #[serde(default)]
    pub limit_rows: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
}

impl FileSource {
    pub fn partitions(&self) -> Result<Vec<Vec<usize>>> {
        self.modalities.iter().map(ColumnSet::columns).collect()
    }

    /// Partitions must be non-empty, disjoint, and exclude the label column.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let parts = match self.partitions() {
            Ok(p) => p,
            Err(e) => return vec![e.to_string()],
        };
        if parts.is_empty() {
            v.push("dataset.file.modalities must list at least one modality".into());
        }
        let mut seen = std::collections::HashSet::new();
        for (m, cols) in parts.iter().enumerate() {
            if cols.is_empty() {
                v.push(format!("modality {m} has no columns"));
            }
            for &c in cols {
                if c == self.label_column {
                    v.push(format!("modality {m} includes the label column {c}"));
                }
                if !seen.insert(c) {
                    v.push(format!("column {c} appears in more than one modality"));
                }
            }
        }
        v
    }
}

/// Generative parameters for the weak-modality benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub modalities: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("samples", self.samples),
            ("modalities", self.modalities),
            ("dim", self.dim),
        ] {
            if val == 0 {
                v.push(format!("dataset.synthetic.{name} must be positive"));
            }
        }
        if self.classes < 2 {
            v.push("dataset.synthetic.classes must be at least 2".into());
        }
        if !(self.separation > 0.0) {
            v.push("dataset.synthetic.separation must be > 0".into());
        }
        if !(self.noise_std >= 0.0) {
            v.push("dataset.synthetic.noise_std must be >= 0".into());
        }
        v
    }

    /// Class centroids per modality, `[modality][class] -> vector`.
    ///
    /// Random Gaussian directions are centred across classes and rescaled to
    /// norm `separation`; with two classes the centroids are antipodal.
    pub fn centroids(&self) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        (0..self.modalities)
            .map(|_| {
                let raw: Vec<Vec<f64>> = (0..self.classes)
                    .map(|_| (0..self.dim).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let mean: Vec<f64> = (0..self.dim)
                    .map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / self.classes as f64)
                    .collect();
                raw.into_iter()
                    .map(|r| {
                        let c: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
                        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                        c.iter().map(|x| x * self.separation / norm).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    File(FileSource),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    #[default]
    Zscore,
}

fn default_fraction() -> f64 {
    1.0
}

/// Row-order split: the last `test_rows` rows are test, the `dev_rows`
/// before them dev, everything earlier train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_rows: usize,
    pub dev_rows: usize,
    /// Random fraction of the train split to keep (1/3 for HIGGS-small).
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DataSource,
    pub split: SplitSpec,
    #[serde(default)]
    pub normalization: Normalization,
}

impl DatasetSpec {
    pub fn modality_count(&self) -> usize {
        match &self.source {
            DataSource::File(f) => f.modalities.len(),
            DataSource::Synthetic(s) => s.modalities,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = match &self.source {
            DataSource::File(f) => f.violations(),
            DataSource::Synthetic(s) => s.violations(),
        };
        let sp = &self.split;
        if !(sp.train_fraction > 0.0 && sp.train_fraction <= 1.0) {
            v.push(format!(
                "dataset.split.train_fraction = {} must be in (0, 1]",
                sp.train_fraction
            ));
        }
        if sp.dev_rows == 0 {
            v.push("dataset.split.dev_rows must be positive".into());
        }
        if sp.test_rows == 0 {
            v.push("dataset.split.test_rows must be positive".into());
        }
        if let DataSource::Synthetic(s) = &self.source {
            if sp.test_rows + sp.dev_rows >= s.samples {
                v.push(format!(
                    "split needs {} dev+test rows but only {} samples leave no training data",
                    sp.test_rows + sp.dev_rows,
                    s.samples
                ));
            }
        }
        v
    }
}

/// Train, dev and test portions of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

/// Parses a comma-separated file with the label in `label_column`.
pub fn load_delimited(src: &FileSource) -> Result<Dataset> {
    let parts = src.partitions()?;
    let bad = src.violations();
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    let max_col = parts
        .iter()
        .flatten()
        .copied()
        .chain(std::iter::once(src.label_column))
        .max()
        .unwrap_or(0);

    let reader = BufReader::new(File::open(&src.path)?);
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); parts.len()];
    let mut labels = Vec::new();
    let mut width = None;
    let mut row = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if src.header && i == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if src.limit_rows.is_some_and(|n| labels.len() >= n) {
            break;
        }
        let perr = |message: String| Error::Parse {
            path: src.path.clone(),
            line: lineno,
            message,
        };
        row.clear();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| perr(format!("cannot parse {:?} as a number", field.trim())))?;
            row.push(v);
        }
        match width {
            None => {
                if row.len() <= max_col {
                    return Err(Error::Config(format!(
                        "{}: rows have {} columns but the modality partition references column {max_col}",
                        src.path.display(),
                        row.len()
                    )));
                }
                width = Some(row.len());
            }
            Some(w) if w != row.len() => {
                return Err(perr(format!("expected {w} columns, found {}", row.len())));
            }
            _ => {}
        }
        let y = row[src.label_column];
        if !(y >= 0.0) || y.fract() != 0.0 {
            return Err(perr(format!("label {y} is not a non-negative integer")));
        }
        labels.push(y as usize);
        for (m, cols) in parts.iter().enumerate() {
            features[m].extend(cols.iter().map(|&c| row[c]));
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Config(format!("{} contains no data rows", src.path.display())));
    }
    let observed = labels.iter().max().map_or(0, |m| m + 1);
    let classes = src.classes.unwrap_or(observed).max(2);
    if observed > classes {
        return Err(Error::Config(format!(
            "labels reach class {} but only {classes} classes are configured",
            observed - 1
        )));
    }
    let modalities = features
        .into_iter()
        .zip(&parts)
        .map(|(data, cols)| Tensor::matrix(n, cols.len(), data))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        modalities,
        labels,
        ids: (0..n).collect(),
        classes,
        informative: None,
    })
}

/// Draws the synthetic weak-modality dataset: for each sample one modality,
/// chosen uniformly, carries `centroid(y) + noise`; all others are noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let bad = spec.violations();
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    let centroids = spec.centroids();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d, mc) = (spec.samples, spec.dim, spec.modalities);
    let mut feats = vec![Vec::with_capacity(n * d); mc];
    let mut labels = Vec::with_capacity(n);
    let mut informative = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.gen_range(0..spec.classes);
        let m = rng.gen_range(0..mc);
        for (j, f) in feats.iter_mut().enumerate() {
            for c in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                let base = if j == m { centroids[j][y][c] } else { 0.0 };
                f.push(base + spec.noise_std * noise);
            }
        }
        labels.push(y);
        informative.push(m);
    }
    let modalities = feats
        .into_iter()
        .map(|data| Tensor::matrix(n, d, data))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        modalities,
        labels,
        ids: (0..n).collect(),
        classes: spec.classes,
        informative: Some(informative),
    })
}

/// Nearest-centroid class for `x` among `centroids`.
pub fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Monte-Carlo error of the optimal rule that knows which modality is
/// informative: nearest centroid on that modality.
pub fn bayes_rate(spec: &SyntheticSpec, draws: usize, seed: u64) -> f64 {
    let centroids = spec.centroids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = 0usize;
    let mut x = vec![0.0; spec.dim];
    for _ in 0..draws {
        let y = rng.gen_range(0..spec.classes);
        let m = rng.gen_range(0..spec.modalities);
        for (c, xc) in x.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *xc = centroids[m][y][c] + spec.noise_std * noise;
        }
        if nearest_centroid(&x, &centroids[m]) != y {
            errors += 1;
        }
    }
    errors as f64 / draws as f64
}

/// Column statistics from the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    means: Vec<Vec<f64>>,
    stds: Vec<Vec<f64>>,
}

impl Normalizer {
    pub fn fit(train: &Dataset) -> Self {
        let n = train.len().max(1) as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for t in &train.modalities {
            let d = t.cols();
            let mut mu = vec![0.0; d];
            for r in 0..t.rows() {
                for (m, v) in mu.iter_mut().zip(t.row_slice(r)) {
                    *m += v;
                }
            }
            mu.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for r in 0..t.rows() {
                for ((s, v), m) in var.iter_mut().zip(t.row_slice(r)).zip(&mu) {
                    *s += (v - m) * (v - m);
                }
            }
            let sd = var
                .into_iter()
                .map(|s| {
                    let sd = (s / n).sqrt();
                    if sd > 0.0 { sd } else { 1.0 }
                })
                .collect();
            means.push(mu);
            stds.push(sd);
        }
        Self { means, stds }
    }

    pub fn apply(&self, ds: &mut Dataset) {
        for ((t, mu), sd) in ds.modalities.iter_mut().zip(&self.means).zip(&self.stds) {
            let d = t.cols();
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                let c = i % d;
                *v = (*v - mu[c]) / sd[c];
            }
        }
    }
}

/// Splits by row order, optionally subsamples train, then normalizes all
/// three parts with train statistics.
pub fn split_dataset(ds: &Dataset, split: &SplitSpec, norm: Normalization) -> Result<Splits> {
    let n = ds.len();
    if split.test_rows + split.dev_rows >= n {
        return Err(Error::Config(format!(
            "{} rows cannot hold {} test and {} dev rows plus training data",
            n, split.test_rows, split.dev_rows
        )));
    }
    let test_start = n - split.test_rows;
    let dev_start = test_start - split.dev_rows;
    let mut train_idx: Vec<usize> = (0..dev_start).collect();
    if split.train_fraction < 1.0 {
        let keep = ((dev_start as f64) * split.train_fraction).round().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(split.subsample_seed);
        train_idx.shuffle(&mut rng);
        train_idx.truncate(keep);
        train_idx.sort_unstable();
    }
    let mut train = ds.subset(&train_idx);
    let mut dev = ds.subset(&(dev_start..test_start).collect::<Vec<_>>());
    let mut test = ds.subset(&(test_start..n).collect::<Vec<_>>());
    if norm == Normalization::Zscore {
        let z = Normalizer::fit(&train);
        z.apply(&mut train);
        z.apply(&mut dev);
        z.apply(&mut test);
    }
    Ok(Splits { train, dev, test })
}

/// Loads or generates the dataset described by `spec` and splits it.
/// Relative file paths resolve against `base_dir`.
pub fn prepare(spec: &DatasetSpec, base_dir: &Path) -> Result<Splits> {
    let bad = spec.violations();
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    let ds = match &spec.source {
        DataSource::File(f) => {
            let mut f = f.clone();
            if f.path.is_relative() {
                f.path = base_dir.join(&f.path);
            }
            load_delimited(&f)?
        }
        DataSource::Synthetic(s) => generate_synthetic(s)?,
    };
    split_dataset(&ds, &spec.split, spec.normalization)
}

#[derive(Serialize)]
struct SyntheticSidecar<'a> {
    spec: &'a SyntheticSpec,
    label_column: usize,
    modality_columns: Vec<String>,
    informative_modality: &'a [usize],
}

/// Writes `ds` as CSV (label first, then modality columns in order) and a
/// JSON sidecar with the generative spec and informative-modality indices.
pub fn export_synthetic(ds: &Dataset, spec: &SyntheticSpec, csv_path: &Path, meta_path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(csv_path)?);
    for r in 0..ds.len() {
        write!(out, "{}", ds.labels[r])?;
        for t in &ds.modalities {
            for v in t.row_slice(r) {
                write!(out, ",{v}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    let mut col = 1;
    let modality_columns = ds
        .modality_dims()
        .iter()
        .map(|d| {
            let s = format!("{}-{}", col, col + d - 1);
            col += d;
            s
        })
        .collect();
    let empty = Vec::new();
    let side = SyntheticSidecar {
        spec,
        label_column: 0,
        modality_columns,
        informative_modality: ds.informative.as_ref().unwrap_or(&empty),
    };
    fs::write(meta_path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

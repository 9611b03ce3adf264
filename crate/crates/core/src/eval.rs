//! Metrics, over-learn decomposition and sweep aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("error rate of an empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with
/// average ranks for tied scores. `labels` are 0/1; class 1 is positive.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Contract(format!("AUC needs binary labels, saw {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Samples on which at least one single-modality model is correct.
pub fn qualifying_mask(per_modality: &[Vec<usize>], labels: &[usize]) -> Vec<bool> {
    (0..labels.len())
        .map(|r| per_modality.iter().any(|p| p[r] == labels[r]))
        .collect()
}

/// Error of the multimodal predictions restricted to samples that at least
/// one single modality gets right.
pub fn over_learn_error(
    multimodal: &[usize],
    per_modality: &[Vec<usize>],
    labels: &[usize],
) -> Result<f64> {
    if multimodal.len() != labels.len() || per_modality.iter().any(|p| p.len() != labels.len()) {
        return Err(Error::Contract("over-learn inputs are not aligned".into()));
    }
    let mask = qualifying_mask(per_modality, labels);
    let (mut n, mut wrong) = (0usize, 0usize);
    for ((keep, p), y) in mask.iter().zip(multimodal).zip(labels) {
        if *keep {
            n += 1;
            if p != y {
                wrong += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(
            "no sample is predicted correctly by any single modality".into(),
        ));
    }
    Ok(wrong as f64 / n as f64)
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    pub modality: usize,
    pub error_rate: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    /// Display label, e.g. "mul" or "mulmix beta=0.8".
    pub method: String,
    pub kind: String,
    pub beta: f64,
    pub error_rate: f64,
    pub errors: usize,
    pub auc: Option<f64>,
    pub test_loss: f64,
    pub per_modality: Vec<ModalityMetrics>,
    pub over_learn_error: Option<f64>,
    pub best_dev_metric: f64,
    pub samples: usize,
    pub param_count: usize,
    pub seed: u64,
    pub config_fingerprint: String,
    pub dataset_fingerprint: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created_at: u64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.error_rate) || self.auc.is_some_and(|a| !unit(a)) {
            return Err(Error::Contract(format!(
                "metrics out of range: error {} auc {:?}",
                self.error_rate, self.auc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub mean_err: f64,
    pub std_err: f64,
    pub n_seeds: usize,
    /// Messages from runs that failed; they are excluded from the mean.
    #[serde(default)]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub version: u32,
    /// Swept parameter, `beta` for the usual sweep.
    pub parameter: String,
    pub entries: Vec<SweepEntry>,
}

/// One finished (value, seed) run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub outcome: std::result::Result<f64, String>,
}

impl SweepResult {
    /// Groups cells by value, keeping the order values first appear in.
    pub fn aggregate(parameter: &str, cells: &[SweepCell]) -> Self {
        let mut values: Vec<f64> = Vec::new();
        for c in cells {
            if !values.iter().any(|v| v.to_bits() == c.value.to_bits()) {
                values.push(c.value);
            }
        }
        let entries = values
            .into_iter()
            .map(|v| {
                let mine: Vec<&SweepCell> = cells.iter().filter(|c| c.value.to_bits() == v.to_bits()).collect();
                let ok: Vec<f64> = mine.iter().filter_map(|c| c.outcome.as_ref().ok().copied()).collect();
                let failures = mine
                    .iter()
                    .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("seed {}: {e}", c.seed)))
                    .collect();
                let (mean_err, std_err) = mean_std(&ok);
                SweepEntry {
                    value: v,
                    mean_err,
                    std_err,
                    n_seeds: ok.len(),
                    failures,
                }
            })
            .collect();
        Self {
            version: METRICS_VERSION,
            parameter: parameter.to_string(),
            entries,
        }
    }

    /// Plot data with columns `(<parameter>, mean_err, std_err, n_seeds)`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},mean_err,std_err,n_seeds\n", self.parameter);
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", e.value, e.mean_err, e.std_err, e.n_seeds));
        }
        s
    }

    pub fn best(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .filter(|e| e.n_seeds > 0)
            .min_by(|a, b| a.mean_err.total_cmp(&b.mean_err))
    }
}

/// `points` evenly spaced values from `lo` to `hi` with exact endpoints.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| {
                if i == points - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

/// Runs `run(beta, seed)` for every grid point and seed, sequentially, and
/// aggregates test error per beta. Failed runs are recorded, not fatal.
pub fn sweep_beta<F>(grid: &[f64], seeds: &[u64], mut run: F) -> Result<SweepResult>
where
    F: FnMut(f64, u64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut cells = Vec::with_capacity(grid.len() * seeds.len());
    for &b in grid {
        for &s in seeds {
            cells.push(SweepCell {
                value: b,
                seed: s,
                outcome: run(b, s).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(SweepResult::aggregate("beta", &cells))
}

//! A single training run: data, model, training, evaluation, artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use mmfuse::data::{self, Dataset, Splits};
use mmfuse::eval::{self, MetricsReport, ModalityMetrics, METRICS_VERSION};
use mmfuse::fusion::{self, FusionConfig, FusionKind, Predictions};
use mmfuse::models::{init_bundle, ModelBundle};
use mmfuse::tensor::Tape;
use mmfuse::training::{self, TrainOutcome};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Rows per forward pass at evaluation time.
const EVAL_CHUNK: usize = 8192;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub struct RunOutput {
    pub metrics: MetricsReport,
    pub outcome: TrainOutcome,
    pub bundle: ModelBundle,
}

pub fn load_splits(cfg: &ExperimentConfig) -> CliResult<Splits> {
    Ok(data::prepare(&cfg.dataset, &cfg.base_dir)?)
}

fn shuffle_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt)
}

/// Predictions over a dataset in fixed-size chunks.
pub fn predict_all(bundle: &ModelBundle, ds: &Dataset, fusion: &FusionConfig) -> CliResult<Predictions> {
    let mut out = Predictions { classes: Vec::with_capacity(ds.len()), scores: Vec::with_capacity(ds.len()) };
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let p = fusion::predict(bundle, &ds.batch(chunk), fusion)?;
        out.classes.extend(p.classes);
        out.scores.extend(p.scores);
    }
    Ok(out)
}

/// Mean training objective (without the boosting gate) over a dataset.
pub fn mean_loss(bundle: &ModelBundle, ds: &Dataset, fusion: &FusionConfig) -> CliResult<f64> {
    let plain = FusionConfig { boosted: false, ..fusion.clone() };
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let loss = fusion::training_loss(&mut tape, bundle, &ds.batch(chunk), &plain)?;
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

fn auc_or_none(p: &Predictions, ds: &Dataset) -> Option<f64> {
    if ds.classes == 2 {
        eval::auc(&p.scores, &ds.labels).ok()
    } else {
        None
    }
}

/// Single-modality reference models, one per modality, trained on the raw
/// modality features. Returns test predictions per modality.
fn baselines(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> CliResult<Vec<Predictions>> {
    let early = FusionConfig::new(FusionKind::Early);
    (0..splits.train.modality_count())
        .map(|m| {
            let (train, dev, test) = (splits.train.project(m), splits.dev.project(m), splits.test.project(m));
            let arch = cfg.baseline_architecture(train.modality_dims()[0], train.classes);
            let mut b = init_bundle(&arch, FusionKind::Early, shuffle_seed(seed, 101 + m as u64))?;
            training::train(
                &mut b,
                &train,
                &dev,
                &early,
                &cfg.optimizer,
                &cfg.training,
                shuffle_seed(seed, 201 + m as u64),
            )?;
            predict_all(&b, &test, &early)
        })
        .collect()
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Trains the configured model on prepared splits and evaluates it on test.
/// Nothing is written to disk.
pub fn execute(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> CliResult<RunOutput> {
    cfg.validate()?;
    let arch = cfg.architecture(&splits.train.modality_dims(), splits.train.classes);
    let mut bundle = init_bundle(&arch, cfg.fusion.kind, seed)?;
    let outcome = training::train(
        &mut bundle,
        &splits.train,
        &splits.dev,
        &cfg.fusion,
        &cfg.optimizer,
        &cfg.training,
        shuffle_seed(seed, 1),
    )?;

    let test = &splits.test;
    let pred = predict_all(&bundle, test, &cfg.fusion)?;
    let errors = pred.classes.iter().zip(&test.labels).filter(|(p, y)| p != y).count();
    let error_rate = eval::error_rate(&pred.classes, &test.labels)?;
    let test_loss = mean_loss(&bundle, test, &cfg.fusion)?;

    let (per_modality, over_learn_error) = if cfg.eval.baselines {
        let base = baselines(cfg, splits, seed)?;
        let per = base
            .iter()
            .enumerate()
            .map(|(m, p)| {
                Ok(ModalityMetrics {
                    modality: m,
                    error_rate: eval::error_rate(&p.classes, &test.labels)?,
                    auc: auc_or_none(p, test),
                })
            })
            .collect::<mmfuse::Result<Vec<_>>>()?;
        let classes: Vec<Vec<usize>> = base.into_iter().map(|p| p.classes).collect();
        let ole = eval::over_learn_error(&pred.classes, &classes, &test.labels).ok();
        (per, ole)
    } else {
        (Vec::new(), None)
    };

    let metrics = MetricsReport {
        version: METRICS_VERSION,
        method: cfg.method_label(),
        kind: cfg.fusion.kind.name().to_string(),
        beta: cfg.fusion.beta,
        error_rate,
        errors,
        auc: auc_or_none(&pred, test),
        test_loss,
        per_modality,
        over_learn_error,
        best_dev_metric: outcome.best_dev,
        samples: test.len(),
        param_count: bundle.param_count(),
        seed,
        config_fingerprint: cfg.fingerprint(),
        dataset_fingerprint: test.fingerprint(),
        created_at: now_secs(),
    };
    metrics.validate()?;
    Ok(RunOutput { metrics, outcome, bundle })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let ctx = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(ctx(), e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(ctx(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(ctx(), e.error))?;
    Ok(())
}

/// Writes the four run artifacts into `out`.
pub fn write_artifacts(out: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    write_atomic(&out.join(CHECKPOINT_FILE), run.bundle.to_checkpoint_json()?.as_bytes())?;
    let metrics = serde_json::to_string_pretty(&run.metrics).map_err(mmfuse::Error::from)?;
    write_atomic(&out.join(METRICS_FILE), metrics.as_bytes())?;
    write_atomic(&out.join(LOG_FILE), run.outcome.log_csv().as_bytes())?;
    let mut resolved = cfg.clone();
    resolved.seed = run.metrics.seed;
    resolved.output_dir = Some(out.to_path_buf());
    write_atomic(&out.join(CONFIG_FILE), resolved.to_toml()?.as_bytes())?;
    Ok(())
}

/// Full `run` command: prepare data, train, evaluate, write artifacts.
pub fn cmd_run(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<MetricsReport> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let run = execute(cfg, &splits, seed)?;
    write_artifacts(out, cfg, &run)?;
    Ok(run.metrics)
}

pub fn read_metrics(path: &Path) -> CliResult<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let m: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    if m.version != METRICS_VERSION {
        return Err(CliError::Other(format!(
            "{}: metrics version {} is not supported (expected {METRICS_VERSION})",
            path.display(),
            m.version
        )));
    }
    Ok(m)
}

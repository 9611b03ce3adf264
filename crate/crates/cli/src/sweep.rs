//! Grid sweeps over one configuration parameter, several seeds per value.

use std::fs;
use std::path::{Path, PathBuf};

use mmfuse::eval::{linspace, SweepCell, SweepResult};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, THREADS_ENV};
use crate::error::{CliError, CliResult};
use crate::run::{self, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Delta,
    HeadDepth,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Beta => "beta",
            Self::Delta => "delta",
            Self::HeadDepth => "head_depth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Parses `name=v1,v2,...` or `name=lo:hi:points`.
pub fn parse_grid(spec: &str) -> CliResult<Grid> {
    let bad = |msg: String| CliError::Invalid(vec![format!("--grid {spec:?}: {msg}")]);
    let (name, rest) = spec.split_once('=').ok_or_else(|| bad("expected name=values".into()))?;
    let param = match name.trim() {
        "beta" => SweepParam::Beta,
        "delta" => SweepParam::Delta,
        "head_depth" => SweepParam::HeadDepth,
        other => return Err(bad(format!("unknown parameter {other:?}; use beta, delta or head_depth"))),
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
    let values = if rest.contains(':') {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("range form is lo:hi:points".into()));
        }
        let points = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("{:?} is not a point count", parts[2])))?;
        linspace(num(parts[0])?, num(parts[1])?, points)
    } else {
        rest.split(',').map(num).collect::<CliResult<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("no values".into()));
    }
    if param == SweepParam::HeadDepth && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(bad("head_depth values must be non-negative integers".into()));
    }
    Ok(Grid { param, values })
}

/// The configuration for one grid value.
pub fn apply(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    match param {
        SweepParam::Beta => c.fusion.beta = value,
        SweepParam::Delta => c.fusion.delta = value,
        SweepParam::HeadDepth => {
            let width = cfg.head_hidden(cfg.fusion.kind).first().copied().unwrap_or(cfg.model.embedding_dim);
            c.model.head_hidden = vec![width; value as usize];
            c.model.head_hidden_for.remove(cfg.fusion.kind.name());
        }
    }
    c
}

pub fn cell_dir(out: &Path, param: SweepParam, value: f64, seed: u64) -> PathBuf {
    out.join(format!("{}={value}", param.name())).join(format!("seed-{seed}"))
}

/// Worker threads: explicit request, else the environment, else all cores.
pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Test error of a cell already completed by an earlier, interrupted sweep
/// with the same configuration.
fn finished(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> Option<f64> {
    let m = run::read_metrics(&dir.join(run::METRICS_FILE)).ok()?;
    (m.seed == seed && m.config_fingerprint == cfg.fingerprint()).then_some(m.error_rate)
}

/// Runs every (value, seed) cell and writes per-cell artifacts plus
/// `sweep.csv` and `sweep.json`. Cells with matching results on disk are
/// not rerun. Cell seeds are `cfg.seed + seed_index`, so
/// the same seed set is used at every grid value.
pub fn cmd_sweep(cfg: &ExperimentConfig, grid: &Grid, seeds: usize, out: &Path, threads: usize) -> CliResult<SweepResult> {
    let mut invalid = Vec::new();
    for &v in &grid.values {
        for msg in apply(cfg, grid.param, v).violations() {
            invalid.push(format!("{}={v}: {msg}", grid.param.name()));
        }
    }
    if seeds == 0 {
        invalid.push("sweep needs at least one seed".into());
    }
    if !invalid.is_empty() {
        return Err(CliError::Invalid(invalid));
    }
    let splits = run::load_splits(cfg)?;
    let jobs: Vec<(f64, u64)> = grid
        .values
        .iter()
        .flat_map(|&v| (0..seeds as u64).map(move |i| (v, cfg.seed + i)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(value, seed)| {
                let c = apply(cfg, grid.param, value);
                let dir = cell_dir(out, grid.param, value, seed);
                let outcome = match finished(&dir, &c, seed) {
                    Some(err) => Ok(err),
                    None => run::execute(&c, &splits, seed)
                        .and_then(|r| {
                            run::write_artifacts(&dir, &c, &r)?;
                            Ok(r.metrics.error_rate)
                        })
                        .map_err(|e| e.to_string()),
                };
                SweepCell { value, seed, outcome }
            })
            .collect()
    });

    let result = SweepResult::aggregate(grid.param.name(), &cells);
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    write_atomic(&out.join("sweep.csv"), result.to_csv().as_bytes())?;
    let json = serde_json::to_string_pretty(&result).map_err(mmfuse::Error::from)?;
    write_atomic(&out.join("sweep.json"), json.as_bytes())?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_and_range_grids() {
        let g = parse_grid("beta=0,0.3").unwrap();
        assert_eq!(g.param, SweepParam::Beta);
        assert_eq!(g.values, vec![0.0, 0.3]);
        let g = parse_grid("beta=0:1:6").unwrap();
        assert_eq!(g.values.len(), 6);
        assert_eq!(g.values[0], 0.0);
        assert_eq!(g.values[5], 1.0);
        assert!((g.values[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn bad_grids_are_config_errors() {
        for s in ["beta", "gamma=1", "beta=a,b", "beta=0:1", "head_depth=1.5"] {
            let e = parse_grid(s).unwrap_err();
            assert_eq!(e.exit_code(), crate::error::exit::CONFIG_INVALID, "{s}");
        }
    }

    #[test]
    fn head_depth_replaces_head_layers() {
        let cfg = ExperimentConfig::preset("synthetic-weak").unwrap();
        let c = apply(&cfg, SweepParam::HeadDepth, 3.0);
        assert_eq!(c.model.head_hidden, vec![cfg.model.head_hidden[0]; 3]);
        assert!(!c.model.head_hidden_for.contains_key("mul"));
        let c = apply(&cfg, SweepParam::Beta, 0.3);
        assert_eq!(c.fusion.beta, 0.3);
    }
}

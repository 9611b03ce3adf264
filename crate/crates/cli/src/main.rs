use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmfuse::data::{self, DataSource};
use mmfuse_cli::config::{preset_names, ExperimentConfig};
use mmfuse_cli::error::{exit, CliError, CliResult};
use mmfuse_cli::{compare, run, sweep};

#[derive(Parser)]
#[command(name = "mmfuse", version, about = "Train and compare multimodal fusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset: synthetic-weak, higgs-small or higgs-full.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> CliResult<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p),
            (None, Some(name)) => ExperimentConfig::preset(name),
            (None, None) => Err(CliError::Invalid(vec![format!(
                "pass --config FILE or --preset NAME ({})",
                preset_names().join(", ")
            )])),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and list every problem found.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Train one model and write checkpoint, metrics, log and config.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid over several seeds.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// `beta=0,0.3,1`, `beta=0:1:6`, `delta=...` or `head_depth=1,2,3`.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: MMFUSE_THREADS or all cores).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Aggregate metrics.json files (or run directories) by method.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic dataset as CSV plus a JSON sidecar.
    GenData {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let DataSource::Synthetic(spec) = &cfg.dataset.source else {
        return Err(CliError::Invalid(vec!["gen-data needs a synthetic dataset source".into()]));
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let ds = data::generate_synthetic(spec)?;
    let csv = out.join(format!("{}.csv", cfg.name));
    let meta = out.join(format!("{}.json", cfg.name));
    data::export_synthetic(&ds, spec, &csv, &meta)?;
    println!("wrote {} and {}", csv.display(), meta.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { source } => {
            source.load()?.validate()?;
            println!("ok");
        }
        Command::Run { source, seed, out } => {
            let cfg = source.load()?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = out.unwrap_or_else(|| cfg.resolved_output_dir());
            let m = run::cmd_run(&cfg, seed, &out)?;
            print!("{} seed {}: test error {:.4} ({} / {})", m.method, m.seed, m.error_rate, m.errors, m.samples);
            if let Some(a) = m.auc {
                print!(", auc {a:.4}");
            }
            println!("\nartifacts in {}", out.display());
        }
        Command::Sweep { source, grid, seeds, seed, out, parallel } => {
            let mut cfg = source.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let grid = sweep::parse_grid(&grid)?;
            let out = out.unwrap_or_else(|| cfg.resolved_output_dir().join("sweep"));
            let res = sweep::cmd_sweep(&cfg, &grid, seeds.unwrap_or(cfg.seeds), &out, sweep::thread_count(parallel))?;
            print!("{}", res.to_csv());
            for e in &res.entries {
                for f in &e.failures {
                    eprintln!("{}={}: {f}", res.parameter, e.value);
                }
            }
            if let Some(b) = res.best() {
                println!("best {}={} (mean error {:.4})", res.parameter, b.value, b.mean_err);
            }
        }
        Command::Compare { runs, csv } => {
            let rows = compare::cmd_compare(&runs)?;
            print!("{}", compare::render_table(&rows));
            if let Some(p) = csv {
                run::write_atomic(&p, compare::render_csv(&rows).as_bytes())?;
            }
        }
        Command::GenData { source, out } => gen_data(&source.load()?, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

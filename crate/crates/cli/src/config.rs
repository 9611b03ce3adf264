//! Experiment configuration: a single TOML file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmfuse::data::{DataSource, DatasetSpec};
use mmfuse::fusion::{FusionConfig, FusionKind};
use mmfuse::models::{Activation, ArchitectureSpec, BundleOptions, EncoderSpec};
use mmfuse::training::{OptimizerConfig, TrainingConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "MMFUSE_OUTPUT_ROOT";
pub const THREADS_ENV: &str = "MMFUSE_THREADS";

const PRESETS: &[(&str, &str)] = &[
    ("synthetic-weak", include_str!("../presets/synthetic-weak.toml")),
    ("higgs-small", include_str!("../presets/higgs-small.toml")),
    ("higgs-full", include_str!("../presets/higgs-full.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Common embedding size `d` of every encoder.
    pub embedding_dim: usize,
    #[serde(default)]
    pub encoder_hidden: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    /// Per-kind replacement for `head_hidden`, keyed by kind name. Used to
    /// match parameter budgets across fusion kinds.
    #[serde(default)]
    pub head_hidden_for: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(flatten)]
    pub options: BundleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Train one single-modality model per modality for per-modality
    /// errors and the over-learn decomposition.
    #[serde(default = "default_true")]
    pub baselines: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { baselines: true }
    }
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    1
}

fn default_seeds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Row label in comparison tables; defaults to the fusion kind.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Seeds per sweep cell, `seed, seed + 1, ...`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory the config was read from; relative data paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Invalid(vec![format!("{origin}: {e}")]))
    }

    /// Reads a config file, or a bundled preset when `path` names one.
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            if let Some(text) = path.to_str().and_then(preset_text) {
                let mut cfg = Self::parse(text, &format!("preset {}", path.display()))?;
                cfg.base_dir = std::env::current_dir().unwrap_or_default();
                return Ok(cfg);
            }
        }
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        let text = preset_text(name).ok_or_else(|| {
            CliError::Other(format!(
                "unknown preset {name:?}; available: {}",
                preset_names().join(", ")
            ))
        })?;
        let mut cfg = Self::parse(text, &format!("preset {name}"))?;
        cfg.base_dir = std::env::current_dir().unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Other(format!("serializing config: {e}")))
    }

    pub fn modality_count(&self) -> usize {
        self.dataset.modality_count()
    }

    pub fn method_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut s = self.fusion.kind.name().to_string();
        if self.fusion.boosted {
            s.push_str("-boosted");
        }
        s
    }

    pub fn head_hidden(&self, kind: FusionKind) -> Vec<usize> {
        self.model
            .head_hidden_for
            .get(kind.name())
            .cloned()
            .unwrap_or_else(|| self.model.head_hidden.clone())
    }

    /// Architecture for the configured fusion kind, given the modality
    /// input sizes of the prepared data.
    pub fn architecture(&self, modality_dims: &[usize], classes: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            encoders: modality_dims
                .iter()
                .map(|&d| EncoderSpec {
                    input_dim: d,
                    hidden: self.model.encoder_hidden.clone(),
                    output_dim: self.model.embedding_dim,
                    activation: self.model.activation,
                })
                .collect(),
            head_hidden: self.head_hidden(self.fusion.kind),
            classes,
            options: self.model.options.clone(),
        }
    }

    /// Single-modality baseline: one network on the raw modality with the
    /// depth of an encoder followed by a head.
    pub fn baseline_architecture(&self, input_dim: usize, classes: usize) -> ArchitectureSpec {
        let mut hidden = self.model.encoder_hidden.clone();
        hidden.push(self.model.embedding_dim);
        hidden.extend(&self.model.head_hidden);
        ArchitectureSpec {
            encoders: vec![EncoderSpec {
                input_dim,
                hidden: vec![],
                output_dim: self.model.embedding_dim,
                activation: self.model.activation,
            }],
            head_hidden: hidden,
            classes,
            options: BundleOptions::default(),
        }
    }

    /// Every violated cross-field constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.name.trim().is_empty() {
            v.push("name must not be empty".into());
        }
        if self.seeds == 0 {
            v.push("seeds must be at least 1".into());
        }
        v.extend(self.dataset.violations());
        let m = self.modality_count();
        let cap = self.model.options.max_modalities;
        if cap == 0 {
            v.push("model.max_modalities must be positive".into());
        }
        v.extend(self.fusion.violations(m, cap));
        v.extend(self.optimizer.violations());
        v.extend(self.training.violations());
        if self.model.embedding_dim == 0 {
            v.push("model.embedding_dim must be positive".into());
        }
        for (name, sizes) in std::iter::once(("model.encoder_hidden", &self.model.encoder_hidden))
            .chain(std::iter::once(("model.head_hidden", &self.model.head_hidden)))
        {
            if sizes.contains(&0) {
                v.push(format!("{name} contains a zero-width layer"));
            }
        }
        for (k, sizes) in &self.model.head_hidden_for {
            if !["early", "late", "add", "mul", "mulmix"].contains(&k.as_str()) {
                v.push(format!("model.head_hidden_for has unknown kind {k:?}"));
            }
            if sizes.contains(&0) {
                v.push(format!("model.head_hidden_for.{k} contains a zero-width layer"));
            }
        }
        if let DataSource::File(f) = &self.dataset.source {
            let p = if f.path.is_relative() { self.base_dir.join(&f.path) } else { f.path.clone() };
            if !p.exists() {
                v.push(format!("dataset.path {} does not exist", p.display()));
            }
        }
        v
    }

    pub fn validate(&self) -> CliResult<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(v))
        }
    }

    /// Hash of the canonical JSON form, ignoring where outputs go.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Output directory, honouring the output-root environment variable for
    /// relative paths.
    pub fn resolved_output_dir(&self) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name));
        if dir.is_absolute() {
            return dir;
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(dir),
            None => dir,
        }
    }
}

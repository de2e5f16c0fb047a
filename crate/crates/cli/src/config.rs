//! Experiment configuration files (TOML).
//!
//! One file describes a base [`WorldConfig`] plus optional sweep axes and a
//! list of trial seeds. Unknown keys are rejected everywhere.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use dboot_core::distributions::{
    draw_trainset, make_gaussian_linear, make_teacher_task, Augmentation, Generator, LabelEncoding, LinkActivation,
    Oracle,
};
use dboot_core::nn::{Activation, Head, ModelSpec};
use dboot_core::optimizers::{OptimizerKind, OptimizerSpec};
use dboot_core::worlds::{WorldConfig, DEFAULT_EVAL_SAMPLES, DEFAULT_STOP_THRESHOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DBOOT_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
}

/// The population both worlds sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// `β* = e₁`, covariance eigenvalues 10×1.0 then 0.1.
    GaussianLinear {
        dim: usize,
        activation: LinkActivation,
        #[serde(default = "default_encoding")]
        encoding: LabelEncoding,
    },
    /// Labels from the argmax of a random ReLU teacher network.
    Teacher {
        input_dim: usize,
        hidden_widths: Vec<usize>,
        classes: usize,
        #[serde(default)]
        teacher_seed: u64,
        #[serde(default)]
        generator: GeneratorConfig,
    },
    RandomLabel { classes: usize, base: Box<DataConfig> },
    /// Resampling with replacement from `pool_size` draws of `base`.
    PoolBacked { pool_size: usize, pool_seed: u64, base: Box<DataConfig> },
}

fn default_encoding() -> LabelEncoding {
    LabelEncoding::Real
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    #[default]
    Gaussian,
    Mixture { components: usize, spread: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub n: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_stop_threshold")]
    pub stop_threshold: f64,
    #[serde(default)]
    pub augmentation: Augmentation,
}

fn default_eval_samples() -> usize {
    DEFAULT_EVAL_SAMPLES
}

fn default_stop_threshold() -> f64 {
    DEFAULT_STOP_THRESHOLD
}

/// Lists that replace the corresponding base value. The sweep is their
/// cartesian product; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base_lr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augmentation: Vec<Augmentation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub optimizer: Vec<OptimizerKind>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.n.is_empty() && self.base_lr.is_empty() && self.augmentation.is_empty() && self.optimizer.is_empty()
    }
}

/// One cell of the sweep: a config with the sweep section cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// Human-readable axis values, e.g. `n1000_lr0.1`; `base` without axes.
    pub label: String,
    pub config: ExperimentConfig,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!("{:02}-{}", self.index, self.label)
    }
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim_end().to_string();
        if path.is_empty() || path == "." {
            CliError::Config(msg)
        } else {
            CliError::Config(format!("at `{path}`: {msg}"))
        }
    })
}

pub fn emit_config(config: &ExperimentConfig) -> CliResult<String> {
    toml::to_string(config).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}

/// Read, parse, and fully validate a config file.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = parse_config(&text)?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Schema checks plus every point's [`WorldConfig`] validation. Builds the
    /// oracle, so teacher tasks are constructed once here.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(CliError::Config(format!("name {:?} must be non-empty [A-Za-z0-9._-]", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(CliError::Config("seeds contain duplicates".into()));
        }
        if !self.training.stop_threshold.is_finite() {
            return Err(CliError::Config("training.stop_threshold must be finite".into()));
        }
        let oracle = Arc::new(self.data.build()?);
        for point in self.expand() {
            point
                .config
                .world_config(Arc::clone(&oracle), 0)
                .validate()
                .map_err(|e| CliError::Config(format!("sweep point {}: {e}", point.label)))?;
        }
        Ok(())
    }

    /// Sweep points in a fixed order: n, then base_lr, augmentation, optimizer.
    pub fn expand(&self) -> Vec<SweepPoint> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<(T, bool)> {
            if values.is_empty() {
                vec![(base, false)]
            } else {
                values.iter().cloned().map(|v| (v, true)).collect()
            }
        }
        let ns = axis(&self.sweep.n, self.training.n);
        let lrs = axis(&self.sweep.base_lr, self.optimizer.base_lr);
        let augs = axis(&self.sweep.augmentation, self.training.augmentation);
        let opts = axis(&self.sweep.optimizer, self.optimizer.kind);

        let mut points = Vec::new();
        for &(n, swept_n) in &ns {
            for &(lr, swept_lr) in &lrs {
                for &(aug, swept_aug) in &augs {
                    for &(opt, swept_opt) in &opts {
                        let mut parts = Vec::new();
                        if swept_n {
                            parts.push(format!("n{n}"));
                        }
                        if swept_lr {
                            parts.push(format!("lr{lr}"));
                        }
                        if swept_aug {
                            parts.push(augmentation_slug(&aug));
                        }
                        if swept_opt {
                            parts.push(optimizer_slug(&opt));
                        }
                        let label = if parts.is_empty() { "base".to_string() } else { parts.join("_") };
                        let mut config = self.clone();
                        config.sweep = SweepAxes::default();
                        config.training.n = n;
                        config.optimizer.base_lr = lr;
                        config.training.augmentation = aug;
                        config.optimizer.kind = opt;
                        points.push(SweepPoint { index: points.len(), label, config });
                    }
                }
            }
        }
        points
    }

    /// The core config for one seed. Ignores the sweep section.
    pub fn world_config(&self, oracle: Arc<Oracle>, master_seed: u64) -> WorldConfig {
        WorldConfig {
            oracle,
            n: self.training.n,
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            total_steps: self.training.total_steps,
            augmentation: self.training.augmentation,
            master_seed,
            eval_every: self.training.eval_every,
            eval_samples: self.training.eval_samples,
            stop_threshold: self.training.stop_threshold,
        }
    }

    /// SHA-256 of the emitted TOML, hex encoded.
    pub fn hash(&self) -> CliResult<String> {
        Ok(hex::encode(Sha256::digest(emit_config(self)?.as_bytes())))
    }

    /// Explicit override, then the config's own `output_dir`, then
    /// `$DBOOT_OUTPUT_ROOT/<name>`, then `runs/<name>`.
    pub fn resolve_output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(dir) = override_dir {
            return dir.to_path_buf();
        }
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        default_output_root().join(&self.name)
    }
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn augmentation_slug(aug: &Augmentation) -> String {
    match aug {
        Augmentation::None => "noaug".into(),
        Augmentation::GaussianNoise { sigma } => format!("noise{sigma}"),
        Augmentation::CoordDropout { p } => format!("dropout{p}"),
    }
}

fn optimizer_slug(kind: &OptimizerKind) -> String {
    match kind {
        OptimizerKind::Gd => "gd".into(),
        OptimizerKind::Sgd { momentum } => format!("sgd{momentum}"),
        OptimizerKind::Adam { .. } => "adam".into(),
    }
}

impl DataConfig {
    pub fn build(&self) -> CliResult<Oracle> {
        Ok(match self {
            DataConfig::GaussianLinear { dim, activation, encoding } => {
                make_gaussian_linear(*dim, *activation, *encoding)?
            }
            DataConfig::Teacher { input_dim, hidden_widths, classes, teacher_seed, generator } => {
                let generator = match generator {
                    GeneratorConfig::Gaussian => Generator::Gaussian,
                    GeneratorConfig::Mixture { components, spread, seed } => {
                        Generator::mixture(*input_dim, *components, *spread, *seed)?
                    }
                };
                let spec = ModelSpec::mlp(
                    *input_dim,
                    hidden_widths.clone(),
                    Activation::Relu,
                    Head::SoftmaxXent { classes: *classes },
                );
                spec.validate()?;
                make_teacher_task(generator, &spec, *teacher_seed)?
            }
            DataConfig::RandomLabel { classes, base } => Oracle::random_label(base.build()?, *classes)?,
            DataConfig::PoolBacked { pool_size, pool_seed, base } => {
                let pool = draw_trainset(&base.build()?, *pool_size, *pool_seed)?;
                Oracle::pool_backed(Arc::new(pool))?
            }
        })
    }
}

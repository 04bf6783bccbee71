//! Experiment configuration: one TOML document drives every command.
//!
//! All randomness in a run is derived from the single master `seed`, so a
//! config file plus its referenced inputs reproduce every artifact byte for
//! byte. Validation reports the offending field by its `section.field` path.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use osr_core::isda::FeatureSource;
use osr_core::nn::TrainConfig;
use osr_core::perturb::PerturbConfig;
use osr_core::pipeline::{PipelineConfig, Stage2Features};
use osr_core::seed::derive_seed;
use osr_core::tree::DtConfig;

/// Stream roles carved out of the master seed.
mod role {
    pub const SPLIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const PERTURB: u64 = 3;
    pub const PIPELINE: u64 = 4;
    pub const DATA: u64 = 5;
    pub const INIT: u64 = 6;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stream (split, training, perturbation, detectors)
    /// derives from it.
    pub seed: u64,
    /// Directory all artifacts are written to.
    pub outdir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    pub train: TrainSection,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "synth" or "csv"; exactly one source.
    pub source: String,
    // csv source
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    /// Fraction of classes designated unknown (csv source). Default 0.5.
    pub unknown_fraction: Option<f64>,
    // synth source
    pub num_known: Option<usize>,
    pub num_unknown: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden_dims(),
        }
    }
}

fn default_hidden_dims() -> Vec<usize> {
    vec![128, 64]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    /// Ensemble size B.
    pub num_models: usize,
    /// Noise scale lambda.
    pub noise_scale: f64,
    /// Rejection threshold mu*.
    pub mu_star: f64,
    #[serde(default = "default_h1")]
    pub h1: usize,
    pub h2: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_feature_source")]
    pub feature_source: FeatureSource,
    #[serde(default = "default_stage2_features")]
    pub stage2_features: Stage2Features,
    #[serde(default)]
    pub tree: TreeSection,
}

fn default_h1() -> usize {
    2
}

fn default_gamma() -> f64 {
    1e-4
}

fn default_feature_source() -> FeatureSource {
    FeatureSource::Embedding
}

fn default_stage2_features() -> Stage2Features {
    Stage2Features::ProbabilitySpace
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
}

impl Default for TreeSection {
    fn default() -> Self {
        Self {
            max_depth: default_max_depth(),
            min_samples_leaf: default_min_samples_leaf(),
        }
    }
}

fn default_max_depth() -> usize {
    8
}

fn default_min_samples_leaf() -> usize {
    5
}

/// Candidate lists for the grid search; the objective is validation accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub num_models: Vec<usize>,
    pub noise_scale: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub h2: Vec<usize>,
}

impl ExperimentConfig {
    /// Loads and validates a config file, applying CLI overrides.
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        outdir_override: Option<PathBuf>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        if let Some(outdir) = outdir_override {
            config.outdir = outdir;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "synth" => {
                for (field, present) in [
                    ("data.num_known", self.data.num_known.is_some()),
                    ("data.num_unknown", self.data.num_unknown.is_some()),
                    ("data.per_class", self.data.per_class.is_some()),
                    ("data.dim", self.data.dim.is_some()),
                    ("data.overlap", self.data.overlap.is_some()),
                ] {
                    if !present {
                        bail!("{field}: required when data.source = \"synth\"");
                    }
                }
                if self.data.path.is_some() || self.data.label_column.is_some() {
                    bail!("data.path/data.label_column: not allowed for the synth source");
                }
                let overlap = self.data.overlap.unwrap();
                if !(0.0..=1.0).contains(&overlap) {
                    bail!("data.overlap: must lie in [0, 1], got {overlap}");
                }
                if self.data.num_known == Some(0) {
                    bail!("data.num_known: must be positive");
                }
                if self.data.per_class == Some(0) {
                    bail!("data.per_class: must be positive");
                }
                if self.data.dim == Some(0) {
                    bail!("data.dim: must be positive");
                }
            }
            "csv" => {
                if self.data.path.is_none() {
                    bail!("data.path: required when data.source = \"csv\"");
                }
                if self.data.label_column.is_none() {
                    bail!("data.label_column: required when data.source = \"csv\"");
                }
                if self.data.num_known.is_some()
                    || self.data.num_unknown.is_some()
                    || self.data.per_class.is_some()
                    || self.data.dim.is_some()
                    || self.data.overlap.is_some()
                {
                    bail!("data.num_known/num_unknown/per_class/dim/overlap: not allowed for the csv source");
                }
                if let Some(f) = self.data.unknown_fraction {
                    if !(0.0..=1.0).contains(&f) {
                        bail!("data.unknown_fraction: must lie in [0, 1], got {f}");
                    }
                }
            }
            other => bail!("data.source: expected \"synth\" or \"csv\", got \"{other}\""),
        }
        if self.network.hidden_dims.is_empty() || self.network.hidden_dims.contains(&0) {
            bail!("network.hidden_dims: must be a non-empty list of positive sizes");
        }
        if self.train.epochs == 0 {
            bail!("train.epochs: must be positive");
        }
        if self.train.batch_size == 0 {
            bail!("train.batch_size: must be positive");
        }
        if !self.train.learning_rate.is_finite() || self.train.learning_rate <= 0.0 {
            bail!("train.learning_rate: must be positive");
        }
        if self.pipeline.num_models == 0 {
            bail!("pipeline.num_models: must be >= 1");
        }
        if !self.pipeline.noise_scale.is_finite() || self.pipeline.noise_scale < 0.0 {
            bail!("pipeline.noise_scale: must be >= 0");
        }
        if !self.pipeline.mu_star.is_finite() {
            bail!("pipeline.mu_star: must be finite");
        }
        if self.pipeline.h1 == 0 || self.pipeline.h2 == 0 {
            bail!("pipeline.h1/pipeline.h2: must be >= 1");
        }
        if !self.pipeline.gamma.is_finite() || self.pipeline.gamma <= 0.0 {
            bail!("pipeline.gamma: must be > 0");
        }
        if self.pipeline.tree.max_depth == 0 {
            bail!("pipeline.tree.max_depth: must be >= 1");
        }
        if self.pipeline.tree.min_samples_leaf == 0 {
            bail!("pipeline.tree.min_samples_leaf: must be >= 1");
        }
        if let Some(grid) = &self.grid {
            for (field, empty) in [
                ("grid.num_models", grid.num_models.is_empty()),
                ("grid.noise_scale", grid.noise_scale.is_empty()),
                ("grid.mu_star", grid.mu_star.is_empty()),
                ("grid.h2", grid.h2.is_empty()),
            ] {
                if empty {
                    bail!("{field}: candidate list must be non-empty");
                }
            }
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, role::SPLIT, 0)
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, role::DATA, 0)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, role::INIT, 0)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig::new(
            self.train.epochs,
            self.train.batch_size,
            self.train.learning_rate,
            derive_seed(self.seed, role::TRAIN, 0),
        )?)
    }

    /// The pipeline config as written, with seeds derived from the master.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        self.pipeline_config_with(
            self.pipeline.num_models,
            self.pipeline.noise_scale,
            self.pipeline.mu_star,
            self.pipeline.h2,
        )
    }

    /// The pipeline config with (B, lambda, mu*, h2) overridden; grid cells
    /// share every other setting and all derived seeds.
    pub fn pipeline_config_with(
        &self,
        num_models: usize,
        noise_scale: f64,
        mu_star: f64,
        h2: usize,
    ) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            perturb: PerturbConfig::new(
                num_models,
                noise_scale,
                derive_seed(self.seed, role::PERTURB, 0),
            )?,
            mu_star,
            h1: self.pipeline.h1,
            h2,
            gamma: self.pipeline.gamma,
            dt: DtConfig::new(
                self.pipeline.tree.max_depth,
                self.pipeline.tree.min_samples_leaf,
            )?,
            feature_source: self.pipeline.feature_source,
            stage2_features: self.pipeline.stage2_features,
            seed: derive_seed(self.seed, role::PIPELINE, 0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Hex SHA-256 of the config file bytes, recorded in run metadata.
pub fn config_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

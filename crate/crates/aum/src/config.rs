//! The declarative experiment description read from TOML.

use std::path::{Path, PathBuf};

use aum_core::data::{GeneratorConfig, Mechanism, MissingnessSpec};
use aum_core::evaluation::{make_variant, Variant};
use aum_core::message_passing::{DEFAULT_LAYERS, DEFAULT_THETA};
use aum_core::model::ModelConfig;
use aum_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Where artifacts go when `--out` is not given. Not part of the hash.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub cohort: GeneratorConfig,
    pub missingness: MissingnessSpec,
    /// Relative noise level added to observed cells.
    pub epsilon: f64,
}

/// Architecture settings. Input dimensions come from the cohort and the
/// mechanism toggles from `variant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub theta: f64,
    pub sigma_miss: f64,
    pub exclude_missing: bool,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    MissingRatio,
    Noise,
}

impl Axis {
    pub fn id(self) -> &'static str {
        match self {
            Axis::MissingRatio => "missing_ratio",
            Axis::Noise => "noise",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "missing_ratio" => Ok(Axis::MissingRatio),
            "noise" => Ok(Axis::Noise),
            _ => Err(format!("unknown sweep axis {s:?}, expected missing_ratio or noise")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub missing_ratios: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    pub noise_levels: Vec<f64>,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: None,
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cohort: GeneratorConfig::default(),
            missingness: MissingnessSpec::mcar(0.3),
            epsilon: 0.0,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            latent_dim: m.latent_dim,
            hidden_dim: m.hidden_dim,
            layers: DEFAULT_LAYERS,
            theta: DEFAULT_THETA,
            sigma_miss: m.sigma_miss,
            exclude_missing: m.exclude_missing,
            variant: Variant::Full,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            missing_ratios: vec![0.1, 0.3, 0.5, 0.7],
            mechanisms: vec![Mechanism::Mcar, Mechanism::Mnar],
            noise_levels: vec![0.0, 0.1, 0.3],
            variants: vec![Variant::Full, Variant::UniformAttention],
        }
    }
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        self.data.cohort.validate()?;
        self.data.missingness.validate()?;
        if !(self.data.epsilon >= 0.0 && self.data.epsilon.is_finite()) {
            return Err(CliError::Config(format!("epsilon must be a finite non-negative number, got {}", self.data.epsilon)));
        }
        self.resolve(self.model.variant)?;
        Ok(())
    }

    /// Replaces the seed list, as `--seed` does.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        self
    }

    /// Model and training configuration for one variant and seed.
    pub fn resolve(&self, variant: Variant) -> Result<(ModelConfig, TrainConfig)> {
        let m = &self.model;
        let base = ModelConfig {
            input_dims: self.data.cohort.input_dims.clone(),
            latent_dim: m.latent_dim,
            hidden_dim: m.hidden_dim,
            layers: m.layers,
            theta: m.theta,
            sigma_miss: m.sigma_miss,
            exclude_missing: m.exclude_missing,
            ..ModelConfig::default()
        };
        let (model, train) = make_variant(&base, &self.train, variant)?;
        model.validate()?;
        train.validate()?;
        Ok((model, train))
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn missingness(&self, mechanism: Mechanism, ratio: f64) -> MissingnessSpec {
        MissingnessSpec {
            mechanism,
            ratio,
            ..self.data.missingness
        }
    }
}

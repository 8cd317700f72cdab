//! Experiment configuration: a versioned JSON schema with unknown keys
//! rejected, plus dotted-path overrides.

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::model::Dataset;
use crate::trainer::NoiseModel;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Points given directly in the config.
    Inline { points: Vec<InlinePoint> },
    /// A named generator; `params` are generator-specific and the
    /// generator is seeded from the run seed.
    Builtin {
        name: String,
        #[serde(default)]
        params: serde_json::Value,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlinePoint {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StopRule {
    /// Run exactly this many SGD steps.
    FixedSteps { steps: u64 },
    /// Stop when the manifold-projected r_sum changes by less than `tol`
    /// per `window` steps (the raw r_sum fluctuates on the noise scale and
    /// would never settle below a 1e-5 threshold). `max_steps` caps the run.
    RegPlateau { window: u64, tol: f64, max_steps: u64 },
}

impl StopRule {
    pub fn max_steps(&self) -> u64 {
        match self {
            StopRule::FixedSteps { steps } => *steps,
            StopRule::RegPlateau { max_steps, .. } => *max_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub eta: f64,
    pub noise: NoiseModel,
    /// Base seed; multi-seed analyses use seed, seed+1, ...
    pub seed: u64,
    pub snapshot_stride: u64,
    pub stop: StopRule,
    /// Write every k-th recorded snapshot to trajectory.csv (1 = all).
    #[serde(default = "one_u64")]
    pub csv_stride: u64,
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSettings {
    /// Max residual the noiseless pretraining must reach.
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisToggles {
    pub spectrum: bool,
    pub ou: bool,
    pub drift: bool,
    pub geometry: bool,
    pub single_point: bool,
    /// Noiseless control run for the geometry analysis.
    pub control: bool,
    pub equivalence: bool,
    pub lyapunov: bool,
    /// Two-copy data vs label-noise comparison.
    pub hard_data: bool,
    /// Active-unit count at the polished endpoint.
    pub sparsity: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: String,
    pub arch: Architecture,
    pub dataset: DatasetSource,
    pub train: TrainSettings,
    #[serde(default)]
    pub pretrain: Option<PretrainSettings>,
    #[serde(default)]
    pub analyses: AnalysisToggles,
    pub out_dir: PathBuf,
    #[serde(default = "one_u32")]
    pub n_seeds: u32,
    /// Uniform [−s, s] initialization scale.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// δ for the two-copy comparison when `analyses.hard_data` is on.
    #[serde(default)]
    pub two_copy_delta: Option<f64>,
}

fn one_u32() -> u32 {
    1
}

fn default_init_scale() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.arch.input_dim == 0 || self.arch.hidden_width == 0 {
            return Err(Error::InvalidInput("arch dimensions must be positive".into()));
        }
        if !(self.train.eta > 0.0 && self.train.eta < 1.0) {
            return Err(Error::InvalidInput("train.eta must be in (0, 1)".into()));
        }
        if self.train.snapshot_stride == 0 || self.train.csv_stride == 0 {
            return Err(Error::InvalidInput("strides must be positive".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidInput("n_seeds must be positive".into()));
        }
        self.train.noise.validate()?;
        if let StopRule::RegPlateau { window, tol, max_steps } = self.train.stop {
            if window == 0 || max_steps == 0 || !(tol > 0.0) {
                return Err(Error::InvalidInput("bad reg_plateau stop rule".into()));
            }
        }
        Ok(())
    }

    /// Materializes the dataset, seeding builtin generators from the run seed.
    pub fn build_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Inline { points } => Dataset::new(
                points.iter().map(|p| (p.x.clone(), p.y)).collect(),
            ),
            DatasetSource::Builtin { name, params } => {
                super::experiments::builtin_dataset(name, params, self.train.seed)
            }
        }
    }
}

/// A schema violation with enough context to point at the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        ConfigError(format!(
            "at field `{}`: {} (line {}, column {})",
            e.path(),
            e.inner(),
            e.inner().line(),
            e.inner().column()
        ))
    })?;
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Applies `key=value` overrides along dotted paths, re-validating the
/// result. Values parse as JSON when possible and fall back to strings.
pub fn apply_overrides(
    cfg: &ExperimentConfig,
    overrides: &[(String, String)],
) -> std::result::Result<ExperimentConfig, ConfigError> {
    let mut value = serde_json::to_value(cfg)
        .map_err(|e| ConfigError(format!("config serialization failed: {e}")))?;
    for (path, raw) in overrides {
        let new: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let parts: Vec<&str> = path.split('.').collect();
        let (last, parents) = parts.split_last().unwrap();
        let mut cursor = &mut value;
        for part in parents {
            cursor = cursor
                .as_object_mut()
                .ok_or_else(|| {
                    ConfigError(format!("override path `{path}`: `{part}` is not an object field"))
                })?
                .get_mut(*part)
                .ok_or_else(|| ConfigError(format!("override path `{path}`: no field `{part}`")))?;
        }
        cursor
            .as_object_mut()
            .ok_or_else(|| {
                ConfigError(format!("override path `{path}`: `{last}` is not an object field"))
            })?
            .insert(last.to_string(), new.clone());
    }
    let text = serde_json::to_string(&value)
        .map_err(|e| ConfigError(format!("override serialization failed: {e}")))?;
    parse_config(&text)
}

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use hemoflow::hemo::{CassonParams, MetricOptions, RiskMetrics, TawssRule};
use hemoflow::meshio::{FlowSpec, GeometrySpec};
use hemoflow::model::ModelConfig;
use hemoflow::train::{DeskSpec, PhaseSpec, SweepSettings, ALIGNED_NOISE};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

/// Parses a versioned JSON config, rejecting unknown keys and other versions.
pub fn parse<T: DeserializeOwned + Versioned>(bytes: &[u8]) -> CliResult<T> {
    let config: T = serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
    if config.version() != CONFIG_VERSION {
        return Err(CliError::Config(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            config.version()
        )));
    }
    Ok(config)
}

pub trait Versioned {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn version(&self) -> u32 {
                self.version
            }
        })*
    };
}

versioned!(SynthConfig, TrainConfig, RolloutConfig, MetricsConfig, HemoConfig, RiskConfig, ScalingConfig);

/// Relative paths in a config resolve against the config file's directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub version: u32,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub flow: FlowSpec,
}

fn toy() -> ModelConfig {
    ModelConfig::toy()
}

fn aligned() -> [f64; 3] {
    ALIGNED_NOISE
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// The five-phase curriculum with every step count divided by `scale`.
    Scaled {
        scale: f64,
        #[serde(default = "one")]
        lr_scale: f64,
        #[serde(default = "aligned")]
        noise_sigma: [f64; 3],
    },
    Full {
        #[serde(default = "aligned")]
        noise_sigma: [f64; 3],
    },
    Phases {
        phases: Vec<PhaseSpec>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    #[serde(default = "toy")]
    pub model: ModelConfig,
    #[serde(default)]
    pub corpus: DeskSpec,
    pub schedule: ScheduleConfig,
    /// Checkpoint to continue from.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    #[serde(default)]
    pub max_steps: Option<u64>,
    /// Roll out on the held-out case after training.
    #[serde(default)]
    pub evaluate: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub version: u32,
    pub checkpoint: PathBuf,
    pub mesh: PathBuf,
    pub waveform: PathBuf,
    /// Ground truth: supplies the initial state and enables error reporting.
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
    #[serde(default)]
    pub bulge: Option<PathBuf>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub version: u32,
    pub mesh: PathBuf,
    pub prediction: PathBuf,
    pub truth: PathBuf,
    #[serde(default)]
    pub bulge: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HemoConfig {
    pub version: u32,
    pub mesh: PathBuf,
    pub trajectory: PathBuf,
    #[serde(default)]
    pub bulge: Option<PathBuf>,
    /// Second trajectory on the same mesh; its metrics are compared.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub casson: CassonParams,
    #[serde(default)]
    pub options: MetricOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub version: u32,
    pub metrics: Vec<RiskMetrics>,
    #[serde(default)]
    pub tawss_rule: TawssRule,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ScalingMode {
    /// Fit the power law to `(compute, params)` points.
    Fit { points: Vec<(f64, f64)> },
    /// Train a model grid at each budget on the desk corpus, then fit.
    Sweep {
        budgets: Vec<f64>,
        grid: Vec<ModelConfig>,
        #[serde(default)]
        corpus: DeskSpec,
        settings: SweepSettings,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub version: u32,
    pub mode: ScalingMode,
}

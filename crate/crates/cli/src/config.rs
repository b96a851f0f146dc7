//! Pipeline configuration: file defaults, overridden by command-line flags.

use std::path::{Path, PathBuf};

use prefroute::analysis::AspectWeights;
use prefroute::oracle::HarnessConfig;
use prefroute::ppm::PpmSettings;
use prefroute::tagging::descriptive::TaggerEndpoint;
use prefroute::tagging::TaggingOptions;
use prefroute::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub routing: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

/// Dataset preparation applied before tagging.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSettings {
    /// Drop instances either source labeled a tie.
    pub filter_ties: bool,
    /// Keep a seeded uniform sample of this many instances (after tie filtering).
    pub subsample: Option<usize>,
}

impl PrepareSettings {
    pub fn is_identity(&self) -> bool {
        !self.filter_ties && self.subsample.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    pub count: usize,
    pub endpoints: bool,
    pub fixed_budget: Option<usize>,
    pub max_retries: usize,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        SamplingSettings {
            count: 200,
            endpoints: true,
            fixed_budget: None,
            max_retries: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub model: PpmSettings,
    pub holdout: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            model: PpmSettings::default(),
            holdout: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RouteStrategy {
    Simulated,
    Topk,
    Random,
    AllHuman,
    AllLm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSettings {
    pub strategy: RouteStrategy,
    pub budget: Option<usize>,
    pub fraction: Option<f64>,
    pub n_sims: usize,
    pub slack: f64,
    pub max_attempts: usize,
    pub endpoints: bool,
    /// Score with a model trained on another vocabulary, matching tags by name.
    pub allow_remap: bool,
}

impl Default for RoutingSettings {
    fn default() -> Self {
        RoutingSettings {
            strategy: RouteStrategy::Simulated,
            budget: None,
            fraction: None,
            n_sims: 500,
            slack: 0.05,
            max_attempts: 64,
            endpoints: false,
            allow_remap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSettings {
    pub n_route: usize,
    pub repeats: usize,
    pub bins: usize,
}

impl Default for GainSettings {
    fn default() -> Self {
        GainSettings {
            n_route: 100,
            repeats: 1,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarizeSettings {
    pub weights: AspectWeights,
    pub field_a: String,
    pub field_b: String,
}

impl Default for BinarizeSettings {
    fn default() -> Self {
        BinarizeSettings {
            weights: AspectWeights::default(),
            field_a: "ratings_a".into(),
            field_b: "ratings_b".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub prepare: PrepareSettings,
    pub tagging: TaggingOptions,
    pub tagger: Option<TaggerEndpoint>,
    pub sampling: SamplingSettings,
    pub fit: FitSettings,
    pub routing: RoutingSettings,
    pub gain: GainSettings,
    pub binarize: BinarizeSettings,
    pub harness: HarnessConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Record of one command run, persisted beside its outputs.
#[derive(Debug, Serialize)]
pub struct EffectiveConfig<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a PipelineConfig,
}

/// `<output>.config.json`.
pub fn config_path_for(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".config.json");
    output.with_file_name(name)
}

pub fn persist(output: &Path, command: &str, config: &PipelineConfig) -> Result<()> {
    let record = EffectiveConfig {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    prefroute::io::write_atomic(
        &config_path_for(output),
        &prefroute::io::json_document(&record)?,
    )
}

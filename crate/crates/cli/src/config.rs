//! JSON configuration files for each subcommand.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::{Path, PathBuf};

use qresnet::experiments::{ExperimentSpec, Layout, EXPRESSIBILITY_DEFAULTS};
use qresnet::qcnn::QcnnSpec;
use qresnet::residual::ResidualKind;

use crate::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("malformed config {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub eigenvalues: Vec<f64>,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub residual: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub name: String,
    pub experiments: Vec<ExperimentSpec>,
}

fn all_kinds() -> Vec<ResidualKind> {
    ResidualKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    pub name: String,
    #[serde(default = "all_kinds")]
    pub encodings: Vec<ResidualKind>,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cloud_frequencies")]
    pub frequencies: Vec<f64>,
}

fn default_samples() -> usize {
    1000
}

fn default_cloud_frequencies() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressibilityConfig {
    pub name: String,
    #[serde(default = "all_kinds")]
    pub encodings: Vec<ResidualKind>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_x")]
    pub x: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_pairs() -> usize {
    EXPRESSIBILITY_DEFAULTS.0
}

fn default_x() -> f64 {
    EXPRESSIBILITY_DEFAULTS.2
}

fn default_bins() -> usize {
    EXPRESSIBILITY_DEFAULTS.3
}

impl Default for ExpressibilityConfig {
    fn default() -> Self {
        ExpressibilityConfig {
            name: "expressibility".into(),
            encodings: all_kinds(),
            pairs: default_pairs(),
            seed: EXPRESSIBILITY_DEFAULTS.1,
            x: default_x(),
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcnnVariant {
    pub name: String,
    pub qcnn: QcnnSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistConfig {
    pub name: String,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_components")]
    pub pca_components: usize,
    pub variants: Vec<QcnnVariant>,
}

fn default_components() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_draws() -> usize {
    3
}

fn default_tolerance() -> f64 {
    1e-6
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            draws: default_draws(),
            tolerance: default_tolerance(),
        }
    }
}

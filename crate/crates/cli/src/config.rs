//! Run configuration: one JSON document per run, strict about unknown keys,
//! echoed back (with any command-line overrides applied) next to the
//! outputs so a run can be reproduced from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use consensus_core::estimators::EstimatorKind;
use consensus_core::lvbc::HyperParams;

use crate::error::{CliError, Result, config_err};

fn default_ci_level() -> f64 {
    0.95
}

fn default_lambda0() -> f64 {
    consensus_core::DEFAULT_LAMBDA0
}

fn default_num_samples() -> usize {
    1000
}

fn default_burn_in() -> usize {
    100
}

fn default_n_bootstrap() -> usize {
    1000
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_lambda_grid() -> Vec<f64> {
    vec![1e2, 1e3, 1e4, 1e5]
}

fn default_ridge_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

fn default_models() -> Vec<BaselineModel> {
    vec![
        BaselineModel::Ne,
        BaselineModel::We,
        BaselineModel::Re,
        BaselineModel::Bre,
        BaselineModel::Lvbc,
    ]
}

/// The `simulate` run document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub verbosity: u8,
    pub sim: SimBlock,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub sigma_star2: f64,
    pub num_quantities: usize,
    pub instrument_counts: Vec<usize>,
    pub num_realizations: usize,
}

/// The `fit` run document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub verbosity: u8,
    pub fit: FitBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub forecasts: PathBuf,
    pub actuals: PathBuf,
    /// Text file listing validation quantity ids, one per line.
    pub valid_quantities: PathBuf,
    pub num_groups: usize,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    pub hyper: HyperBlock,
}

/// Hyper-parameters without the prior strength (supplied by the lambda grid)
/// and without the seed (global to the run).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBlock {
    #[serde(default = "HyperBlock::default_prior_alpha")]
    pub prior_alpha: f64,
    #[serde(default)]
    pub prior_beta: f64,
    #[serde(default = "HyperBlock::default_prior_sigma")]
    pub prior_sigma: f64,
    #[serde(default = "HyperBlock::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "HyperBlock::default_minibatch_size")]
    pub minibatch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default = "HyperBlock::default_num_restarts")]
    pub num_restarts: usize,
}

impl HyperBlock {
    fn default_prior_alpha() -> f64 {
        1.0
    }

    fn default_prior_sigma() -> f64 {
        2.0
    }

    fn default_learning_rate() -> f64 {
        1e-4
    }

    fn default_minibatch_size() -> usize {
        5000
    }

    fn default_num_restarts() -> usize {
        10
    }

    pub fn to_hyper(&self, prior_strength: f64, seed: u64) -> HyperParams {
        HyperParams {
            prior_alpha: self.prior_alpha,
            prior_beta: self.prior_beta,
            prior_sigma: self.prior_sigma,
            prior_strength,
            learning_rate: self.learning_rate,
            minibatch_size: self.minibatch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            num_restarts: self.num_restarts,
            seed,
        }
    }
}

/// The `infer` run document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub verbosity: u8,
    pub infer: InferBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferBlock {
    /// Parameter snapshot produced by `fit`.
    pub params: PathBuf,
    pub forecasts: PathBuf,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

/// The `eval` run document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub verbosity: u8,
    pub eval: EvalBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    pub actuals: PathBuf,
    /// Pre-computed prediction files to score, one report row each.
    #[serde(default)]
    pub predictions: Vec<PredictionSource>,
    /// Optional end-to-end pipeline: fit the baselines and the latent-group
    /// model on training data and score them on the test forecasts.
    #[serde(default)]
    pub pipeline: Option<PipelineBlock>,
    /// Optional quantity -> group file enabling macro averaging.
    #[serde(default)]
    pub groups: Option<PathBuf>,
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSource {
    pub model: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineModel {
    #[serde(rename = "NE")]
    Ne,
    #[serde(rename = "WE")]
    We,
    #[serde(rename = "RE")]
    Re,
    #[serde(rename = "BRE")]
    Bre,
    #[serde(rename = "LVBC")]
    Lvbc,
}

impl BaselineModel {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineModel::Ne => "NE",
            BaselineModel::We => "WE",
            BaselineModel::Re => "RE",
            BaselineModel::Bre => "BRE",
            BaselineModel::Lvbc => "LVBC",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineBlock {
    pub train_forecasts: PathBuf,
    pub train_actuals: PathBuf,
    pub test_forecasts: PathBuf,
    /// Validation split of the training quantities, one id per line.
    pub valid_quantities: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<BaselineModel>,
    pub num_groups: usize,
    /// Prior strength for the latent-group fits.
    #[serde(default = "PipelineBlock::default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_ridge_grid")]
    pub ridge_grid: Vec<f64>,
    pub hyper: HyperBlock,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl PipelineBlock {
    fn default_lambda() -> f64 {
        1e2
    }
}

/// Parse a config document, rejecting unknown keys.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| config_err(format!("config `{}`: {e}", path.display())))
}

/// Fail fast when a referenced input path does not exist.
pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{what} path `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}

/// Write the resolved config echo before any other artifact.
pub fn write_echo<T: Serialize>(config: &T, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)
        .map_err(|e| config_err(format!("cannot create `{}`: {e}", out_dir.display())))?;
    let path = out_dir.join("config_echo.json");
    let mut text = serde_json::to_string_pretty(config)
        .map_err(|e| config_err(format!("cannot serialize config echo: {e}")))?;
    text.push('\n');
    fs::write(&path, text)
        .map_err(|e| config_err(format!("cannot write `{}`: {e}", path.display())))?;
    Ok(path)
}

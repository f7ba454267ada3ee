//! Run configuration (TOML) and dataset loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_idx, parse_csv, synthetic, Dataset, IdxLabelMode, Synthetic};
use crate::error::{Error, Result};
use crate::gradflow::{HatConfig, MonitorTolerances};
use crate::models::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default = "default_loss")]
    pub loss: String,
    pub model: Option<ModelSpec>,
    pub data: Option<DataSource>,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Emit a trajectory record every `eval_every` steps (the last step is always emitted).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Standard deviation of the Gaussian initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub constants: ConstantSettings,
    #[serde(default)]
    pub kkt: KktSettings,
    #[serde(default)]
    pub rates: RatesSettings,
    #[serde(default)]
    pub monitors: MonitorSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub svm: Option<SvmSettings>,
    pub hat: Option<HatConfig>,
}

fn default_loss() -> String {
    "exp".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_eval_every() -> usize {
    1
}
fn default_init_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `x_1,…,x_d,label` rows, from a file or inline.
    Csv {
        path: Option<PathBuf>,
        inline: Option<String>,
    },
    /// Generated data; `seed` defaults to the run seed.
    Synthetic { generator: Synthetic, seed: Option<u64> },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        subsample: usize,
        #[serde(default)]
        label_mode: IdxLabelMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Flow {
        #[serde(default = "default_step_tol")]
        step_tol: f64,
        dt_max: Option<f64>,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
        /// Stop once `log(1/𝓛)` reaches this value.
        target_log_inv_loss: Option<f64>,
    },
    GdConst {
        eta: f64,
        epochs: usize,
        #[serde(default)]
        s5_cap: bool,
        target_log_inv_loss: Option<f64>,
        t0_log_inv_loss: Option<f64>,
    },
    GdLossBased {
        #[serde(default = "default_alpha0")]
        alpha0: f64,
        #[serde(default = "default_r_u")]
        r_u: f64,
        #[serde(default = "default_r_d")]
        r_d: f64,
        #[serde(default = "default_max_retries")]
        max_retries: usize,
        epochs: usize,
        #[serde(default = "yes")]
        s5_cap: bool,
        /// Mini-batch size; outside the theory, for scheduler demos only.
        batch_size: Option<usize>,
        target_log_inv_loss: Option<f64>,
        t0_log_inv_loss: Option<f64>,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Flow {
            step_tol: default_step_tol(),
            dt_max: None,
            max_steps: default_max_steps(),
            target_log_inv_loss: None,
        }
    }
}

fn default_step_tol() -> f64 {
    1e-4
}
fn default_max_steps() -> usize {
    100_000
}
fn default_alpha0() -> f64 {
    0.1
}
fn default_r_u() -> f64 {
    2f64.powf(0.2)
}
fn default_r_d() -> f64 {
    2f64.powf(0.1)
}
fn default_max_retries() -> usize {
    60
}
fn yes() -> bool {
    true
}

/// Sampling of the smoothness constants `B₀, B₁, B₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantSettings {
    pub enabled: bool,
    pub samples: usize,
    pub hessian_samples: usize,
}

impl Default for ConstantSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            samples: 10_000,
            hessian_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KktSettings {
    /// Attach a certificate to every `every`-th record after separation;
    /// `0` attaches one to the final record only.
    pub every: usize,
    pub disabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSettings {
    /// Treat the bounded-ratio verdict as a monitor.
    pub check: bool,
    pub window_decades: f64,
    pub bound_factor: f64,
    pub min_decades: f64,
}

impl Default for RatesSettings {
    fn default() -> Self {
        Self {
            check: false,
            window_decades: 2.0,
            bound_factor: 10.0,
            min_decades: 3.0,
        }
    }
}

/// Which invariant monitors count towards the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub gamma_monotone: bool,
    pub loss_decrease: bool,
    pub weight_growth: bool,
    pub margin_rate: bool,
    pub sandwich: bool,
    pub beta_integral: bool,
    pub beta_rises: bool,
    pub kkt_delta: bool,
    pub gamma_hat_monotone: bool,
    pub hat_sandwich: bool,
    pub s5: bool,
    pub descent: bool,
    pub finite: bool,
    pub retries: bool,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self {
            gamma_monotone: true,
            loss_decrease: true,
            weight_growth: true,
            margin_rate: true,
            sandwich: true,
            beta_integral: true,
            beta_rises: false,
            kkt_delta: true,
            gamma_hat_monotone: true,
            hat_sandwich: true,
            s5: true,
            descent: true,
            finite: true,
            retries: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    #[serde(flatten)]
    pub flow: MonitorTolerances,
    /// Fraction of flow steps whose weight-growth residual must pass.
    pub weight_growth_fraction: f64,
    /// Absolute slack for the margin sandwiches.
    pub sandwich: f64,
    /// Allowed per-epoch drop of γ̂.
    pub gamma_hat_drop: f64,
    /// Allowed relative violation of the descent inequality.
    pub descent: f64,
    pub hat_psi: f64,
    pub hat_r_end: f64,
    pub hat_phi_gain: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            flow: MonitorTolerances::default(),
            weight_growth_fraction: 0.95,
            sandwich: 1e-12,
            gamma_hat_drop: 1e-10,
            descent: 1e-9,
            hat_psi: 1e-3,
            hat_r_end: 0.99,
            hat_phi_gain: 4.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSettings {
    /// Fail the run if the final angle to the SVM direction exceeds this.
    pub angle_tol: Option<f64>,
}

/// A parsed config together with the text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    /// SHA-256 of `text`, hex encoded.
    pub hash: String,
    /// Relative data paths are resolved against this directory.
    pub base_dir: PathBuf,
}

const PRESETS: &[(&str, &str)] = &[
    (
        "linear_logistic_2d",
        include_str!("../../../../configs/linear_logistic_2d.toml"),
    ),
    ("mexican_hat", include_str!("../../../../configs/mexican_hat.toml")),
    ("relu_flow", include_str!("../../../../configs/relu_flow.toml")),
    ("relu_gd", include_str!("../../../../configs/relu_gd.toml")),
    ("deep_loss", include_str!("../../../../configs/deep_loss.toml")),
    ("rates_l1", include_str!("../../../../configs/rates_l1.toml")),
    ("rates_l2", include_str!("../../../../configs/rates_l2.toml")),
];

impl LoadedConfig {
    pub fn from_text(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self {
            config,
            text: text.to_string(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
            base_dir: base_dir.into(),
        })
    }

    /// Loads a config file, or a built-in preset when `path` names one and no
    /// such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(text) = preset(&path.to_string_lossy()) {
                return Self::from_text(text, ".");
            }
        }
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base)
    }

    pub fn load_dataset(&self, run_seed: u64) -> Result<Dataset> {
        let src = self
            .config
            .data
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario {:?} needs a [data] table", self.config.scenario)))?;
        load_dataset(src, run_seed, &self.base_dir)
    }
}

/// Names and texts of the built-in configs.
pub fn presets() -> &'static [(&'static str, &'static str)] {
    PRESETS
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

impl RunConfig {
    pub fn is_hat(&self) -> bool {
        self.scenario == "mexican_hat" || self.hat.is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !self.is_hat() && (self.model.is_none() || self.data.is_none()) {
            return Err(Error::Config(format!(
                "scenario {:?} needs [model] and [data] tables",
                self.scenario
            )));
        }
        Ok(())
    }
}

pub fn load_dataset(src: &DataSource, run_seed: u64, base_dir: &Path) -> Result<Dataset> {
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    match src {
        DataSource::Csv { path, inline } => match (path, inline) {
            (Some(p), None) => parse_csv(&std::fs::read_to_string(resolve(p))?),
            (None, Some(text)) => parse_csv(text),
            _ => Err(Error::Config(
                "csv data needs exactly one of `path` and `inline`".into(),
            )),
        },
        DataSource::Synthetic { generator, seed } => synthetic(generator, seed.unwrap_or(run_seed)),
        DataSource::Idx {
            images,
            labels,
            subsample,
            label_mode,
        } => load_idx(&resolve(images), &resolve(labels), *subsample, label_mode),
    }
}

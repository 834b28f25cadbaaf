//! Experiment configuration: one human-readable JSON tree per experiment.
//!
//! Explicit `local_updates`/`batch` values win over the ν-derived ones; the
//! horizon is padded up to the next multiple of the resolved I; every field
//! round-trips through serialization unchanged.

use crate::error::{Error, Result};
use crate::problems::{
    make_least_squares, make_logistic_nonconvex, make_two_layer_tanh, Family, ProblemInstance,
};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Which training loop to run. `minibatch-sgd` is sugar for STEM with
/// I = 1 and the momentum forced to 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Stem,
    #[serde(rename = "fedavg")]
    FedAvg,
    MinibatchSgd,
}

/// How minibatches are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    #[default]
    Sampled,
    /// Every direction uses the full local dataset (exact-gradient mode).
    Full,
}

/// Problem generator settings; datasets are regenerated from these fields,
/// no data files are ever shipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: Family,
    pub dim: usize,
    pub workers: usize,
    pub n_per_worker: usize,
    pub seed: u64,
    #[serde(default)]
    pub hetero_shift: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub class_skew: f64,
    #[serde(default)]
    pub reg_lambda: f64,
    /// Hidden width for the tanh family (`dim` is then the input width).
    #[serde(default)]
    pub hidden: Option<usize>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemInstance> {
        match self.family {
            Family::LeastSquaresSharedDesign => make_least_squares(
                self.dim,
                self.workers,
                self.n_per_worker,
                self.hetero_shift,
                self.noise,
                self.seed,
            ),
            Family::LogisticNonconvex => make_logistic_nonconvex(
                self.dim,
                self.workers,
                self.n_per_worker,
                self.class_skew,
                self.reg_lambda,
                self.seed,
            ),
            Family::TwoLayerTanh => {
                let hidden = self.hidden.ok_or_else(|| {
                    Error::Config("two-layer-tanh needs the `hidden` field".into())
                })?;
                make_two_layer_tanh(
                    self.dim,
                    hidden,
                    self.workers,
                    self.n_per_worker,
                    self.hetero_shift,
                    self.noise,
                    self.seed,
                )
            }
        }
    }
}

/// Schedule settings and overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_mode")]
    pub mode: crate::schedules::ScheduleMode,
    /// Horizon; padded up to a multiple of the resolved I.
    pub total_iters: u64,
    /// Trade-off dial deriving (I, b) when they are not given explicitly.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub local_updates: Option<u64>,
    #[serde(default)]
    pub batch: Option<u64>,
    /// Initial batch size; defaults to b·I.
    #[serde(default)]
    pub init_batch: Option<u64>,
    /// Constant FedAvg step; defaults to √(bK/T).
    #[serde(default)]
    pub eta: Option<f64>,
    /// Practical-mode κ̄ dial.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Scale the practical κ̄ by (b·K)^(2/3), matching the theoretical law's
    /// batch dependence; `kappa` is then the per-unit-batch dial. Keeps the
    /// ν trade-off curve comparable across cells.
    #[serde(default)]
    pub kappa_bk_scaling: bool,
    /// Ceiling on the practical κ̄ after scaling.
    #[serde(default)]
    pub kappa_max: Option<f64>,
    /// Practical-mode c̄ dial.
    #[serde(default = "default_cbar")]
    pub cbar: f64,
    #[serde(default = "default_epoch_len")]
    pub epoch_len: u64,
    /// Theoretical-mode σ override; measured from the problem when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Theoretical-mode L override; measured from the problem when absent.
    #[serde(default)]
    pub l_smooth: Option<f64>,
    /// Forced momentum value (1 turns STEM directions into plain minibatch
    /// gradients).
    #[serde(default)]
    pub force_a: Option<f64>,
    #[serde(default)]
    pub batch_mode: BatchMode,
}

fn default_mode() -> crate::schedules::ScheduleMode {
    crate::schedules::ScheduleMode::Practical
}

fn default_kappa() -> f64 {
    0.1
}

fn default_cbar() -> f64 {
    2.0
}

fn default_epoch_len() -> u64 {
    1
}

/// One experiment: problem, algorithm, schedule, evaluation targets, seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: Algorithm,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub eps_targets: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Common initial iterate; zero vector when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Where to write CSV/JSON outputs; in-memory only when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.schedule.total_iters == 0 {
            return Err(Error::Config("total_iters must be positive".into()));
        }
        if let Some(nu) = self.schedule.nu {
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::Config(format!("nu must lie in [0, 1], got {nu}")));
            }
        }
        if self.eps_targets.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("eps targets must be positive".into()));
        }
        Ok(())
    }
}

//! Run configuration: defaults, optionally overlaid by a JSON file, then by flags.

use std::fs;
use std::path::{Path, PathBuf};

use multiblank::data::SynthConfig;
use multiblank::decode::DEFAULT_MAX_SYMBOLS_PER_FRAME;
use multiblank::oracle::InstanceLimits;
use multiblank::toymodel::{ModelDims, TrainConfig};
use multiblank::{BlankSet, Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sigma: f64,
    pub blanks: BlankSet,
    /// Decoding batch size; 1 selects exact greedy decoding.
    pub batch_size: usize,
    pub max_symbols: usize,
    pub verify: VerifyConfig,
    pub train: TrainSection,
    pub data: DataConfig,
    /// Model to decode for `decode` and `emissions`.
    pub checkpoint: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma: DEFAULT_SIGMA,
            blanks: BlankSet::new(vec![1, 2, 4]).expect("static blank set"),
            batch_size: 1,
            max_symbols: DEFAULT_MAX_SYMBOLS_PER_FRAME,
            verify: VerifyConfig::default(),
            train: TrainSection::default(),
            data: DataConfig::default(),
            checkpoint: None,
            baseline: None,
            candidate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub trials: usize,
    /// How many of the trials also get a finite-difference gradient check.
    pub grad_trials: usize,
    pub limits: InstanceLimits,
    pub fd_step: f64,
    pub loss_tolerance: f64,
    pub grad_tolerance: f64,
    /// Denominator floor of the relative gradient error.
    pub grad_floor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            grad_trials: 100,
            limits: InstanceLimits {
                max_frames: 5,
                max_labels: 3,
                ..InstanceLimits::default()
            },
            fd_step: 1e-5,
            loss_tolerance: 1e-9,
            grad_tolerance: 1e-4,
            grad_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub dims: ModelDims,
    /// Loss-curve points average this many steps.
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 8,
            clip_norm: Some(5.0),
            dims: ModelDims::default(),
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines training set; synthesized from `synth_train` when absent.
    pub train: Option<PathBuf>,
    /// JSON-lines evaluation set; synthesized from `synth_test` when absent.
    pub test: Option<PathBuf>,
    pub synth_train: SynthConfig,
    pub synth_test: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            synth_train: SynthConfig {
                count: 2000,
                seed: 1,
                ..SynthConfig::default()
            },
            synth_test: SynthConfig {
                count: 200,
                seed: 2,
                ..SynthConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_symbols == 0 {
            return Err(Error::Config("max_symbols must be at least 1".into()));
        }
        if self.train.log_every == 0 {
            return Err(Error::Config("train.log_every must be at least 1".into()));
        }
        let v = &self.verify;
        if !(v.fd_step > 0.0 && v.loss_tolerance >= 0.0 && v.grad_tolerance >= 0.0 && v.grad_floor > 0.0)
        {
            return Err(Error::Config(
                "verify step, tolerances and floor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Training hyperparameters for the core trainer.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sigma: self.sigma,
            blank_set: self.blanks.clone(),
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            seed: self.seed,
            dims: self.train.dims,
            clip_norm: self.train.clip_norm,
        }
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Augmentation};
use crate::nn::Sgd;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Points sampled per case and step.
    pub sample_count: usize,
    #[serde(flatten)]
    pub sgd: Sgd,
    pub lr_schedule: LrSchedule,
    pub augment: bool,
    pub augmentation: Augmentation,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Fail on the first non-finite intermediate value instead of only
    /// checking the loss.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 4,
            sample_count: 12288,
            sgd: Sgd::default(),
            lr_schedule: LrSchedule::Constant,
            augment: true,
            augmentation: Augmentation::default(),
            seed: 0,
            checkpoint_every: 0,
            check_finite: false,
        }
    }
}

/// Learning rate over the epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate at the first epoch toward zero
    /// after the last.
    Cosine,
}

impl TrainConfig {
    /// Optimizer settings for `epoch` (0-based).
    pub fn sgd_at(&self, epoch: usize) -> Sgd {
        let factor = match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / self.epochs as f64).cos()),
        };
        Sgd {
            lr: self.sgd.lr * factor,
            ..self.sgd
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.sample_count == 0 {
            return Err(Error::ConfigInvalid(
                "epochs, batch_size and sample_count must be positive".into(),
            ));
        }
        if !(self.sgd.lr >= 0.0 && self.sgd.momentum >= 0.0 && self.sgd.weight_decay >= 0.0) {
            return Err(Error::ConfigInvalid(format!("bad optimizer settings {:?}", self.sgd)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cases generated by `synth`.
    pub count: usize,
    /// The first `train` cases form the training split, the rest the test
    /// split.
    pub train: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { count: 50, train: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Points sampled per case at inference.
    pub sample_count: usize,
    /// Tube radius around each centerline when voting for its label, mm.
    pub dilation_radius: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sample_count: 12288,
            dilation_radius: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub counts: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            counts: vec![4096, 8192, 12288, 16384],
        }
    }
}

/// Everything a CLI run can be configured with; every section is optional
/// in the JSON file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.data.count == 0 {
            return Err(Error::ConfigInvalid("data.count must be positive".into()));
        }
        if self.eval.sample_count == 0 || !(self.eval.dilation_radius > 0.0) {
            return Err(Error::ConfigInvalid(
                "eval.sample_count and eval.dilation_radius must be positive".into(),
            ));
        }
        if self.ablate.counts.is_empty() || self.ablate.counts.contains(&0) {
            return Err(Error::ConfigInvalid("ablate.counts must be non-empty and positive".into()));
        }
        Ok(())
    }
}

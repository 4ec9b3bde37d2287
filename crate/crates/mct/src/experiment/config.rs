use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mce::MceConfig;
use crate::metrics::MapMode;
use crate::model::MctConfig;
use crate::train::Schedule;
use crate::transformer::EncoderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    Full,
    Partial,
    None,
}

impl std::str::FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TransferMode::Full),
            "partial" => Ok(TransferMode::Partial),
            "none" => Ok(TransferMode::None),
            other => Err(Error::Config(format!("unknown transfer mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default = "Schedule::pretrain_default")]
    pub schedule: Schedule,
    #[serde(default = "default_hidden")]
    pub recon_hidden: usize,
    #[serde(default)]
    pub zero_center: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            schedule: Schedule::pretrain_default(),
            recon_hidden: default_hidden(),
            zero_center: false,
        }
    }
}

fn default_hidden() -> usize {
    128
}

fn default_per_class() -> usize {
    5
}

fn default_eval_batch() -> usize {
    256
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_transfer() -> TransferMode {
    TransferMode::Full
}

fn default_map_mode() -> MapMode {
    MapMode::Labeled
}

/// Everything a run needs. Paths are relative to the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene cube (`.hsic`).
    pub cube: PathBuf,
    /// Ground truth (`.hsig`); required by every command except `pretrain`.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Existing split file; when absent one is drawn from `per_class` and `seed`.
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default)]
    pub mce: MceConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "default_hidden")]
    pub head_hidden: usize,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default = "Schedule::finetune_default")]
    pub finetune: Schedule,
    /// Pretrained checkpoint used to initialise fine-tuning.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default = "default_transfer")]
    pub transfer: TransferMode,
    #[serde(default)]
    pub seed: u64,
    /// Recorded in the run manifest. Every kernel already reduces in a fixed
    /// order, so runs are reproducible either way.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "default_map_mode")]
    pub map_mode: MapMode,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Defaults for a scene at `cube`.
    pub fn new(cube: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "cube": cube.into() }))
            .expect("defaults deserialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.as_ref().display()))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn ground_truth(&self) -> Result<&Path> {
        self.ground_truth
            .as_deref()
            .ok_or_else(|| Error::Config("ground_truth path is required".into()))
    }

    pub fn model_config(&self, bands: usize, classes: usize) -> MctConfig {
        MctConfig {
            mce: MceConfig {
                bands,
                ..self.mce.clone()
            },
            encoder: self.encoder.clone(),
            head_hidden: self.head_hidden,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.finetune.validate()?;
        self.pretrain.schedule.validate()?;
        self.encoder.validate()?;
        if self.mce.d_model != self.encoder.d_model {
            return Err(Error::Config(format!(
                "mce.d_model {} must equal encoder.d_model {}",
                self.mce.d_model, self.encoder.d_model
            )));
        }
        if self.per_class == 0 || self.eval_batch == 0 {
            return Err(Error::Config("per_class and eval_batch must be positive".into()));
        }
        Ok(())
    }
}

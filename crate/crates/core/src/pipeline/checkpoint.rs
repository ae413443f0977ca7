//! Versioned JSON checkpoints: network, optimiser state and the counters
//! that fix the remaining data order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{AdamState, Tdcn};

pub const CHECKPOINT_FORMAT: &str = "vmekit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Separator,
    Vme,
}

impl Stage {
    pub(crate) fn tag(self) -> u64 {
        match self {
            Stage::Separator => 0x5e9a,
            Stage::Vme => 0x7e3e,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    /// `0` is the untrained model, scored on dev only.
    pub epoch: usize,
    pub steps: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_vm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_bf: Option<f64>,
    pub dev_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_vm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_bf: Option<f64>,
    /// Mean global gradient norm before clipping.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad_norm: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    /// Master seed; with `epochs_done` it determines all later batches.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    pub epochs_done: usize,
    pub net: Tdcn,
    pub optimizer: AdamState,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(stage: Stage, seed: u64, alpha: Option<f64>, net: Tdcn, optimizer: AdamState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            stage,
            seed,
            alpha,
            epochs_done: 0,
            net,
            optimizer,
            history: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let head: serde_json::Value = serde_json::from_slice(&bytes)?;
        if head.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Data(format!("{}: not a checkpoint", path.display())));
        }
        if head.get("version").and_then(|v| v.as_u64()) != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                head.get("version").unwrap_or(&serde_json::Value::Null)
            )));
        }
        Ok(serde_json::from_value(head)?)
    }

    pub fn expect_stage(self, stage: Stage, path: &Path) -> Result<Self> {
        if self.stage != stage {
            return Err(Error::Data(format!(
                "{}: expected a {stage:?} checkpoint, found {:?}",
                path.display(),
                self.stage
            )));
        }
        Ok(self)
    }
}

//! Run configuration: one TOML file with `data`, `model`, `train` and
//! `eval` sections. Missing keys take the values of the selected preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beamformer::BfConfig;
use crate::error::{Error, Result};
use crate::losses::{MtlConfig, LOSS_FLOOR_DB, SNR_EPSILON};
use crate::nnet::{TdcnConfig, VME_INPUTS};
use crate::room::SceneOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    /// Peak level the stored mixture is scaled to.
    pub peak_level: f64,
    pub scene: SceneOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub separator: TdcnConfig,
    pub vme: TdcnConfig,
    pub beamformer: BfConfig,
}

/// Optimisation settings of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Training crop length; `0` trains on whole utterances.
    pub crop_s: f64,
    /// Dev utterances scored after each epoch (`0` for the whole dev set).
    pub dev_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub separator: StageConfig,
    pub vme: StageConfig,
    pub alpha: f64,
    pub snr_epsilon: f64,
    pub loss_floor_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Magnitude ratio of the frozen separator outputs to the mixture.
    Separator,
    /// Magnitude ratio of the true reference images to the mixture.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub alphas: Vec<f64>,
    pub systems: Vec<String>,
    pub masks: MaskSource,
}

pub const ALPHA_SWEEP: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

impl Config {
    /// CPU-scale defaults.
    pub fn desk() -> Self {
        let stage = StageConfig {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            crop_s: 1.0,
            dev_limit: 20,
        };
        Self {
            preset: Preset::Desk,
            seed: 20230,
            data: DataConfig {
                sample_rate: 8000,
                duration_s: 2.0,
                n_train: 1000,
                n_dev: 100,
                n_eval: 100,
                peak_level: 0.9,
                scene: SceneOptions::default(),
            },
            model: ModelConfig {
                separator: TdcnConfig::desk(1, 3),
                vme: TdcnConfig::desk(VME_INPUTS, 1),
                beamformer: BfConfig::default(),
            },
            train: TrainConfig {
                separator: stage.clone(),
                vme: stage,
                alpha: 0.3,
                snr_epsilon: SNR_EPSILON,
                loss_floor_db: LOSS_FLOOR_DB,
            },
            eval: EvalConfig {
                alphas: ALPHA_SWEEP.to_vec(),
                systems: vec!["mixture".into(), "rm2".into(), "rm3".into(), "vm".into()],
                masks: MaskSource::Separator,
            },
        }
    }

    /// Published experiment scale.
    pub fn full() -> Self {
        let mut c = Self::desk();
        let stage = StageConfig {
            epochs: 100,
            batch_size: 4,
            learning_rate: 1e-4,
            clip_norm: 5.0,
            crop_s: 4.0,
            dev_limit: 0,
        };
        c.preset = Preset::Full;
        c.data.sample_rate = 16000;
        c.data.duration_s = 6.0;
        c.data.n_train = 30_000;
        c.data.n_dev = 5000;
        c.data.n_eval = 5000;
        c.model.separator = TdcnConfig::full(1, 3);
        c.model.vme = TdcnConfig::full(VME_INPUTS, 1);
        c.train.separator = stage.clone();
        c.train.vme = stage;
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    /// Parses TOML, filling absent keys from the preset named by the
    /// top-level `preset` key (desk when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("config: preset: {e}")))?,
        };
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn len_samples(&self) -> usize {
        (self.data.duration_s * self.data.sample_rate as f64).round() as usize
    }

    pub fn mtl(&self, alpha: f64) -> Result<MtlConfig> {
        let cfg = MtlConfig {
            alpha,
            snr_epsilon: self.train.snr_epsilon,
            loss_floor_db: self.train.loss_floor_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.sample_rate == 0 || !(d.duration_s > 0.0) || !(d.peak_level > 0.0) {
            return Err(Error::Config("data: sample_rate, duration_s and peak_level must be positive".into()));
        }
        if d.n_train == 0 || d.n_dev == 0 || d.n_eval == 0 {
            return Err(Error::Config("data: every split needs at least one mixture".into()));
        }
        if d.scene.n_mics != 3 {
            return Err(Error::Config(format!(
                "data: the array has channels 4, 5 and 6, got {} mics",
                d.scene.n_mics
            )));
        }
        if !(d.scene.max_t60 >= 0.0 && d.scene.max_t60 <= 0.3) {
            return Err(Error::Config(format!("data: max_t60 {} outside [0, 0.3] s", d.scene.max_t60)));
        }
        if !(d.scene.sir_range_db >= 0.0) || !d.scene.noise_snr_db.is_finite() {
            return Err(Error::Config("data: invalid SIR range or noise SNR".into()));
        }
        let m = &self.model;
        m.separator.validate()?;
        m.vme.validate()?;
        m.beamformer.validate()?;
        if m.separator.input_channels != 1 || m.separator.output_heads != d.scene.n_sources {
            return Err(Error::Config(format!(
                "model: separator must map 1 channel to {} heads",
                d.scene.n_sources
            )));
        }
        if m.vme.input_channels != VME_INPUTS || m.vme.output_heads != 1 {
            return Err(Error::Config(format!("model: NN-VME must map {VME_INPUTS} channels to 1 head")));
        }
        if m.beamformer.ref_channel != 0 {
            return Err(Error::Config("model: the beamformer reference is channel 4 (index 0)".into()));
        }
        for (name, s) in [("separator", &self.train.separator), ("vme", &self.train.vme)] {
            if s.batch_size == 0 || !(s.learning_rate > 0.0) || !(s.clip_norm > 0.0) || !(s.crop_s >= 0.0) {
                return Err(Error::Config(format!("train.{name}: invalid optimiser settings")));
            }
            if s.crop_s > d.duration_s {
                return Err(Error::Config(format!("train.{name}: crop longer than the utterance")));
            }
        }
        self.mtl(self.train.alpha)?;
        for &a in &self.eval.alphas {
            self.mtl(a)?;
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

//! The two TDCN instances of the pipeline: the NN-VME, mapping the real
//! microphones to the virtual one, and the single-channel separator.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tdcn::{Tdcn, TdcnConfig};
use crate::error::{Error, Result};

/// Real microphones fed to the NN-VME, stacked as input channels.
pub const VME_INPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmeModel {
    pub net: Tdcn,
}

impl VmeModel {
    pub fn new(cfg: TdcnConfig, seed: u64) -> Result<Self> {
        if cfg.input_channels != VME_INPUTS || cfg.output_heads != 1 {
            return Err(Error::Config(format!(
                "NN-VME needs {VME_INPUTS} inputs and 1 head, got {} and {}",
                cfg.input_channels, cfg.output_heads
            )));
        }
        Ok(Self {
            net: Tdcn::new(cfg, seed)?,
        })
    }

    pub fn from_net(net: Tdcn) -> Result<Self> {
        let cfg = net.config();
        if cfg.input_channels != VME_INPUTS || cfg.output_heads != 1 {
            return Err(Error::Config("network is not an NN-VME".into()));
        }
        Ok(Self { net })
    }

    /// `r: [2, T]` → `v̂: [1, T]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], r: Var) -> Result<Var> {
        Ok(self.net.forward(g, p, r)?.remove(0))
    }

    pub fn infer(&self, r: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.net.infer(r)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separator {
    pub net: Tdcn,
}

impl Separator {
    pub fn new(cfg: TdcnConfig, seed: u64) -> Result<Self> {
        if cfg.input_channels != 1 {
            return Err(Error::Config(format!(
                "separator takes the reference channel only, got {} inputs",
                cfg.input_channels
            )));
        }
        Ok(Self {
            net: Tdcn::new(cfg, seed)?,
        })
    }

    pub fn from_net(net: Tdcn) -> Result<Self> {
        if net.config().input_channels != 1 {
            return Err(Error::Config("network is not a single-channel separator".into()));
        }
        Ok(Self { net })
    }

    pub fn sources(&self) -> usize {
        self.net.config().output_heads
    }

    /// `mixture: [1, T]` → one `[1, T]` estimate per source.
    pub fn forward(&self, g: &mut Graph, p: &[Var], mixture: Var) -> Result<Vec<Var>> {
        self.net.forward(g, p, mixture)
    }

    pub fn infer(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.net.infer(&[mixture.to_vec()])
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-domain multichannel signal stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultichannelWave {
    channels: usize,
    len: usize,
    samples: Vec<f64>,
    sample_rate: u32,
}

impl MultichannelWave {
    /// Builds a wave from channel-major samples (`channels × len`).
    pub fn new(channels: usize, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if channels == 0 || samples.is_empty() || samples.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} samples cannot form {channels} non-empty channels",
                samples.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            channels,
            len: samples.len() / channels,
            samples,
            sample_rate,
        })
    }

    pub fn from_channels(chans: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let Some(first) = chans.first() else {
            return Err(Error::Shape("no channels".into()));
        };
        let len = first.len();
        if chans.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        let n = chans.len();
        Self::new(n, chans.concat(), sample_rate)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(1, samples, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.len..(c + 1) * self.len]
    }

    /// All samples, channel-major.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// New wave holding the listed channels in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.channels) {
            return Err(Error::Shape(format!(
                "channel {bad} out of range for {} channels",
                self.channels
            )));
        }
        let chans = idx.iter().map(|&i| self.channel(i).to_vec()).collect();
        Self::from_channels(chans, self.sample_rate)
    }

    /// Samples `start..start + len` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len || len == 0 {
            return Err(Error::Length(format!(
                "slice {start}..{} of a {}-sample wave",
                start + len,
                self.len
            )));
        }
        let chans = (0..self.channels)
            .map(|c| self.channel(c)[start..start + len].to_vec())
            .collect();
        Self::from_channels(chans, self.sample_rate)
    }

    pub fn energy(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|v| v * v).sum()
    }
}

//! Waveform containers, STFT analysis/synthesis and WAV I/O.

mod stft;
mod wave;
pub mod wav;

pub use stft::{istft, stft, stft_with, Spectrogram, StftConfig, StftKernel, Window};
pub use wave::MultichannelWave;

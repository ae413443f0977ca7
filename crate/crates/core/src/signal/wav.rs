//! WAV files: 16-bit PCM and 32-bit IEEE float, any channel count.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::wave::MultichannelWave;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn write_wav(path: impl AsRef<Path>, wave: &MultichannelWave, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for i in 0..wave.len() {
        for c in 0..wave.channels() {
            let v = wave.channel(c)[i];
            match encoding {
                WavEncoding::Pcm16 => {
                    w.write_sample((v.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?
                }
                WavEncoding::Float32 => w.write_sample(v as f32)?,
            }
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWave> {
    let mut r = hound::WavReader::open(path.as_ref())?;
    let spec = r.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Data(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.as_ref().display()
            )))
        }
    };
    if channels == 0 || interleaved.len() % channels != 0 {
        return Err(Error::Data(format!(
            "{}: truncated sample data",
            path.as_ref().display()
        )));
    }
    let len = interleaved.len() / channels;
    let mut planar = vec![0.0; interleaved.len()];
    for (i, v) in interleaved.into_iter().enumerate() {
        planar[(i % channels) * len + i / channels] = v;
    }
    MultichannelWave::new(channels, planar, spec.sample_rate)
}

//! On-disk datasets: one directory per split, one WAV per role and sample,
//! and a JSON-lines manifest.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::error::{Error, Result};
use crate::room::{generate_sample, Scene, REF_CHANNEL, RM_CHANNELS, VM_CHANNEL};
use crate::signal::wav::{read_wav, write_wav, WavEncoding};
use crate::signal::MultichannelWave;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Eval => 3,
        }
    }

    pub fn count(self, cfg: &Config) -> usize {
        match self {
            Split::Train => cfg.data.n_train,
            Split::Dev => cfg.data.n_dev,
            Split::Eval => cfg.data.n_eval,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sample_seed(master: u64, split: Split, index: usize) -> u64 {
    mix64(mix64(master ^ split.tag().rotate_left(56)) ^ index as u64)
}

/// Files of one sample, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    /// All three channels (ch4, ch5, ch6).
    pub mixture: String,
    /// Real microphones (ch4, ch6).
    pub rm: String,
    /// Recording at the virtual microphone position (ch5).
    pub vm: String,
    /// Reverberant image of every source at ch4, one channel per source.
    pub images: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub gain: f64,
    pub files: SampleFiles,
    pub scene: Scene,
}

/// A loaded sample: the mixture and the reference images at ch4.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub mixture: MultichannelWave,
    pub images: Vec<Vec<f64>>,
}

impl Example {
    pub fn r(&self) -> Vec<Vec<f64>> {
        RM_CHANNELS.iter().map(|&c| self.mixture.channel(c).to_vec()).collect()
    }

    pub fn v(&self) -> &[f64] {
        self.mixture.channel(VM_CHANNEL)
    }

    pub fn reference(&self) -> &[f64] {
        self.mixture.channel(REF_CHANNEL)
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }
}

fn write_sample(dir: &Path, cfg: &Config, split: Split, index: usize) -> Result<ManifestEntry> {
    let seed = sample_seed(cfg.seed, split, index);
    let len = cfg.len_samples();
    let s = generate_sample(seed, len, cfg.data.sample_rate, &cfg.data.scene)?;
    let peak = s.mixture.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(Error::Data(format!("{split} sample {index}: silent mixture")));
    }
    let gain = cfg.data.peak_level / peak;
    let scale = |w: &MultichannelWave| {
        MultichannelWave::new(
            w.channels(),
            w.samples().iter().map(|v| v * gain).collect(),
            w.sample_rate(),
        )
    };
    let mixture = scale(&s.mixture)?;
    let images = MultichannelWave::from_channels(
        s.images.iter().map(|im| im.channel(REF_CHANNEL).iter().map(|v| v * gain).collect()).collect(),
        cfg.data.sample_rate,
    )?;
    let id = format!("{split}_{index:05}");
    let files = SampleFiles {
        mixture: format!("{split}/{id}_mixture.wav"),
        rm: format!("{split}/{id}_rm.wav"),
        vm: format!("{split}/{id}_vm.wav"),
        images: format!("{split}/{id}_images.wav"),
    };
    let put = |rel: &str, w: &MultichannelWave| write_wav(dir.join(rel), w, WavEncoding::Float32);
    put(&files.mixture, &mixture)?;
    put(&files.rm, &mixture.select(&RM_CHANNELS)?)?;
    put(&files.vm, &mixture.select(&[VM_CHANNEL])?)?;
    put(&files.images, &images)?;
    Ok(ManifestEntry {
        id,
        split,
        index,
        seed,
        gain,
        files,
        scene: s.scene,
    })
}

/// Simulates every split into `dir` and writes the manifest. Samples are
/// generated in parallel; the manifest order is split, then index.
pub fn generate_dataset(cfg: &Config, dir: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    for split in Split::ALL {
        let sub = dir.join(split.to_string());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let jobs: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..s.count(cfg)).map(move |i| (s, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(s, i)| write_sample(dir, cfg, s, i))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join(MANIFEST);
    let mut text = String::new();
    for e in &entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn load_entry(dir: &Path, e: &ManifestEntry) -> Result<Example> {
    let mixture = read_wav(dir.join(&e.files.mixture))?;
    let images = read_wav(dir.join(&e.files.images))?;
    if mixture.channels() != 3 || images.len() != mixture.len() {
        return Err(Error::Data(format!("{}: inconsistent files", e.id)));
    }
    Ok(Example {
        id: e.id.clone(),
        images: (0..images.channels()).map(|c| images.channel(c).to_vec()).collect(),
        mixture,
    })
}

/// Loads the samples of one split in manifest order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Example>> {
    let entries: Vec<ManifestEntry> = read_manifest(dir)?.into_iter().filter(|e| e.split == split).collect();
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: no {split} samples in the manifest", dir.display())));
    }
    entries.par_iter().map(|e| load_entry(dir, e)).collect()
}

pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("data")
}

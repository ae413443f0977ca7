use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::noise::{diffuse_noise, DIFFUSE_SOURCES};
use super::rir::{rirs_with_reflection, Position, RoomSpec};
use super::speech::synth_speech_like;
use crate::error::{Error, Result};
use crate::signal::MultichannelWave;

pub const MIC_SPACING: f64 = 0.10;
/// Array order is [ch4, ch5, ch6]; ch4 is the reference.
pub const REF_CHANNEL: usize = 0;
pub const VM_CHANNEL: usize = 1;
pub const RM_CHANNELS: [usize; 2] = [0, 2];

/// Sampling ranges and defaults for random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneOptions {
    pub n_sources: usize,
    pub n_mics: usize,
    pub sir_range_db: f64,
    pub noise_snr_db: f64,
    pub wall_clearance: f64,
    pub min_source_distance: f64,
    pub max_t60: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            n_sources: 3,
            n_mics: 3,
            sir_range_db: 3.0,
            noise_snr_db: 20.0,
            wall_clearance: 0.3,
            min_source_distance: 0.3,
            max_t60: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: RoomSpec,
    pub source_positions: Vec<Position>,
    pub mic_positions: Vec<Position>,
    /// One entry per interfering source (sources 2..I).
    pub sir_db: Vec<f64>,
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.source_positions.is_empty() || self.mic_positions.is_empty() {
            return Err(Error::Geometry("scene needs at least one source and one microphone".into()));
        }
        if self.sir_db.len() + 1 != self.source_positions.len() {
            return Err(Error::Config(format!(
                "{} SIR values for {} sources",
                self.sir_db.len(),
                self.source_positions.len()
            )));
        }
        for p in self.source_positions.iter().chain(&self.mic_positions) {
            if !self.room.contains(p, 0.0) {
                return Err(Error::Geometry(format!("position {p:?} outside the room")));
            }
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        0.5 * (lo + hi)
    }
}

/// Random room, array and sources, drawn only from `seed`. Room and t60
/// pairs whose Sabine absorption would exceed one are redrawn.
pub fn sample_scene(seed: u64, opts: &SceneOptions) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = loop {
        let room = RoomSpec {
            width: rng.gen_range(2.5..=10.0),
            depth: rng.gen_range(2.5..=10.0),
            height: rng.gen_range(2.5..=5.0),
            t60: rng.gen_range(0.0..=opts.max_t60),
            speed_of_sound: 343.0,
        };
        if room.check_achievable().is_ok() {
            break room;
        }
    };
    let half = MIC_SPACING * (opts.n_mics as f64 - 1.0) / 2.0;
    let clear = opts.wall_clearance;
    let theta = rng.gen_range(0.0..2.0 * PI);
    let centre = [
        uniform_in(&mut rng, clear + half, room.width - clear - half),
        uniform_in(&mut rng, clear + half, room.depth - clear - half),
        uniform_in(&mut rng, clear, room.height - clear),
    ];
    let mic_positions: Vec<Position> = (0..opts.n_mics)
        .map(|k| {
            let off = k as f64 * MIC_SPACING - half;
            [centre[0] + off * theta.cos(), centre[1] + off * theta.sin(), centre[2]]
        })
        .collect();
    let mut source_positions = Vec::with_capacity(opts.n_sources);
    while source_positions.len() < opts.n_sources {
        let p = [
            uniform_in(&mut rng, clear, room.width - clear),
            uniform_in(&mut rng, clear, room.depth - clear),
            uniform_in(&mut rng, clear, room.height - clear),
        ];
        let near = mic_positions.iter().any(|m| {
            (0..3).map(|a| (p[a] - m[a]).powi(2)).sum::<f64>().sqrt() < opts.min_source_distance
        });
        if !near {
            source_positions.push(p);
        }
    }
    let sir_db = (1..opts.n_sources)
        .map(|_| rng.gen_range(-opts.sir_range_db..=opts.sir_range_db))
        .collect();
    Scene {
        room,
        source_positions,
        mic_positions,
        sir_db,
        noise_snr_db: opts.noise_snr_db,
        seed,
    }
}

/// Linear convolution of `x` with `h`, truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut fx = lift(x);
    let mut fh = lift(h);
    fwd.process(&mut fx);
    fwd.process(&mut fh);
    for (a, b) in fx.iter_mut().zip(&fh) {
        *a *= b;
    }
    inv.process(&mut fx);
    let mut out: Vec<f64> = fx.iter().take(full.min(out_len)).map(|c| c.re / n as f64).collect();
    out.resize(out_len, 0.0);
    out
}

/// A simulated training tuple. `images[i]` is source `i` at every channel
/// after gain scaling, so `mixture = Σ images + noise` exactly.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub mixture: MultichannelWave,
    pub images: Vec<MultichannelWave>,
    pub noise: MultichannelWave,
    pub scene: Scene,
}

impl MixtureSample {
    /// Real microphones (ch4, ch6).
    pub fn r(&self) -> MultichannelWave {
        self.mixture.select(&RM_CHANNELS).expect("mixture has three channels")
    }

    /// Virtual microphone target (ch5).
    pub fn v(&self) -> MultichannelWave {
        self.mixture.select(&[VM_CHANNEL]).expect("mixture has three channels")
    }

    /// Per-source images at the reference channel, one row per source.
    pub fn x(&self) -> MultichannelWave {
        let rows: Vec<Vec<f64>> = self.images.iter().map(|w| w.channel(REF_CHANNEL).to_vec()).collect();
        MultichannelWave::from_channels(rows, self.mixture.sample_rate()).expect("images share the mixture rate")
    }
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|s| s * s).sum()
}

/// Reverberates `sources` through the scene, scales interferers to their
/// SIR against source 1 and the noise to the scene SNR against the summed
/// speech, all measured at the reference channel.
pub fn synthesize(scene: &Scene, sources: &[Vec<f64>], noise: &MultichannelWave, sample_rate: u32) -> Result<MixtureSample> {
    scene.validate()?;
    let n_src = scene.source_positions.len();
    let n_mic = scene.mic_positions.len();
    if sources.len() != n_src {
        return Err(Error::Config(format!("{} source signals for {n_src} scene sources", sources.len())));
    }
    let len = sources[0].len();
    if len == 0 || sources.iter().any(|s| s.len() != len) {
        return Err(Error::Length("source signals must be non-empty and of equal length".into()));
    }
    if noise.channels() != n_mic || noise.len() != len || noise.sample_rate() != sample_rate {
        return Err(Error::Shape(format!(
            "noise is {}×{} at {} Hz, expected {n_mic}×{len} at {sample_rate} Hz",
            noise.channels(),
            noise.len(),
            noise.sample_rate()
        )));
    }
    let fs = sample_rate as f64;
    let beta = scene.room.reflection_coefficient()?;
    let mut images: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_src);
    for (s, pos) in sources.iter().zip(&scene.source_positions) {
        let rirs = rirs_with_reflection(&scene.room, beta, pos, &scene.mic_positions, fs, None)?;
        images.push(rirs.iter().map(|h| fft_convolve(s, h, len)).collect());
    }
    let e1 = energy(&images[0][REF_CHANNEL]);
    if !(e1 > 0.0) {
        return Err(Error::Scaling("source 1 has zero energy at the reference channel".into()));
    }
    for i in 1..n_src {
        let ei = energy(&images[i][REF_CHANNEL]);
        if !(ei > 0.0) {
            return Err(Error::Scaling(format!("source {} has zero energy at the reference channel", i + 1)));
        }
        let g = (e1 / (ei * 10f64.powf(scene.sir_db[i - 1] / 10.0))).sqrt();
        images[i].iter_mut().flatten().for_each(|v| *v *= g);
    }
    let speech_ref: Vec<f64> = (0..len).map(|t| images.iter().map(|im| im[REF_CHANNEL][t]).sum()).collect();
    let es = energy(&speech_ref);
    let en = energy(noise.channel(REF_CHANNEL));
    if !(en > 0.0) {
        return Err(Error::Scaling("noise has zero energy at the reference channel".into()));
    }
    let gn = (es / (en * 10f64.powf(scene.noise_snr_db / 10.0))).sqrt();
    let noise_rows: Vec<Vec<f64>> = (0..n_mic).map(|c| noise.channel(c).iter().map(|v| v * gn).collect()).collect();
    let mix_rows: Vec<Vec<f64>> = (0..n_mic)
        .map(|c| {
            (0..len)
                .map(|t| images.iter().map(|im| im[c][t]).sum::<f64>() + noise_rows[c][t])
                .collect()
        })
        .collect();
    let wave = |rows| MultichannelWave::from_channels(rows, sample_rate);
    Ok(MixtureSample {
        mixture: wave(mix_rows)?,
        images: images.into_iter().map(wave).collect::<Result<_>>()?,
        noise: wave(noise_rows)?,
        scene: scene.clone(),
    })
}

/// Scene, sources and noise for one dataset item, all derived from `seed`.
pub fn generate_sample(seed: u64, len: usize, sample_rate: u32, opts: &SceneOptions) -> Result<MixtureSample> {
    let scene = sample_scene(seed, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_50u64);
    let fs = sample_rate as f64;
    let sources: Vec<Vec<f64>> = (0..opts.n_sources)
        .map(|_| synth_speech_like(rng.gen(), len, fs))
        .collect();
    let noise_rows = diffuse_noise(
        &scene.mic_positions,
        len,
        fs,
        scene.room.speed_of_sound,
        DIFFUSE_SOURCES,
        rng.gen(),
    );
    let noise = MultichannelWave::from_channels(noise_rows, sample_rate)?;
    synthesize(&scene, &sources, &noise, sample_rate)
}

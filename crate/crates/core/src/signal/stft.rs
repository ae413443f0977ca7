//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! The signal is zero-padded by `frame_length - hop` on both sides (and on
//! the right up to a whole number of hops) so every sample gets full window
//! coverage. Spectra are one-sided with `frame_length / 2 + 1` bins.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wave::MultichannelWave;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Hann analysis, rectangular synthesis.
    Hann,
    /// Square-root Hann for both analysis and synthesis.
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 512,
            hop: 128,
            window: Window::SqrtHann,
        }
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.frame_length - self.hop
    }

    pub fn n_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        (padded - self.frame_length).div_ceil(self.hop) + 1
    }

    fn padded_len(&self, len: usize) -> usize {
        (self.n_frames(len) - 1) * self.hop + self.frame_length
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => periodic_hann(self.frame_length),
            Window::SqrtHann => periodic_hann(self.frame_length)
                .into_iter()
                .map(f64::sqrt)
                .collect(),
        }
    }

    pub fn synthesis_window(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => vec![1.0; self.frame_length],
            Window::SqrtHann => periodic_hann(self.frame_length)
                .into_iter()
                .map(f64::sqrt)
                .collect(),
        }
    }

    /// Checks frame/hop sanity and the constant-overlap-add condition of the
    /// analysis·synthesis window product.
    pub fn validate(&self) -> Result<()> {
        let (n, hop) = (self.frame_length, self.hop);
        if n < 2 || n % 2 != 0 {
            return Err(Error::Config(format!(
                "frame_length must be even and ≥ 2, got {n}"
            )));
        }
        if hop == 0 || hop > n {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop ≤ frame_length, got {hop}"
            )));
        }
        let prod: Vec<f64> = self
            .analysis_window()
            .iter()
            .zip(self.synthesis_window())
            .map(|(a, s)| a * s)
            .collect();
        let sums: Vec<f64> = (0..hop)
            .map(|i| prod.iter().skip(i).step_by(hop).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / hop as f64;
        let dev = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        if mean <= 0.0 || dev > 1e-9 * mean {
            return Err(Error::Config(format!(
                "window {:?} with frame {n} and hop {hop} is not constant-overlap-add",
                self.window
            )));
        }
        Ok(())
    }
}

/// Precomputed windows and FFT plans for one [`StftConfig`].
#[derive(Clone)]
pub struct StftKernel {
    cfg: StftConfig,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftKernel").field("cfg", &self.cfg).finish()
    }
}

impl StftKernel {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            analysis: cfg.analysis_window(),
            synthesis: cfg.synthesis_window(),
            fwd: planner.plan_fft_forward(cfg.frame_length),
            inv: planner.plan_fft_inverse(cfg.frame_length),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.cfg.frame_length {
            return Err(Error::Length(format!(
                "signal of {len} samples is shorter than one {}-sample frame",
                self.cfg.frame_length
            )));
        }
        Ok(())
    }

    /// One channel → `[frames, bins]` complex, interleaved as `(re, im)`.
    pub(crate) fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let (n, hop, pad) = (self.cfg.frame_length, self.cfg.hop, self.cfg.pad());
        let frames = self.cfg.n_frames(x.len());
        let bins = self.cfg.n_bins();
        let mut padded = vec![0.0; self.cfg.padded_len(x.len())];
        padded[pad..pad + x.len()].copy_from_slice(x);
        let mut out = Vec::with_capacity(frames * bins * 2);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[t * hop + i] * self.analysis[i], 0.0);
            }
            self.fwd.process(&mut buf);
            for b in &buf[..bins] {
                out.push(b.re);
                out.push(b.im);
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian product of [`Self::forward`].
    pub(crate) fn forward_adjoint(&self, grad: &[f64], len: usize) -> Vec<f64> {
        let (n, hop, pad) = (self.cfg.frame_length, self.cfg.hop, self.cfg.pad());
        let frames = self.cfg.n_frames(len);
        let bins = self.cfg.n_bins();
        let mut gpad = vec![0.0; self.cfg.padded_len(len)];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let g = &grad[t * bins * 2..(t + 1) * bins * 2];
            for k in 0..bins {
                buf[k] = Complex64::new(g[2 * k], g[2 * k + 1]);
            }
            self.inv.process(&mut buf);
            for i in 0..n {
                gpad[t * hop + i] += self.analysis[i] * buf[i].re;
            }
        }
        gpad[pad..pad + len].to_vec()
    }

    fn overlap_norm(&self, len: usize) -> Vec<f64> {
        let (n, hop) = (self.cfg.frame_length, self.cfg.hop);
        let mut norm = vec![0.0; self.cfg.padded_len(len)];
        for t in 0..self.cfg.n_frames(len) {
            for i in 0..n {
                norm[t * hop + i] += self.analysis[i] * self.synthesis[i];
            }
        }
        norm
    }

    /// `[frames, bins]` interleaved complex → `len` samples.
    pub(crate) fn inverse(&self, spec: &[f64], len: usize) -> Result<Vec<f64>> {
        self.check_len(len)?;
        let (n, hop, pad) = (self.cfg.frame_length, self.cfg.hop, self.cfg.pad());
        let frames = self.cfg.n_frames(len);
        let bins = self.cfg.n_bins();
        if spec.len() != frames * bins * 2 {
            return Err(Error::Shape(format!(
                "spectrum has {} values, expected {frames} frames × {bins} bins",
                spec.len() / 2
            )));
        }
        let norm = self.overlap_norm(len);
        let mut ypad = vec![0.0; norm.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            let s = &spec[t * bins * 2..(t + 1) * bins * 2];
            buf[0] = Complex64::new(s[0], 0.0);
            buf[n / 2] = Complex64::new(s[2 * (n / 2)], 0.0);
            for k in 1..n / 2 {
                let z = Complex64::new(s[2 * k], s[2 * k + 1]);
                buf[k] = z;
                buf[n - k] = z.conj();
            }
            self.inv.process(&mut buf);
            for i in 0..n {
                ypad[t * hop + i] += self.synthesis[i] * buf[i].re * scale;
            }
        }
        Ok((pad..pad + len).map(|m| ypad[m] / norm[m]).collect())
    }

    /// Vector-Jacobian product of [`Self::inverse`].
    pub(crate) fn inverse_adjoint(&self, grad: &[f64], len: usize) -> Vec<f64> {
        let (n, hop, pad) = (self.cfg.frame_length, self.cfg.hop, self.cfg.pad());
        let frames = self.cfg.n_frames(len);
        let bins = self.cfg.n_bins();
        let norm = self.overlap_norm(len);
        let mut gpad = vec![0.0; norm.len()];
        for (i, g) in grad.iter().enumerate() {
            gpad[pad + i] = g / norm[pad + i];
        }
        let mut out = Vec::with_capacity(frames * bins * 2);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(self.synthesis[i] * gpad[t * hop + i], 0.0);
            }
            self.fwd.process(&mut buf);
            for (k, b) in buf[..bins].iter().enumerate() {
                let c = if k == 0 || k == n / 2 { scale } else { 2.0 * scale };
                out.push(c * b.re);
                out.push(c * b.im);
            }
        }
        out
    }
}

/// One-sided complex spectrogram, `[channels, frames, bins]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    channels: usize,
    frames: usize,
    n_bins: usize,
    signal_len: usize,
    config: StftConfig,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        bins: Vec<Complex64>,
        channels: usize,
        frames: usize,
        config: StftConfig,
        signal_len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let n_bins = config.n_bins();
        if bins.len() != channels * frames * n_bins {
            return Err(Error::Shape(format!(
                "{} bins do not form [{channels}, {frames}, {n_bins}]",
                bins.len()
            )));
        }
        if frames != config.n_frames(signal_len) {
            return Err(Error::Shape(format!(
                "{frames} frames inconsistent with a {signal_len}-sample signal"
            )));
        }
        Ok(Self {
            bins,
            channels,
            frames,
            n_bins,
            signal_len,
            config,
            sample_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }
    pub fn config(&self) -> &StftConfig {
        &self.config
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn get(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.bins[(c * self.frames + t) * self.n_bins + f]
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.frames * self.n_bins;
        &self.bins[c * n..(c + 1) * n]
    }

    /// Interleaved `(re, im)` copy, `[channels, frames, bins, 2]`.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.bins.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub(crate) fn from_interleaved(
        data: &[f64],
        channels: usize,
        config: StftConfig,
        signal_len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let bins = data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Self::new(
            bins,
            channels,
            config.n_frames(signal_len),
            config,
            signal_len,
            sample_rate,
        )
    }
}

/// Forward STFT of every channel.
pub fn stft(wave: &MultichannelWave, cfg: &StftConfig) -> Result<Spectrogram> {
    let kernel = StftKernel::new(*cfg)?;
    stft_with(&kernel, wave)
}

pub fn stft_with(kernel: &StftKernel, wave: &MultichannelWave) -> Result<Spectrogram> {
    let mut data = Vec::new();
    for c in 0..wave.channels() {
        data.extend(kernel.forward(wave.channel(c))?);
    }
    Spectrogram::from_interleaved(
        &data,
        wave.channels(),
        *kernel.config(),
        wave.len(),
        wave.sample_rate(),
    )
}

/// Overlap-add inverse of [`stft`].
pub fn istft(spec: &Spectrogram) -> Result<MultichannelWave> {
    let kernel = StftKernel::new(spec.config)?;
    let data = spec.to_interleaved();
    let per = spec.frames * spec.n_bins * 2;
    let mut out = Vec::with_capacity(spec.channels * spec.signal_len);
    for c in 0..spec.channels {
        out.extend(kernel.inverse(&data[c * per..(c + 1) * per], spec.signal_len)?);
    }
    MultichannelWave::new(spec.channels, out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_config_is_cola() {
        StftConfig::default().validate().unwrap();
        StftConfig {
            window: Window::Hann,
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn non_cola_hop_is_rejected() {
        let cfg = StftConfig {
            frame_length: 512,
            hop: 384,
            window: Window::SqrtHann,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let bad_hop = StftConfig { hop: 0, ..cfg };
        assert!(bad_hop.validate().is_err());
    }

    #[test]
    fn short_signal_is_a_length_error() {
        let w = MultichannelWave::mono(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(
            stft(&w, &StftConfig::default()),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn zero_in_zero_out() {
        let w = MultichannelWave::mono(vec![0.0; 2000], 8000).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert!(s.bins().iter().all(|z| z.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_reconstructs() {
        for (window, hop) in [(Window::SqrtHann, 128), (Window::Hann, 256), (Window::SqrtHann, 256)] {
            let cfg = StftConfig {
                frame_length: 512,
                hop,
                window,
            };
            let x = noise(3001, 7);
            let w = MultichannelWave::mono(x.clone(), 8000).unwrap();
            let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
            assert!(rel_err(back.samples(), &x) < 1e-6, "{window:?}/{hop}");
        }
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let k = 37;
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * k as f64 * n as f64 / cfg.frame_length as f64).cos())
            .collect();
        let s = stft(&MultichannelWave::mono(x, 8000).unwrap(), &cfg).unwrap();
        // Interior frames are fully inside the signal.
        let first = cfg.pad() / cfg.hop;
        for t in first..s.frames() - first - 1 {
            let mags: Vec<f64> = (0..s.n_bins()).map(|f| s.get(0, t, f).norm()).collect();
            let peak = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, k);
            // Σw/2 from the positive-frequency term; the mirrored term leaks
            // in from 2k bins away and is tiny.
            let wsum: f64 = cfg.analysis_window().iter().sum();
            assert!((mags[k] - wsum / 2.0).abs() < 1e-3 * wsum, "{} vs {}", mags[k], wsum / 2.0);
            let off_peak: f64 = mags.iter().enumerate().filter(|(f, _)| f.abs_diff(k) > 8).map(|(_, m)| m * m).sum();
            assert!(off_peak < 1e-4 * mags[k] * mags[k]);
        }
    }

    #[test]
    fn single_frame_impulse_synthesises_windowed_impulse() {
        // A linear-phase unit spectrum in one frame is δ[n − n0] in that frame;
        // synthesis windows it and divides by the overlap normaliser.
        let cfg = StftConfig::default();
        let kernel = StftKernel::new(cfg).unwrap();
        let (len, n, n0, t0) = (2048, cfg.frame_length, 100usize, 6usize);
        let frames = cfg.n_frames(len);
        let bins = cfg.n_bins();
        let mut spec = vec![0.0; frames * bins * 2];
        for k in 0..bins {
            let ph = -2.0 * PI * (k * n0) as f64 / n as f64;
            spec[(t0 * bins + k) * 2] = ph.cos();
            spec[(t0 * bins + k) * 2 + 1] = ph.sin();
        }
        let y = kernel.inverse(&spec, len).unwrap();
        let (ws, wa) = (cfg.synthesis_window(), cfg.analysis_window());
        let m = t0 * cfg.hop + n0;
        let norm: f64 = (0..frames)
            .filter(|t| m >= t * cfg.hop && m < t * cfg.hop + n)
            .map(|t| wa[m - t * cfg.hop] * ws[m - t * cfg.hop])
            .sum();
        let pos = m - cfg.pad();
        for (i, &v) in y.iter().enumerate() {
            let want = if i == pos { ws[n0] / norm } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "sample {i}: {v} vs {want}");
        }
    }

    #[test]
    fn parseval_matches_windowed_energy() {
        let cfg = StftConfig::default();
        let kernel = StftKernel::new(cfg).unwrap();
        let x = noise(2500, 3);
        let spec = kernel.forward(&x).unwrap();
        let bins = cfg.n_bins();
        let n = cfg.frame_length;
        let mut spec_energy = 0.0;
        for frame in spec.chunks(bins * 2) {
            for k in 0..bins {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                spec_energy += c * (frame[2 * k].powi(2) + frame[2 * k + 1].powi(2));
            }
        }
        spec_energy /= n as f64;
        let w = cfg.analysis_window();
        let mut padded = vec![0.0; (cfg.n_frames(x.len()) - 1) * cfg.hop + n];
        padded[cfg.pad()..cfg.pad() + x.len()].copy_from_slice(&x);
        let mut time_energy = 0.0;
        for t in 0..cfg.n_frames(x.len()) {
            for i in 0..n {
                time_energy += (w[i] * padded[t * cfg.hop + i]).powi(2);
            }
        }
        assert!((spec_energy - time_energy).abs() < 1e-6 * time_energy);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let cfg = StftConfig::default();
        let kernel = StftKernel::new(cfg).unwrap();
        let len = 1500;
        let x = noise(len, 11);
        let frames = cfg.n_frames(len);
        let g = noise(frames * cfg.n_bins() * 2, 12);
        let fx = kernel.forward(&x).unwrap();
        let lhs: f64 = fx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(kernel.forward_adjoint(&g, len)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let y = noise(len, 13);
        let ig = kernel.inverse(&g, len).unwrap();
        let lhs: f64 = ig.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.iter().zip(kernel.inverse_adjoint(&y, len)).map(|(a, b)| a * b).sum();
        // The inverse ignores the imaginary parts of DC and Nyquist, so the
        // identity holds exactly as a linear map on all inputs.
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn stft_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = StftConfig::default();
            let kernel = StftKernel::new(cfg).unwrap();
            let x = noise(1200, seed);
            let y = noise(1200, seed + 1);
            let comb: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let (fx, fy, fc) = (kernel.forward(&x).unwrap(), kernel.forward(&y).unwrap(), kernel.forward(&comb).unwrap());
            for i in 0..fc.len() {
                proptest::prop_assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
            }
            let ic = kernel.inverse(&fc, 1200).unwrap();
            let (ix, iy) = (kernel.inverse(&fx, 1200).unwrap(), kernel.inverse(&fy, 1200).unwrap());
            for i in 0..ic.len() {
                proptest::prop_assert!((ic[i] - (a * ix[i] + b * iy[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn round_trip_any_signal(seed in 0u64..10_000, len in 512usize..3000) {
            let x = noise(len, seed);
            let w = MultichannelWave::mono(x.clone(), 8000).unwrap();
            let back = istft(&stft(&w, &StftConfig::default()).unwrap()).unwrap();
            proptest::prop_assert!(rel_err(back.samples(), &x) < 1e-6);
        }
    }
}

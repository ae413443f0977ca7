//! Mask-based Souden MVDR beamforming on real or augmented arrays.
//!
//! Every public numeric function runs the same differentiable graph ops
//! used in training, on constant inputs, so an array of three real
//! microphones and one with a virtual channel share a single code path.

use std::sync::Arc;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Graph, Tensor, Var};
use crate::signal::{MultichannelWave, Spectrogram, StftConfig, StftKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfConfig {
    pub stft: StftConfig,
    pub mask_ceiling: f64,
    pub mask_eps: f64,
    /// Relative diagonal loading of the noise covariance.
    pub loading: f64,
    /// Souden traces below this magnitude give zero weights.
    pub trace_eps: f64,
    pub ref_channel: usize,
}

impl Default for BfConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mask_ceiling: 2.0,
            mask_eps: 1e-8,
            loading: 1e-6,
            trace_eps: 1e-10,
            ref_channel: 0,
        }
    }
}

impl BfConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !(self.mask_ceiling > 0.0) || !(self.mask_eps > 0.0) || !(self.loading >= 0.0) || !(self.trace_eps > 0.0) {
            return Err(Error::Config("beamformer constants must be positive".into()));
        }
        Ok(())
    }
}

/// Time-frequency masks, `[sources, frames, bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask {
    values: Vec<f64>,
    sources: usize,
    frames: usize,
    bins: usize,
}

impl TfMask {
    pub fn new(values: Vec<f64>, sources: usize, frames: usize, bins: usize, ceiling: f64) -> Result<Self> {
        if values.len() != sources * frames * bins {
            return Err(Error::Shape(format!(
                "{} mask values do not form [{sources}, {frames}, {bins}]",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=ceiling).contains(*v)) {
            return Err(Error::Data(format!("mask value {v} outside [0, {ceiling}]")));
        }
        Ok(Self {
            values,
            sources,
            frames,
            bins,
        })
    }

    pub fn sources(&self) -> usize {
        self.sources
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self, i: usize) -> &[f64] {
        let n = self.frames * self.bins;
        &self.values[i * n..(i + 1) * n]
    }

    fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.sources, self.frames, self.bins], self.values.clone()).expect("shape checked")
    }
}

/// Per-bin `C×C` Hermitian matrices, `[bins, C, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    matrices: Vec<Complex64>,
    bins: usize,
    channels: usize,
}

impl SpatialCovariance {
    pub const HERMITIAN_TOL: f64 = 1e-10;

    pub fn new(matrices: Vec<Complex64>, bins: usize, channels: usize) -> Result<Self> {
        if matrices.len() != bins * channels * channels {
            return Err(Error::Shape(format!(
                "{} entries do not form [{bins}, {channels}, {channels}]",
                matrices.len()
            )));
        }
        let scm = Self {
            matrices,
            bins,
            channels,
        };
        let err = scm.hermitian_error();
        if err > Self::HERMITIAN_TOL {
            return Err(Error::Data(format!("covariance is not Hermitian (max |Φ − Φᴴ| = {err:e})")));
        }
        Ok(scm)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn matrices(&self) -> &[Complex64] {
        &self.matrices
    }

    pub fn get(&self, f: usize, a: usize, b: usize) -> Complex64 {
        self.matrices[(f * self.channels + a) * self.channels + b]
    }

    /// `max |Φ − Φᴴ|` over all bins and entries.
    pub fn hermitian_error(&self) -> f64 {
        let c = self.channels;
        let mut worst: f64 = 0.0;
        for f in 0..self.bins {
            for a in 0..c {
                for b in 0..c {
                    worst = worst.max((self.get(f, a, b) - self.get(f, b, a).conj()).norm());
                }
            }
        }
        worst
    }

    fn tensor(&self) -> Tensor {
        let data = self.matrices.iter().flat_map(|z| [z.re, z.im]).collect();
        Tensor::new(vec![self.bins, self.channels, self.channels, 2], data).expect("shape checked")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let [bins, c, _, 2] = *t.shape() else {
            return Err(Error::Shape("covariance tensor must be [K, C, C, 2]".into()));
        };
        let m = t.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Self::new(m, bins, c)
    }
}

/// Speech and noise covariances for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmPair {
    pub speech: SpatialCovariance,
    pub noise: SpatialCovariance,
    /// Bins where a mask summed to zero and the unmasked average was used.
    pub fallback_bins: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Real,
    Virtual,
}

/// Array signal with per-channel provenance. Channel order follows the
/// physical line: [ch4, ch5, ch6].
#[derive(Debug, Clone)]
pub struct AugmentedArray {
    pub wave: MultichannelWave,
    pub provenance: Vec<ChannelKind>,
}

impl AugmentedArray {
    /// `[r₀, v̂, r₁]` from two real channels and one estimated channel.
    pub fn with_virtual(r: &MultichannelWave, v_hat: &MultichannelWave) -> Result<Self> {
        if r.channels() != 2 || v_hat.channels() != 1 || r.len() != v_hat.len() {
            return Err(Error::Shape(format!(
                "augmented array needs 2 real and 1 virtual channel of equal length, got {}×{} and {}×{}",
                r.channels(),
                r.len(),
                v_hat.channels(),
                v_hat.len()
            )));
        }
        let rows = vec![r.channel(0).to_vec(), v_hat.channel(0).to_vec(), r.channel(1).to_vec()];
        Ok(Self {
            wave: MultichannelWave::from_channels(rows, r.sample_rate())?,
            provenance: vec![ChannelKind::Real, ChannelKind::Virtual, ChannelKind::Real],
        })
    }

    pub fn real(wave: MultichannelWave) -> Self {
        let provenance = vec![ChannelKind::Real; wave.channels()];
        Self { wave, provenance }
    }
}

/// Souden weights per bin, `[bins, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvdrWeights {
    pub weights: Vec<Complex64>,
    pub bins: usize,
    pub channels: usize,
    /// Bins whose trace fell below the threshold; their weights are zero.
    pub degenerate_bins: Vec<usize>,
}

impl MvdrWeights {
    pub fn get(&self, f: usize, c: usize) -> Complex64 {
        self.weights[f * self.channels + c]
    }

    fn tensor(&self) -> Tensor {
        let data = self.weights.iter().flat_map(|z| [z.re, z.im]).collect();
        Tensor::new(vec![self.bins, self.channels, 2], data).expect("shape checked")
    }
}

fn spec_tensor(spec: &Spectrogram) -> Tensor {
    Tensor::new(vec![spec.channels(), spec.frames(), spec.n_bins(), 2], spec.to_interleaved()).expect("spectrogram shape")
}

fn to_complex(t: &Tensor) -> Vec<Complex64> {
    t.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// `min(|sep_i| / (|obs| + ε), ceiling)` for a single-channel observation
/// and one spectrogram channel per source.
pub fn magnitude_ratio_masks(obs: &Spectrogram, seps: &Spectrogram, cfg: &BfConfig) -> Result<TfMask> {
    if obs.channels() != 1 {
        return Err(Error::Shape(format!("mask observation must be single-channel, got {}", obs.channels())));
    }
    if obs.frames() != seps.frames() || obs.n_bins() != seps.n_bins() {
        return Err(Error::Shape(format!(
            "mask: observation {}×{} vs separated {}×{}",
            obs.frames(),
            obs.n_bins(),
            seps.frames(),
            seps.n_bins()
        )));
    }
    let mut g = Graph::new();
    let o = g.constant(spec_tensor(obs));
    let s = g.constant(spec_tensor(seps));
    let m = g.magnitude_ratio_mask(s, o, cfg.mask_eps, cfg.mask_ceiling)?;
    TfMask::new(g.value(m).data().to_vec(), seps.channels(), seps.frames(), seps.n_bins(), cfg.mask_ceiling)
}

fn covariances(g: &mut Graph, y: Var, mask: Var) -> Result<(Var, Var, Vec<usize>)> {
    let (phi_s, mut fb) = g.masked_covariance(y, mask)?;
    let comp = g.complement_mask(mask);
    let (phi_n, fb_n) = g.masked_covariance(y, comp)?;
    fb.extend(fb_n);
    fb.sort_unstable();
    fb.dedup();
    Ok((phi_s, phi_n, fb))
}

/// Speech and noise covariances per source, the noise side weighted by the
/// complement mask `clamp(1 − m, 0, 1)`.
pub fn estimate_scm(spec: &Spectrogram, mask: &TfMask) -> Result<Vec<ScmPair>> {
    if spec.frames() != mask.frames() || spec.n_bins() != mask.bins() {
        return Err(Error::Shape(format!(
            "scm: spectrogram {}×{} vs mask {}×{}",
            spec.frames(),
            spec.n_bins(),
            mask.frames(),
            mask.bins()
        )));
    }
    let mut g = Graph::new();
    let y = g.constant(spec_tensor(spec));
    let masks = g.constant(mask.tensor());
    let mut out = Vec::with_capacity(mask.sources());
    for i in 0..mask.sources() {
        let m = source_mask(&mut g, masks, i)?;
        let (s, n, fallback_bins) = covariances(&mut g, y, m)?;
        if !fallback_bins.is_empty() {
            warn!("source {i}: {} bins with an all-zero mask use the unmasked covariance", fallback_bins.len());
        }
        out.push(ScmPair {
            speech: SpatialCovariance::from_tensor(g.value(s))?,
            noise: SpatialCovariance::from_tensor(g.value(n))?,
            fallback_bins,
        });
    }
    Ok(out)
}

fn source_mask(g: &mut Graph, masks: Var, i: usize) -> Result<Var> {
    let [_, frames, bins] = *g.shape(masks) else {
        return Err(Error::Shape("masks must be [I, frames, bins]".into()));
    };
    let row = g.rows(masks, i, 1)?;
    g.reshape(row, vec![frames, bins])
}

/// `w = Φ_N⁻¹Φ_S u / tr(Φ_N⁻¹Φ_S)` after relative loading of `Φ_N`.
fn souden(g: &mut Graph, phi_s: Var, phi_n: Var, cfg: &BfConfig) -> Result<(Var, Vec<usize>)> {
    let loaded = g.diagonal_loading(phi_n, cfg.loading)?;
    let inv = g.cinv(loaded, true)?;
    let prod = g.cmatmul(inv, phi_s)?;
    let tr = g.ctrace(prod)?;
    let col = g.ccolumn(prod, cfg.ref_channel)?;
    g.cdiv_safe(col, tr, cfg.trace_eps)
}

pub fn mvdr_souden(scm: &ScmPair, cfg: &BfConfig) -> Result<MvdrWeights> {
    let (bins, c) = (scm.speech.bins(), scm.speech.channels());
    if scm.noise.bins() != bins || scm.noise.channels() != c {
        return Err(Error::Shape("speech and noise covariances differ in shape".into()));
    }
    if cfg.ref_channel >= c {
        return Err(Error::Config(format!("reference channel {} of {c}", cfg.ref_channel)));
    }
    let mut g = Graph::new();
    let s = g.constant(scm.speech.tensor());
    let n = g.constant(scm.noise.tensor());
    let (w, degenerate_bins) = souden(&mut g, s, n, cfg)?;
    Ok(MvdrWeights {
        weights: to_complex(g.value(w)),
        bins,
        channels: c,
        degenerate_bins,
    })
}

/// `x̂(t,f) = w(f)ᴴ y(t,f)`, single-channel output.
pub fn apply_bf(weights: &MvdrWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    let mut g = Graph::new();
    let w = g.constant(weights.tensor());
    let y = g.constant(spec_tensor(spec));
    let x = g.apply_weights(w, y)?;
    let bins = to_complex(g.value(x));
    Spectrogram::new(bins, 1, spec.frames(), *spec.config(), spec.signal_len(), spec.sample_rate())
}

/// Diagnostics from one beamforming pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BfReport {
    pub fallback_bins: Vec<Vec<usize>>,
    pub degenerate_bins: Vec<Vec<usize>>,
}

impl Graph {
    /// Full mask-based beamformer on a time-domain array `y: [C, T]` with
    /// masks `[I, frames, bins]`, giving one time-domain output per source,
    /// `[I, T]`.
    pub fn mask_bf(&mut self, y: Var, masks: Var, kernel: &Arc<StftKernel>, cfg: &BfConfig) -> Result<(Var, BfReport)> {
        let [c, len] = *self.shape(y) else {
            return Err(Error::Shape("beamformer input must be [C, T]".into()));
        };
        if cfg.ref_channel >= c {
            return Err(Error::Config(format!("reference channel {} of {c}", cfg.ref_channel)));
        }
        let spec = self.stft(y, kernel)?;
        let n_src = self.shape(masks)[0];
        let mut outs = Vec::with_capacity(n_src);
        let mut report = BfReport::default();
        for i in 0..n_src {
            let m = source_mask(self, masks, i)?;
            let (s, n, fb) = covariances(self, spec, m)?;
            let (w, deg) = souden(self, s, n, cfg)?;
            let x = self.apply_weights(w, spec)?;
            outs.push(self.istft(x, kernel, len)?);
            report.fallback_bins.push(fb);
            report.degenerate_bins.push(deg);
        }
        Ok((self.concat_rows(&outs)?, report))
    }
}

/// Beamforms `array` for every source mask; returns one waveform per source.
pub fn beamform(array: &MultichannelWave, masks: &TfMask, cfg: &BfConfig) -> Result<(MultichannelWave, BfReport)> {
    let kernel = Arc::new(StftKernel::new(cfg.stft)?);
    let mut g = Graph::new();
    let y = g.constant(Tensor::new(vec![array.channels(), array.len()], array.samples().to_vec())?);
    let m = g.constant(masks.tensor());
    let (x, report) = g.mask_bf(y, m, &kernel, cfg)?;
    let out = MultichannelWave::new(masks.sources(), g.value(x).data().to_vec(), array.sample_rate())?;
    Ok((out, report))
}

//! Speech-like test signals: voiced syllables with a drifting pitch and
//! formant-shaped harmonics, fricative noise bursts, and pauses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Voice {
    f0: f64,
    formant_scale: f64,
    breathiness: f64,
}

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];

fn formant_gain(f: f64, formants: &[f64; 3], scale: f64) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(j, &fc)| {
            let fc = fc * scale;
            let bw = 60.0 + 0.06 * fc;
            let a = 1.0 / (1.0 + j as f64);
            a / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum()
}

fn envelope(n: usize, len: usize) -> f64 {
    // Raised-cosine attack and release, flat middle.
    let ramp = (len / 4).max(1);
    let x = if n < ramp {
        n as f64 / ramp as f64
    } else if n + ramp > len {
        (len - n) as f64 / ramp as f64
    } else {
        1.0
    };
    0.5 - 0.5 * (PI * x).cos()
}

fn voiced(out: &mut [f64], fs: f64, voice: &Voice, rng: &mut ChaCha8Rng) {
    let len = out.len();
    let from = VOWELS[rng.gen_range(0..VOWELS.len())];
    let to = VOWELS[rng.gen_range(0..VOWELS.len())];
    let glide = voice.f0 * rng.gen_range(-0.15..0.15);
    let vib_rate = rng.gen_range(3.0..6.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let level = rng.gen_range(0.5..1.0);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let max_h = ((fs / 2.0 - 200.0) / (voice.f0 * 0.8)).floor() as usize;
    // Harmonic gains are refreshed every block: formants move slowly.
    const BLOCK: usize = 64;
    let mut gains = vec![0.0; max_h + 1];
    for n in 0..len {
        let t = n as f64 / fs;
        let frac = n as f64 / len as f64;
        let f0 = voice.f0 + glide * frac + 0.03 * voice.f0 * (2.0 * PI * vib_rate * t + vib_phase).sin();
        if n % BLOCK == 0 {
            let mut formants = [0.0; 3];
            for j in 0..3 {
                formants[j] = from[j] + (to[j] - from[j]) * frac;
            }
            for (h, g) in gains.iter_mut().enumerate().skip(1) {
                let f = h as f64 * f0;
                *g = if f < fs / 2.0 - 100.0 {
                    formant_gain(f, &formants, voice.formant_scale)
                } else {
                    0.0
                };
            }
        }
        phase += 2.0 * PI * f0 / fs;
        let mut s = 0.0;
        for (h, g) in gains.iter().enumerate().skip(1) {
            if *g != 0.0 {
                s += g * (h as f64 * phase).sin();
            }
        }
        let noise: f64 = StandardNormal.sample(rng);
        out[n] += level * envelope(n, len) * (s + voice.breathiness * noise);
    }
}

fn fricative(out: &mut [f64], fs: f64, rng: &mut ChaCha8Rng) {
    // Two-pole resonator driven by white noise.
    let fc = rng.gen_range(1800.0..3600.0f64.min(fs / 2.0 - 200.0));
    let r: f64 = 0.9;
    let c1 = 2.0 * r * (2.0 * PI * fc / fs).cos();
    let c2 = -r * r;
    let level = rng.gen_range(0.1..0.3);
    let (mut y1, mut y2) = (0.0, 0.0);
    let len = out.len();
    for n in 0..len {
        let e: f64 = StandardNormal.sample(rng);
        let y = e + c1 * y1 + c2 * y2;
        y2 = y1;
        y1 = y;
        out[n] += level * envelope(n, len) * y;
    }
}

/// Unit-RMS speech-like signal of `len` samples, deterministic in `seed`.
pub fn synth_speech_like(seed: u64, len: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = Voice {
        f0: rng.gen_range(85.0..255.0),
        formant_scale: rng.gen_range(0.85..1.2),
        breathiness: rng.gen_range(0.01..0.05),
    };
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.0..0.15) * fs) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.08..0.3) * fs) as usize;
        let end = (pos + dur).min(len);
        if rng.gen_bool(0.75) {
            voiced(&mut out[pos..end], fs, &voice, &mut rng);
        } else {
            fricative(&mut out[pos..end], fs, &mut rng);
        }
        pos = end;
        if rng.gen_bool(0.35) {
            pos += (rng.gen_range(0.05..0.25) * fs) as usize;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    } else if len > 0 {
        out[0] = (len as f64).sqrt();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    fn xcorr_peak(a: &[f64], b: &[f64]) -> f64 {
        let n = (a.len() + b.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fa.resize(n, Complex64::new(0.0, 0.0));
        let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fb.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut fa);
        fwd.process(&mut fb);
        let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
        inv.process(&mut prod);
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prod.iter().map(|c| c.re.abs() / n as f64).fold(0.0, f64::max) / (na * nb)
    }

    #[test]
    fn deterministic_and_unit_rms() {
        let a = synth_speech_like(7, 16000, 8000.0);
        let b = synth_speech_like(7, 16000, 8000.0);
        assert_eq!(a, b);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn different_seeds_are_weakly_correlated() {
        let mut worst: f64 = 0.0;
        for pair in 0..100u64 {
            let a = synth_speech_like(2 * pair, 16000, 8000.0);
            let b = synth_speech_like(2 * pair + 1, 16000, 8000.0);
            worst = worst.max(xcorr_peak(&a, &b));
        }
        assert!(worst < 0.3, "peak normalized cross-correlation {worst}");
    }
}

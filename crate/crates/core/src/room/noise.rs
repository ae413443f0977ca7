//! Spherically isotropic noise from far-field plane waves.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::rir::Position;

pub const DIFFUSE_SOURCES: usize = 64;

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// `len` samples of diffuse noise at each microphone: `n_sources`
/// independent white plane waves from uniformly random directions, delayed
/// in the frequency domain. One row per microphone.
pub fn diffuse_noise(
    mics: &[Position],
    len: usize,
    fs: f64,
    speed_of_sound: f64,
    n_sources: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len.max(1);
    let mut centre = [0.0; 3];
    for m in mics {
        for a in 0..3 {
            centre[a] += m[a] / mics.len() as f64;
        }
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); n]; mics.len()];
    for _ in 0..n_sources {
        let u = random_direction(&mut rng);
        let mut s: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
            .collect();
        fwd.process(&mut s);
        for (mi, m) in mics.iter().enumerate() {
            // A wave travelling along −u reaches p earlier by u·p / c.
            let proj: f64 = (0..3).map(|a| u[a] * (m[a] - centre[a])).sum();
            let tau = -proj / speed_of_sound * fs;
            for k in 0..n {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let ph = -2.0 * PI * kk * tau / n as f64;
                let mut val = s[k] * Complex64::from_polar(1.0, ph);
                if n % 2 == 0 && k == n / 2 {
                    val = Complex64::new(s[k].re * ph.cos(), 0.0);
                }
                acc[mi][k] += val;
            }
        }
    }
    acc.into_iter()
        .map(|mut spec| {
            inv.process(&mut spec);
            spec.iter().take(len).map(|c| c.re / n as f64).collect()
        })
        .collect()
}

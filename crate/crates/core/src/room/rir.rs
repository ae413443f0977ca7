//! Shoebox image-source room impulse responses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = [f64; 3];

/// Half-width of the windowed-sinc fractional delay (81 taps in total).
pub const SINC_HALF_WIDTH: usize = 40;

/// Rooms sampled for simulation, with Sabine reverberation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    /// Seconds; 0 means anechoic.
    pub t60: f64,
    pub speed_of_sound: f64,
}

impl RoomSpec {
    pub fn new(width: f64, depth: f64, height: f64, t60: f64) -> Result<Self> {
        let room = Self {
            width,
            depth,
            height,
            t60,
            speed_of_sound: 343.0,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_wd = |v: f64| (2.5..=10.0).contains(&v);
        if !ok_wd(self.width) || !ok_wd(self.depth) || !(2.5..=5.0).contains(&self.height) {
            return Err(Error::Config(format!(
                "room {}×{}×{} m outside 2.5–10 × 2.5–10 × 2.5–5 m",
                self.width, self.depth, self.height
            )));
        }
        if !(0.0..=0.3).contains(&self.t60) {
            return Err(Error::Config(format!("t60 {} s outside 0–0.3 s", self.t60)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::Config("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.width, self.depth, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.width * self.depth * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.width * self.depth + self.width * self.height + self.depth * self.height)
    }

    /// Uniform wall absorption implied by Sabine's formula.
    pub fn sabine_absorption(&self) -> f64 {
        if self.t60 == 0.0 {
            return 1.0;
        }
        24.0 * std::f64::consts::LN_10 * self.volume()
            / (self.speed_of_sound * self.surface() * self.t60)
    }

    /// Fails when the requested t60 would need Sabine absorption above one.
    pub fn check_achievable(&self) -> Result<()> {
        let a = self.sabine_absorption();
        if a > 1.0 {
            return Err(Error::Config(format!(
                "t60 {} s is unachievable in a {:.1} m³ room (Sabine absorption {a:.3} > 1)",
                self.t60,
                self.volume()
            )));
        }
        Ok(())
    }

    /// Sabine pressure reflection coefficient `√(1 − a)`; zero when anechoic.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        self.check_achievable()?;
        Ok((1.0 - self.sabine_absorption()).max(0.0).sqrt())
    }

    pub fn contains(&self, p: &Position, clearance: f64) -> bool {
        p.iter()
            .zip(self.dims())
            .all(|(&v, d)| v > clearance && v < d - clearance)
    }
}

/// An image source: position and number of wall reflections.
#[derive(Debug, Clone, Copy)]
struct Image {
    pos: Position,
    order: u32,
}

/// Reverberation time from an energy sequence: Schroeder backward
/// integration, least-squares line between −5 and −35 dB, extrapolated to
/// −60 dB. `None` when the curve never spans that range.
pub fn schroeder_t60(energy: &[f64], dt: f64) -> Option<f64> {
    let mut edc = energy.to_vec();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let e0 = *edc.first()?;
    if !(e0 > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .map(|(i, &e)| (i as f64 * dt, 10.0 * (e / e0).log10()))
        .filter(|&(_, db)| (-35.0..=-5.0).contains(&db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

fn dist(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Images within `reach` of any of `near`, up to `max_order` reflections.
fn image_sources(room: &RoomSpec, src: &Position, reach: f64, max_order: usize, near: &[Position]) -> Vec<Image> {
    let dims = room.dims();
    let mut out = Vec::new();
    let n_range: Vec<i64> = dims
        .iter()
        .map(|d| (reach / (2.0 * d)).ceil() as i64 + 1)
        .collect();
    for nx in -n_range[0]..=n_range[0] {
        for ny in -n_range[1]..=n_range[1] {
            for nz in -n_range[2]..=n_range[2] {
                let n = [nx, ny, nz];
                for parity in 0..8u8 {
                    let mut pos = [0.0; 3];
                    let mut order = 0usize;
                    for axis in 0..3 {
                        let p = ((parity >> axis) & 1) as i64;
                        pos[axis] = (1 - 2 * p) as f64 * src[axis] + 2.0 * n[axis] as f64 * dims[axis];
                        order += ((n[axis] - p).abs() + n[axis].abs()) as usize;
                    }
                    if order > max_order {
                        continue;
                    }
                    if order > 0 && near.iter().all(|m| dist(&pos, m) > reach) {
                        continue;
                    }
                    out.push(Image {
                        pos,
                        order: order as u32,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
fn windowed_sinc(x: f64) -> f64 {
    let half = SINC_HALF_WIDTH as f64 + 1.0;
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (PI * x / half).cos());
    let s = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    w * s
}

/// Adds `amp · δ(n − delay)` with windowed-sinc interpolation, dropping taps
/// outside the buffer. Equal to summing [`windowed_sinc`] per tap, with the
/// sine and window evaluated by recurrence.
fn add_fractional_impulse(h: &mut [f64], delay: f64, amp: f64) {
    let centre = delay.round() as i64;
    let lo = (centre - SINC_HALF_WIDTH as i64).max(0);
    let hi = (centre + SINC_HALF_WIDTH as i64).min(h.len() as i64 - 1);
    if lo > hi {
        return;
    }
    let half = SINC_HALF_WIDTH as f64 + 1.0;
    // With n = centre + k and delay = centre + f, sin(π(k − f)) = −(−1)^k sin(πf).
    let f = delay - centre as f64;
    let s0 = -(PI * f).sin();
    let x0 = (lo - centre) as f64 - f;
    let (mut c, mut sn) = ((PI * x0 / half).cos(), (PI * x0 / half).sin());
    let (dc, ds) = ((PI / half).cos(), (PI / half).sin());
    let mut sign = if (lo - centre) % 2 == 0 { 1.0 } else { -1.0 };
    for n in lo..=hi {
        let x = (n - centre) as f64 - f;
        let sinc = if x == 0.0 { 1.0 } else { sign * s0 / (PI * x) };
        h[n as usize] += amp * 0.5 * (1.0 + c) * sinc;
        (c, sn) = (c * dc - sn * ds, sn * dc + c * ds);
        sign = -sign;
    }
}

/// Second-order 100 Hz high-pass from Allen and Berkley, removing the DC
/// build-up of same-sign image contributions.
fn allen_berkley_highpass(h: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y0, mut y1) = (0.0, 0.0);
    for v in h.iter_mut() {
        let y2 = y1;
        y1 = y0;
        y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
    }
}

/// Length in samples of simulated responses for `room` at `fs`, given the
/// largest direct-path distance they must hold.
fn rir_len(room: &RoomSpec, fs: f64, direct: f64) -> usize {
    let span = (1.5 * room.t60).max(direct / room.speed_of_sound);
    (span * fs).ceil() as usize + SINC_HALF_WIDTH + 2
}

/// Impulse responses from one source to several microphones, sharing the
/// image-source set. `max_order: None` picks the order from the t60.
pub fn image_method_rirs(
    room: &RoomSpec,
    src: &Position,
    mics: &[Position],
    fs: f64,
    max_order: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if !(fs > 0.0) {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    if !room.contains(src, 0.0) || mics.iter().any(|m| !room.contains(m, 0.0)) {
        return Err(Error::Geometry("source and microphones must lie strictly inside the room".into()));
    }
    let direct: Vec<f64> = mics.iter().map(|m| dist(src, m)).collect();
    if direct.iter().any(|&d| d < 1e-6) {
        return Err(Error::Geometry("source coincides with a microphone".into()));
    }
    let beta = room.reflection_coefficient()?;
    rirs_with_reflection(room, beta, src, mics, fs, max_order)
}

/// As [`image_method_rirs`] with a precomputed reflection coefficient.
pub fn rirs_with_reflection(
    room: &RoomSpec,
    beta: f64,
    src: &Position,
    mics: &[Position],
    fs: f64,
    max_order: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if !(fs > 0.0) {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    if !room.contains(src, 0.0) || mics.iter().any(|m| !room.contains(m, 0.0)) {
        return Err(Error::Geometry("source and microphones must lie strictly inside the room".into()));
    }
    let direct: Vec<f64> = mics.iter().map(|m| dist(src, m)).collect();
    if direct.iter().any(|&d| d < 1e-6) {
        return Err(Error::Geometry("source coincides with a microphone".into()));
    }
    let far = direct.iter().cloned().fold(0.0, f64::max);
    let len = rir_len(room, fs, far);
    let reach = (len - SINC_HALF_WIDTH - 2) as f64 / fs * room.speed_of_sound;
    let order = if beta == 0.0 { 0 } else { max_order.unwrap_or(usize::MAX) };
    let images = image_sources(room, src, reach, order, mics);
    let c = room.speed_of_sound;
    let mut out = Vec::with_capacity(mics.len());
    for (mi, mic) in mics.iter().enumerate() {
        let mut h = vec![0.0; len];
        for img in &images {
            let d = dist(&img.pos, mic);
            if d > reach && d > direct[mi] {
                continue;
            }
            let gain = beta.powi(img.order as i32);
            add_fractional_impulse(&mut h, d / c * fs, gain / (4.0 * PI * d));
        }
        if beta > 0.0 {
            allen_berkley_highpass(&mut h, fs);
        }
        out.push(h);
    }
    Ok(out)
}

/// Impulse response from `src` to `mic`.
pub fn image_method_rir(room: &RoomSpec, src: &Position, mic: &Position, fs: f64, max_order: Option<usize>) -> Result<Vec<f64>> {
    Ok(image_method_rirs(room, src, std::slice::from_ref(mic), fs, max_order)?.remove(0))
}

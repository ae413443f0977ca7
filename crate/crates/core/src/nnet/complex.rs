//! Differentiable spectral and complex linear-algebra operations.
//!
//! Complex tensors carry a trailing `(re, im)` axis. For a real loss `L`
//! the stored gradient of a complex entry `z` is `∂L/∂Re z + i ∂L/∂Im z`,
//! which turns every vector-Jacobian product into ordinary complex algebra:
//! for `Z = A·B` the parent gradients are `G·Bᴴ` and `Aᴴ·G`, for `Z = A⁻¹`
//! it is `−Zᴴ·G·Zᴴ`.

use std::sync::Arc;

use num_complex::Complex64;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::signal::StftKernel;

pub(crate) fn to_complex(data: &[f64]) -> Vec<Complex64> {
    data.chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

pub(crate) fn to_interleaved(data: &[Complex64]) -> Vec<f64> {
    data.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// `[m, n] · [n, p]`.
pub(crate) fn cmatmul_raw(a: &[Complex64], b: &[Complex64], m: usize, n: usize, p: usize) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); m * p];
    for i in 0..m {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..p {
                c[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    c
}

/// Conjugate transpose of `[m, n]`.
pub(crate) fn cherm_t(a: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j].conj();
        }
    }
    t
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky,
/// `None` when the factorisation breaks down.
pub(crate) fn cholesky_inverse(a: &[Complex64], n: usize) -> Option<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    let mut l = vec![zero; n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / ljj;
        }
    }
    // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᴴ L⁻¹.
    let mut linv = vec![zero; n * n];
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { Complex64::new(1.0, 0.0) } else { zero };
            for k in col..i {
                s -= l[i * n + k] * linv[k * n + col];
            }
            linv[i * n + col] = s / l[i * n + i];
        }
    }
    let linv_h = cherm_t(&linv, n, n);
    Some(cmatmul_raw(&linv_h, &linv, n, n, n))
}

/// General inverse by Gauss-Jordan elimination with partial pivoting.
pub(crate) fn gauss_jordan_inverse(a: &[Complex64], n: usize) -> Option<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    let mut m = a.to_vec();
    let mut inv = vec![zero; n * n];
    for i in 0..n {
        inv[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x * n + col].norm().total_cmp(&m[y * n + col].norm()))?;
        if m[piv * n + col].norm() <= 1e-300_f64.max(scale * 1e-15) {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let p = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == zero {
                continue;
            }
            for j in 0..n {
                let (mc, ic) = (m[col * n + j], inv[col * n + j]);
                m[r * n + j] -= f * mc;
                inv[r * n + j] -= f * ic;
            }
        }
    }
    Some(inv)
}

fn is_hermitian(a: &[Complex64], n: usize) -> bool {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    (0..n).all(|i| (0..n).all(|j| (a[i * n + j] - a[j * n + i].conj()).norm() <= 1e-12 * scale))
}

fn complex_dims(shape: &[usize], rank: usize, what: &str) -> Result<Vec<usize>> {
    if shape.len() != rank + 1 || shape[rank] != 2 {
        return Err(Error::Shape(format!(
            "{what}: expected complex rank-{rank} tensor ([..., 2]), got {shape:?}"
        )));
    }
    Ok(shape[..rank].to_vec())
}

/// Denominator floor below which a mask column counts as empty.
pub const MASK_SUM_FLOOR: f64 = 1e-10;

impl Graph {
    /// STFT of each row of `[C, T]` → `[C, frames, bins, 2]`.
    pub fn stft(&mut self, x: Var, kernel: &Arc<StftKernel>) -> Result<Var> {
        let [c, t] = *self.shape(x) else {
            return Err(Error::Shape("stft expects [C, T]".into()));
        };
        let cfg = *kernel.config();
        let (frames, bins) = (cfg.n_frames(t.max(cfg.frame_length)), cfg.n_bins());
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * frames * bins * 2);
        for ch in 0..c {
            out.extend(kernel.forward(&xd[ch * t..(ch + 1) * t])?);
        }
        let kernel = Arc::clone(kernel);
        let per = frames * bins * 2;
        Ok(self.op(
            Tensor::from_parts(vec![c, frames, bins, 2], out),
            &[x],
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(c * t);
                for ch in 0..c {
                    g.extend(kernel.forward_adjoint(&ctx.grad[ch * per..(ch + 1) * per], t));
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Overlap-add synthesis of `[C, frames, bins, 2]` → `[C, len]`.
    pub fn istft(&mut self, spec: Var, kernel: &Arc<StftKernel>, len: usize) -> Result<Var> {
        let dims = complex_dims(self.shape(spec), 3, "istft")?;
        let (c, frames, bins) = (dims[0], dims[1], dims[2]);
        let cfg = kernel.config();
        if frames != cfg.n_frames(len.max(cfg.frame_length)) || bins != cfg.n_bins() {
            return Err(Error::Shape(format!(
                "istft: [{c}, {frames}, {bins}] does not match a {len}-sample signal"
            )));
        }
        let per = frames * bins * 2;
        let sd = self.value(spec).data();
        let mut out = Vec::with_capacity(c * len);
        for ch in 0..c {
            out.extend(kernel.inverse(&sd[ch * per..(ch + 1) * per], len)?);
        }
        let kernel = Arc::clone(kernel);
        Ok(self.op(
            Tensor::from_parts(vec![c, len], out),
            &[spec],
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(c * per);
                for ch in 0..c {
                    g.extend(kernel.inverse_adjoint(&ctx.grad[ch * len..(ch + 1) * len], len));
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `min(|sep_i| / (|obs| + eps), ceiling)` for `sep: [I, F, K, 2]`,
    /// `obs: [1, F, K, 2]` → `[I, F, K]`.
    pub fn magnitude_ratio_mask(&mut self, sep: Var, obs: Var, eps: f64, ceiling: f64) -> Result<Var> {
        let sd = complex_dims(self.shape(sep), 3, "mask sep")?;
        let od = complex_dims(self.shape(obs), 3, "mask obs")?;
        if od[0] != 1 || sd[1..] != od[1..] {
            return Err(Error::Shape(format!(
                "mask: separated {sd:?} vs observed {od:?}"
            )));
        }
        let (i_n, tf) = (sd[0], sd[1] * sd[2]);
        let s = self.value(sep).data();
        let o = self.value(obs).data();
        let mut out = vec![0.0; i_n * tf];
        for i in 0..i_n {
            for p in 0..tf {
                let q = i * tf + p;
                let sm = s[2 * q].hypot(s[2 * q + 1]);
                let om = o[2 * p].hypot(o[2 * p + 1]);
                out[q] = (sm / (om + eps)).min(ceiling);
            }
        }
        Ok(self.op(
            Tensor::from_parts(vec![i_n, sd[1], sd[2]], out),
            &[sep, obs],
            Box::new(move |ctx| {
                let s = ctx.inputs[0].data();
                let o = ctx.inputs[1].data();
                let mut gs = vec![0.0; s.len()];
                let mut go = vec![0.0; o.len()];
                for i in 0..i_n {
                    for p in 0..tf {
                        let q = i * tf + p;
                        let sm = s[2 * q].hypot(s[2 * q + 1]);
                        let om = o[2 * p].hypot(o[2 * p + 1]);
                        let den = om + eps;
                        if sm / den >= ceiling {
                            continue;
                        }
                        let g = ctx.grad[q];
                        if sm > 0.0 {
                            gs[2 * q] = g * s[2 * q] / (sm * den);
                            gs[2 * q + 1] = g * s[2 * q + 1] / (sm * den);
                        }
                        if om > 0.0 {
                            let k = -g * sm / (den * den * om);
                            go[2 * p] += k * o[2 * p];
                            go[2 * p + 1] += k * o[2 * p + 1];
                        }
                    }
                }
                vec![Some(gs), Some(go)]
            }),
        ))
    }

    /// `clamp(1 − m, 0, 1)`.
    pub fn complement_mask(&mut self, m: Var) -> Var {
        let out: Vec<f64> = self
            .value(m)
            .data()
            .iter()
            .map(|v| (1.0 - v).clamp(0.0, 1.0))
            .collect();
        let shape = self.shape(m).to_vec();
        self.op(
            Tensor::from_parts(shape, out),
            &[m],
            Box::new(|ctx| {
                vec![Some(
                    ctx.inputs[0]
                        .data()
                        .iter()
                        .zip(ctx.grad)
                        .map(|(&v, g)| if v > 0.0 && v < 1.0 { -g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Mask-weighted spatial covariance per bin:
    /// `Φ(f) = Σ_t m(t,f)·y(t,f)y(t,f)ᴴ / Σ_t m(t,f)`.
    ///
    /// `y: [C, F, K, 2]`, `mask: [F, K]` → `[K, C, C, 2]`. Bins whose mask
    /// sums below [`MASK_SUM_FLOOR`] use the unmasked average and are listed
    /// in the second return value.
    pub fn masked_covariance(&mut self, y: Var, mask: Var) -> Result<(Var, Vec<usize>)> {
        let yd = complex_dims(self.shape(y), 3, "scm input")?;
        let (c, frames, bins) = (yd[0], yd[1], yd[2]);
        if self.shape(mask) != [frames, bins] {
            return Err(Error::Shape(format!(
                "scm: mask {:?} vs spectrogram frames×bins [{frames}, {bins}]",
                self.shape(mask)
            )));
        }
        let ys = to_complex(self.value(y).data());
        let md = self.value(mask).data();
        let at = |ch: usize, t: usize, f: usize| ys[(ch * frames + t) * bins + f];
        let mut fallback = Vec::new();
        let mut eff_mask = md.to_vec();
        let mut msum = vec![0.0; bins];
        for f in 0..bins {
            let s: f64 = (0..frames).map(|t| md[t * bins + f]).sum();
            if s < MASK_SUM_FLOOR {
                fallback.push(f);
                for t in 0..frames {
                    eff_mask[t * bins + f] = 1.0;
                }
                msum[f] = frames as f64;
            } else {
                msum[f] = s;
            }
        }
        let mut phi = vec![Complex64::new(0.0, 0.0); bins * c * c];
        for f in 0..bins {
            let blk = &mut phi[f * c * c..(f + 1) * c * c];
            for t in 0..frames {
                let m = eff_mask[t * bins + f];
                if m == 0.0 {
                    continue;
                }
                for a in 0..c {
                    let ya = at(a, t, f) * m;
                    for b in 0..c {
                        blk[a * c + b] += ya * at(b, t, f).conj();
                    }
                }
            }
            blk.iter_mut().for_each(|z| *z /= msum[f]);
        }
        let is_fallback: Vec<bool> = (0..bins).map(|f| fallback.contains(&f)).collect();
        let var = self.op(
            Tensor::from_parts(vec![bins, c, c, 2], to_interleaved(&phi)),
            &[y, mask],
            Box::new(move |ctx| {
                let ys = to_complex(ctx.inputs[0].data());
                let phi = to_complex(ctx.out.data());
                let g = to_complex(ctx.grad);
                let at = |ch: usize, t: usize, f: usize| ys[(ch * frames + t) * bins + f];
                let mut gy = vec![Complex64::new(0.0, 0.0); ys.len()];
                let mut gm = vec![0.0; frames * bins];
                for f in 0..bins {
                    let gb = &g[f * c * c..(f + 1) * c * c];
                    let pb = &phi[f * c * c..(f + 1) * c * c];
                    // (G + Gᴴ) is reused for every frame at this bin.
                    let mut gs = vec![Complex64::new(0.0, 0.0); c * c];
                    for a in 0..c {
                        for b in 0..c {
                            gs[a * c + b] = gb[a * c + b] + gb[b * c + a].conj();
                        }
                    }
                    let gphi: f64 = gb.iter().zip(pb).map(|(g, p)| (g.conj() * p).re).sum();
                    for t in 0..frames {
                        let m = eff_mask[t * bins + f] / msum[f];
                        if m != 0.0 {
                            for a in 0..c {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for b in 0..c {
                                    acc += gs[a * c + b] * at(b, t, f);
                                }
                                gy[(a * frames + t) * bins + f] += acc * m;
                            }
                        }
                        if !is_fallback[f] {
                            let mut gp = 0.0;
                            for a in 0..c {
                                let ya = at(a, t, f);
                                for b in 0..c {
                                    gp += (gb[a * c + b].conj() * ya * at(b, t, f).conj()).re;
                                }
                            }
                            gm[t * bins + f] = (gp - gphi) / msum[f];
                        }
                    }
                }
                vec![Some(to_interleaved(&gy)), Some(gm)]
            }),
        );
        Ok((var, fallback))
    }

    /// Relative diagonal loading `Φ + δ·Re tr(Φ)/C·I` on `[K, C, C, 2]`.
    pub fn diagonal_loading(&mut self, phi: Var, delta: f64) -> Result<Var> {
        let d = complex_dims(self.shape(phi), 3, "diagonal loading")?;
        let (bins, c) = (d[0], d[1]);
        if d[2] != c {
            return Err(Error::Shape("diagonal loading needs square matrices".into()));
        }
        let mut out = self.value(phi).data().to_vec();
        for f in 0..bins {
            let tr: f64 = (0..c).map(|i| out[2 * ((f * c + i) * c + i)]).sum();
            let load = delta * tr / c as f64;
            for i in 0..c {
                out[2 * ((f * c + i) * c + i)] += load;
            }
        }
        let shape = self.shape(phi).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, out),
            &[phi],
            Box::new(move |ctx| {
                let mut g = ctx.grad.to_vec();
                for f in 0..bins {
                    let s: f64 = (0..c).map(|i| ctx.grad[2 * ((f * c + i) * c + i)]).sum();
                    let add = delta * s / c as f64;
                    for i in 0..c {
                        g[2 * ((f * c + i) * c + i)] += add;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Batched inverse of `[K, n, n, 2]`. With `hermitian` set, Cholesky is
    /// tried first.
    pub fn cinv(&mut self, a: Var, hermitian: bool) -> Result<Var> {
        let d = complex_dims(self.shape(a), 3, "cinv")?;
        let (batch, n) = (d[0], d[1]);
        if d[2] != n {
            return Err(Error::Shape("cinv needs square matrices".into()));
        }
        let ad = to_complex(self.value(a).data());
        let mut out = Vec::with_capacity(ad.len());
        for b in 0..batch {
            let blk = &ad[b * n * n..(b + 1) * n * n];
            let inv = (hermitian && is_hermitian(blk, n))
                .then(|| cholesky_inverse(blk, n))
                .flatten()
                .or_else(|| gauss_jordan_inverse(blk, n))
                .ok_or_else(|| Error::Data(format!("singular matrix in batch entry {b}")))?;
            out.extend(inv);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, to_interleaved(&out)),
            &[a],
            Box::new(move |ctx| {
                let z = to_complex(ctx.out.data());
                let g = to_complex(ctx.grad);
                let mut ga = Vec::with_capacity(z.len());
                for b in 0..batch {
                    let zh = cherm_t(&z[b * n * n..(b + 1) * n * n], n, n);
                    let t = cmatmul_raw(&zh, &g[b * n * n..(b + 1) * n * n], n, n, n);
                    ga.extend(cmatmul_raw(&t, &zh, n, n, n).into_iter().map(|v| -v));
                }
                vec![Some(to_interleaved(&ga))]
            }),
        ))
    }

    /// Batched product `[K, m, n, 2] · [K, n, p, 2]`.
    pub fn cmatmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let da = complex_dims(self.shape(a), 3, "cmatmul lhs")?;
        let db = complex_dims(self.shape(b), 3, "cmatmul rhs")?;
        if da[0] != db[0] || da[2] != db[1] {
            return Err(Error::Shape(format!("cmatmul: {da:?} · {db:?}")));
        }
        let (batch, m, n, p) = (da[0], da[1], da[2], db[2]);
        let (av, bv) = (to_complex(self.value(a).data()), to_complex(self.value(b).data()));
        let mut out = Vec::with_capacity(batch * m * p);
        for k in 0..batch {
            out.extend(cmatmul_raw(
                &av[k * m * n..(k + 1) * m * n],
                &bv[k * n * p..(k + 1) * n * p],
                m,
                n,
                p,
            ));
        }
        Ok(self.op(
            Tensor::from_parts(vec![batch, m, p, 2], to_interleaved(&out)),
            &[a, b],
            Box::new(move |ctx| {
                let av = to_complex(ctx.inputs[0].data());
                let bv = to_complex(ctx.inputs[1].data());
                let g = to_complex(ctx.grad);
                let mut ga = Vec::with_capacity(av.len());
                let mut gb = Vec::with_capacity(bv.len());
                for k in 0..batch {
                    let gk = &g[k * m * p..(k + 1) * m * p];
                    let bh = cherm_t(&bv[k * n * p..(k + 1) * n * p], n, p);
                    ga.extend(cmatmul_raw(gk, &bh, m, p, n));
                    let ah = cherm_t(&av[k * m * n..(k + 1) * m * n], m, n);
                    gb.extend(cmatmul_raw(&ah, gk, n, m, p));
                }
                vec![
                    ctx.needs(0).then(|| to_interleaved(&ga)),
                    ctx.needs(1).then(|| to_interleaved(&gb)),
                ]
            }),
        ))
    }

    /// Batched trace `[K, n, n, 2]` → `[K, 2]`.
    pub fn ctrace(&mut self, a: Var) -> Result<Var> {
        let d = complex_dims(self.shape(a), 3, "ctrace")?;
        let (batch, n) = (d[0], d[1]);
        if d[2] != n {
            return Err(Error::Shape("ctrace needs square matrices".into()));
        }
        let ad = self.value(a).data();
        let mut out = vec![0.0; batch * 2];
        for k in 0..batch {
            for i in 0..n {
                let q = 2 * ((k * n + i) * n + i);
                out[2 * k] += ad[q];
                out[2 * k + 1] += ad[q + 1];
            }
        }
        let len = ad.len();
        Ok(self.op(
            Tensor::from_parts(vec![batch, 2], out),
            &[a],
            Box::new(move |ctx| {
                let mut g = vec![0.0; len];
                for k in 0..batch {
                    for i in 0..n {
                        let q = 2 * ((k * n + i) * n + i);
                        g[q] = ctx.grad[2 * k];
                        g[q + 1] = ctx.grad[2 * k + 1];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Column `j` of each matrix in `[K, m, n, 2]` → `[K, m, 2]`.
    pub fn ccolumn(&mut self, a: Var, j: usize) -> Result<Var> {
        let d = complex_dims(self.shape(a), 3, "ccolumn")?;
        let (batch, m, n) = (d[0], d[1], d[2]);
        if j >= n {
            return Err(Error::Shape(format!("column {j} of {n}")));
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(batch * m * 2);
        for k in 0..batch {
            for i in 0..m {
                let q = 2 * ((k * m + i) * n + j);
                out.push(ad[q]);
                out.push(ad[q + 1]);
            }
        }
        let len = ad.len();
        Ok(self.op(
            Tensor::from_parts(vec![batch, m, 2], out),
            &[a],
            Box::new(move |ctx| {
                let mut g = vec![0.0; len];
                for k in 0..batch {
                    for i in 0..m {
                        let q = 2 * ((k * m + i) * n + j);
                        let r = 2 * (k * m + i);
                        g[q] = ctx.grad[r];
                        g[q + 1] = ctx.grad[r + 1];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `v / s` per batch entry for `v: [K, m, 2]`, `s: [K, 2]`. Entries with
    /// `|s| < eps` yield zero output and zero gradient; their indices are
    /// returned.
    pub fn cdiv_safe(&mut self, v: Var, s: Var, eps: f64) -> Result<(Var, Vec<usize>)> {
        let dv = complex_dims(self.shape(v), 2, "cdiv numerator")?;
        let ds = complex_dims(self.shape(s), 1, "cdiv denominator")?;
        if dv[0] != ds[0] {
            return Err(Error::Shape(format!("cdiv: {dv:?} / {ds:?}")));
        }
        let (batch, m) = (dv[0], dv[1]);
        let vv = to_complex(self.value(v).data());
        let sv = to_complex(self.value(s).data());
        let degenerate: Vec<usize> = (0..batch).filter(|&k| !(sv[k].norm() >= eps)).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); batch * m];
        for k in 0..batch {
            if degenerate.contains(&k) {
                continue;
            }
            for i in 0..m {
                out[k * m + i] = vv[k * m + i] / sv[k];
            }
        }
        let skip: Vec<bool> = (0..batch).map(|k| degenerate.contains(&k)).collect();
        let var = self.op(
            Tensor::from_parts(vec![batch, m, 2], to_interleaved(&out)),
            &[v, s],
            Box::new(move |ctx| {
                let vv = to_complex(ctx.inputs[0].data());
                let sv = to_complex(ctx.inputs[1].data());
                let g = to_complex(ctx.grad);
                let zero = Complex64::new(0.0, 0.0);
                let mut gv = vec![zero; vv.len()];
                let mut gs = vec![zero; sv.len()];
                for k in 0..batch {
                    if skip[k] {
                        continue;
                    }
                    let sc = sv[k].conj();
                    let mut acc = zero;
                    for i in 0..m {
                        gv[k * m + i] = g[k * m + i] / sc;
                        acc += g[k * m + i] * vv[k * m + i].conj();
                    }
                    gs[k] = -acc / (sc * sc);
                }
                vec![
                    ctx.needs(0).then(|| to_interleaved(&gv)),
                    ctx.needs(1).then(|| to_interleaved(&gs)),
                ]
            }),
        );
        Ok((var, degenerate))
    }

    /// Beamformer output `x(t,f) = w(f)ᴴ y(t,f)` for `w: [K, C, 2]`,
    /// `y: [C, F, K, 2]` → `[1, F, K, 2]`.
    pub fn apply_weights(&mut self, w: Var, y: Var) -> Result<Var> {
        let dw = complex_dims(self.shape(w), 2, "bf weights")?;
        let dy = complex_dims(self.shape(y), 3, "bf input")?;
        let (c, frames, bins) = (dy[0], dy[1], dy[2]);
        if dw != [bins, c] {
            return Err(Error::Shape(format!(
                "weights {dw:?} do not match [{bins} bins, {c} channels]"
            )));
        }
        let wv = to_complex(self.value(w).data());
        let yv = to_complex(self.value(y).data());
        let mut out = vec![Complex64::new(0.0, 0.0); frames * bins];
        for ch in 0..c {
            for t in 0..frames {
                for f in 0..bins {
                    out[t * bins + f] += wv[f * c + ch].conj() * yv[(ch * frames + t) * bins + f];
                }
            }
        }
        Ok(self.op(
            Tensor::from_parts(vec![1, frames, bins, 2], to_interleaved(&out)),
            &[w, y],
            Box::new(move |ctx| {
                let wv = to_complex(ctx.inputs[0].data());
                let yv = to_complex(ctx.inputs[1].data());
                let g = to_complex(ctx.grad);
                let zero = Complex64::new(0.0, 0.0);
                let mut gw = vec![zero; wv.len()];
                let mut gy = vec![zero; yv.len()];
                for ch in 0..c {
                    for t in 0..frames {
                        for f in 0..bins {
                            let q = (ch * frames + t) * bins + f;
                            let gt = g[t * bins + f];
                            gy[q] = gt * wv[f * c + ch];
                            gw[f * c + ch] += gt.conj() * yv[q];
                        }
                    }
                }
                vec![
                    ctx.needs(0).then(|| to_interleaved(&gw)),
                    ctx.needs(1).then(|| to_interleaved(&gy)),
                ]
            }),
        ))
    }
}

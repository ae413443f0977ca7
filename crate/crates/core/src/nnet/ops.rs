//! Real-valued differentiable operations.
//!
//! Signals are laid out `[channels, time]` row-major.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c = a · b` for row-major matrices, optionally transposing either operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices are sized m×k, k×n and m×n for the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn dims2(g: &Graph, v: Var, what: &str) -> Result<(usize, usize)> {
    match g.shape(v) {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what}: expected 2-d, got {s:?}"))),
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, out),
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, out),
            &[a, b],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|g| -g).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, out),
            &[a, b],
            Box::new(|ctx| {
                let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx
                    .needs(0)
                    .then(|| ctx.grad.iter().zip(y).map(|(g, y)| g * y).collect());
                let gb = ctx
                    .needs(1)
                    .then(|| ctx.grad.iter().zip(x).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.op(
            Tensor::from_parts(shape, out),
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * factor).collect())]),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.op(
            Tensor::scalar(s),
            &[a],
            Box::new(|ctx| vec![Some(vec![ctx.grad[0]; ctx.inputs[0].len()])]),
        )
    }

    /// Weighted sum of scalars; parents with a zero weight get no gradient.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::Shape("weighted_sum expects scalars".into()));
            }
            s += w * self.value(v).item();
        }
        let weights: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.op(
            Tensor::scalar(s),
            &parents,
            Box::new(move |ctx| {
                weights
                    .iter()
                    .map(|&w| (w != 0.0).then(|| vec![w * ctx.grad[0]]))
                    .collect()
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.op(value, &[a], Box::new(|ctx| vec![Some(ctx.grad.to_vec())])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.op(
            Tensor::from_parts(shape, out),
            &[a],
            Box::new(|ctx| {
                let x = ctx.inputs[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Parametric ReLU with one shared slope (`slope` has a single element).
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::Shape("prelu slope must be a scalar".into()));
        }
        let s = self.value(slope).item();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { s * x })
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.op(
            Tensor::from_parts(shape, out),
            &[a, slope],
            Box::new(|ctx| {
                let x = ctx.inputs[0].data();
                let s = ctx.inputs[1].item();
                let gx = ctx.needs(0).then(|| {
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { s * g })
                        .collect()
                });
                let gs = ctx.needs(1).then(|| {
                    let d: f64 = ctx
                        .grad
                        .iter()
                        .zip(x)
                        .filter(|(_, &x)| x <= 0.0)
                        .map(|(g, x)| g * x)
                        .sum();
                    vec![d]
                });
                vec![gx, gs]
            }),
        ))
    }

    /// Global layer norm over the whole `[C, T]` input with per-channel
    /// gain and bias.
    pub fn global_layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (c, t) = dims2(self, x, "gLN")?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::Shape("gLN gain/bias must be [C]".into()));
        }
        let xd = self.value(x).data();
        let n = xd.len() as f64;
        let mean = xd.iter().sum::<f64>() / n;
        let var = xd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            for i in 0..t {
                let k = ch * t + i;
                out[k] = gd[ch] * (xd[k] - mean) * inv + bd[ch];
            }
        }
        Ok(self.op(
            Tensor::from_parts(vec![c, t], out),
            &[x, gain, bias],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gd = ctx.inputs[1].data();
                let dy = ctx.grad;
                let mut g_gain = vec![0.0; c];
                let mut g_bias = vec![0.0; c];
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for ch in 0..c {
                    for i in 0..t {
                        let k = ch * t + i;
                        let xh = (xd[k] - mean) * inv;
                        g_gain[ch] += dy[k] * xh;
                        g_bias[ch] += dy[k];
                        let dxh = dy[k] * gd[ch];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; c * t];
                    for ch in 0..c {
                        for i in 0..t {
                            let k = ch * t + i;
                            let xh = (xd[k] - mean) * inv;
                            let dxh = dy[k] * gd[ch];
                            gx[k] = inv * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                        }
                    }
                    gx
                });
                vec![gx, Some(g_gain), Some(g_bias)]
            }),
        ))
    }

    /// `W·x + b` with `W: [Cout, Cin]`, `x: [Cin, T]`, `b: [Cout]`.
    pub fn conv1x1(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (cin, t) = dims2(self, x, "conv1x1 input")?;
        let (cout, wcin) = dims2(self, weight, "conv1x1 weight")?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv1x1: weight expects {wcin} input channels, got {cin}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::Shape("conv1x1 bias must be [Cout]".into()));
            }
        }
        let mut out = vec![0.0; cout * t];
        gemm(
            cout,
            cin,
            t,
            self.value(weight).data(),
            false,
            self.value(x).data(),
            false,
            &mut out,
            false,
        );
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(t).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.op(
            Tensor::from_parts(vec![cout, t], out),
            &parents,
            Box::new(move |ctx| {
                let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let dy = ctx.grad;
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; cin * t];
                    gemm(cin, cout, t, wd, true, dy, false, &mut gx, false);
                    gx
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; cout * cin];
                    gemm(cout, t, cin, dy, false, xd, true, &mut gw, false);
                    gw
                });
                let mut res = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    res.push(Some(dy.chunks(t).map(|r| r.iter().sum()).collect()));
                }
                res
            }),
        ))
    }

    /// Strided convolution, no padding: `x: [Cin, T]`, `w: [Cout, Cin, K]`.
    pub fn conv1d_strided(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let (cin, t) = dims2(self, x, "conv1d input")?;
        let [cout, wcin, k] = *self.shape(weight) else {
            return Err(Error::Shape("conv1d weight must be [Cout, Cin, K]".into()));
        };
        if wcin != cin || t < k || stride == 0 {
            return Err(Error::Shape(format!(
                "conv1d: input [{cin}, {t}] incompatible with weight [{cout}, {wcin}, {k}]"
            )));
        }
        let frames = (t - k) / stride + 1;
        let xd = self.value(x).data();
        let mut cols = vec![0.0; cin * k * frames];
        for c in 0..cin {
            for j in 0..k {
                let row = &mut cols[(c * k + j) * frames..(c * k + j + 1) * frames];
                for (f, v) in row.iter_mut().enumerate() {
                    *v = xd[c * t + f * stride + j];
                }
            }
        }
        let mut out = vec![0.0; cout * frames];
        gemm(
            cout,
            cin * k,
            frames,
            self.value(weight).data(),
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        Ok(self.op(
            Tensor::from_parts(vec![cout, frames], out),
            &[x, weight],
            Box::new(move |ctx| {
                let wd = ctx.inputs[1].data();
                let dy = ctx.grad;
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; cout * cin * k];
                    gemm(cout, frames, cin * k, dy, false, &cols, true, &mut gw, false);
                    gw
                });
                let gx = ctx.needs(0).then(|| {
                    let mut dcols = vec![0.0; cin * k * frames];
                    gemm(cin * k, cout, frames, wd, true, dy, false, &mut dcols, false);
                    let mut gx = vec![0.0; cin * t];
                    for c in 0..cin {
                        for j in 0..k {
                            let row = &dcols[(c * k + j) * frames..(c * k + j + 1) * frames];
                            for (f, v) in row.iter().enumerate() {
                                gx[c * t + f * stride + j] += v;
                            }
                        }
                    }
                    gx
                });
                vec![gx, gw]
            }),
        ))
    }

    /// Transposed convolution (overlap-add synthesis):
    /// `x: [Cin, F]`, `w: [Cin, Cout, K]` → `[Cout, (F-1)·stride + K]`.
    pub fn conv_transpose1d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let (cin, frames) = dims2(self, x, "conv_transpose1d input")?;
        let [wcin, cout, k] = *self.shape(weight) else {
            return Err(Error::Shape("conv_transpose1d weight must be [Cin, Cout, K]".into()));
        };
        if wcin != cin || frames == 0 || stride == 0 {
            return Err(Error::Shape(format!(
                "conv_transpose1d: input [{cin}, {frames}] incompatible with weight [{wcin}, {cout}, {k}]"
            )));
        }
        let t = (frames - 1) * stride + k;
        let mut cols = vec![0.0; cout * k * frames];
        gemm(
            cout * k,
            cin,
            frames,
            self.value(weight).data(),
            true,
            self.value(x).data(),
            false,
            &mut cols,
            false,
        );
        let mut out = vec![0.0; cout * t];
        for o in 0..cout {
            for j in 0..k {
                let row = &cols[(o * k + j) * frames..(o * k + j + 1) * frames];
                for (f, v) in row.iter().enumerate() {
                    out[o * t + f * stride + j] += v;
                }
            }
        }
        Ok(self.op(
            Tensor::from_parts(vec![cout, t], out),
            &[x, weight],
            Box::new(move |ctx| {
                let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let dy = ctx.grad;
                let mut dcols = vec![0.0; cout * k * frames];
                for o in 0..cout {
                    for j in 0..k {
                        let row = &mut dcols[(o * k + j) * frames..(o * k + j + 1) * frames];
                        for (f, v) in row.iter_mut().enumerate() {
                            *v = dy[o * t + f * stride + j];
                        }
                    }
                }
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; cin * frames];
                    gemm(cin, cout * k, frames, wd, false, &dcols, false, &mut gx, false);
                    gx
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; cin * cout * k];
                    gemm(cin, frames, cout * k, xd, false, &dcols, true, &mut gw, false);
                    gw
                });
                vec![gx, gw]
            }),
        ))
    }

    /// Dilated depthwise convolution with "same" zero padding.
    /// `x: [C, T]`, `w: [C, K]` (K odd), `b: [C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (c, t) = dims2(self, x, "depthwise input")?;
        let (wc, k) = dims2(self, weight, "depthwise weight")?;
        if wc != c || k % 2 == 0 || self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "depthwise: input [{c}, {t}], weight [{wc}, {k}] (K must be odd)"
            )));
        }
        let pad = (k - 1) * dilation / 2;
        let xd = self.value(x).data();
        let (wd, bd) = (self.value(weight).data(), self.value(bias).data());
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let xr = &xd[ch * t..(ch + 1) * t];
            let yr = &mut out[ch * t..(ch + 1) * t];
            yr.iter_mut().for_each(|v| *v = bd[ch]);
            for j in 0..k {
                let w = wd[ch * k + j];
                let off = j * dilation;
                // y[i] += w · x[i + off - pad]
                let lo = pad.saturating_sub(off);
                let hi = (t + pad).saturating_sub(off).min(t);
                for i in lo..hi {
                    yr[i] += w * xr[i + off - pad];
                }
            }
        }
        Ok(self.op(
            Tensor::from_parts(vec![c, t], out),
            &[x, weight, bias],
            Box::new(move |ctx| {
                let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let dy = ctx.grad;
                let mut gx = vec![0.0; c * t];
                let mut gw = vec![0.0; c * k];
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    let xr = &xd[ch * t..(ch + 1) * t];
                    let dr = &dy[ch * t..(ch + 1) * t];
                    gb[ch] = dr.iter().sum();
                    for j in 0..k {
                        let w = wd[ch * k + j];
                        let off = j * dilation;
                        let lo = pad.saturating_sub(off);
                        let hi = (t + pad).saturating_sub(off).min(t);
                        let mut acc = 0.0;
                        for i in lo..hi {
                            acc += dr[i] * xr[i + off - pad];
                            gx[ch * t + i + off - pad] += w * dr[i];
                        }
                        gw[ch * k + j] = acc;
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        ))
    }

    /// Zero-pads the time axis of `[C, T]`.
    pub fn pad_time(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let (c, t) = dims2(self, x, "pad_time")?;
        let nt = t + left + right;
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * nt];
        for ch in 0..c {
            out[ch * nt + left..ch * nt + left + t].copy_from_slice(&xd[ch * t..(ch + 1) * t]);
        }
        Ok(self.op(
            Tensor::from_parts(vec![c, nt], out),
            &[x],
            Box::new(move |ctx| {
                let mut gx = vec![0.0; c * t];
                for ch in 0..c {
                    gx[ch * t..(ch + 1) * t]
                        .copy_from_slice(&ctx.grad[ch * nt + left..ch * nt + left + t]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Keeps samples `start..start + len` of every channel.
    pub fn crop_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, t) = dims2(self, x, "crop_time")?;
        if start + len > t {
            return Err(Error::Shape(format!(
                "crop {start}..{} out of range for length {t}",
                start + len
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * len);
        for ch in 0..c {
            out.extend_from_slice(&xd[ch * t + start..ch * t + start + len]);
        }
        Ok(self.op(
            Tensor::from_parts(vec![c, len], out),
            &[x],
            Box::new(move |ctx| {
                let mut gx = vec![0.0; c * t];
                for ch in 0..c {
                    gx[ch * t + start..ch * t + start + len]
                        .copy_from_slice(&ctx.grad[ch * len..(ch + 1) * len]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Rows `start..start + count` along the leading axis.
    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&n, rest)) = shape.split_first() else {
            return Err(Error::Shape("rows of a 0-d tensor".into()));
        };
        if start + count > n {
            return Err(Error::Shape(format!("rows {start}+{count} out of {n}")));
        }
        let stride: usize = rest.iter().product();
        let out = self.value(x).data()[start * stride..(start + count) * stride].to_vec();
        let mut oshape = vec![count];
        oshape.extend_from_slice(rest);
        let total = n * stride;
        Ok(self.op(
            Tensor::from_parts(oshape, out),
            &[x],
            Box::new(move |ctx| {
                let mut gx = vec![0.0; total];
                gx[start * stride..(start + count) * stride].copy_from_slice(ctx.grad);
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let rest = self.shape(first)[1..].to_vec();
        let mut n = 0;
        let mut out = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.shape(p)[1..] != rest[..] {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs trailing {:?}",
                    self.shape(p),
                    rest
                )));
            }
            n += self.shape(p)[0];
            sizes.push(self.value(p).len());
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&rest);
        Ok(self.op(
            Tensor::from_parts(shape, out),
            parts,
            Box::new(move |ctx| {
                let mut off = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let g = ctx.grad[off..off + s].to_vec();
                        off += s;
                        Some(g)
                    })
                    .collect()
            }),
        ))
    }
}

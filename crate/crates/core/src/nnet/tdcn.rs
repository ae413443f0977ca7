//! Time-domain convolutional network (Conv-TasNet layout): a learned
//! strided encoder, a stack of dilated depthwise-separable blocks that
//! predicts one encoder-domain mask per output head, and a shared
//! transposed-convolution decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const GLN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdcnConfig {
    /// Encoder basis count (N).
    pub basis_size: usize,
    /// Encoder window length in samples (L); the stride is L/2.
    pub kernel_length: usize,
    /// Bottleneck channels (B).
    pub bottleneck: usize,
    /// Hidden channels inside each block (H).
    pub hidden: usize,
    /// Depthwise kernel size (P).
    pub conv_kernel: usize,
    /// Blocks per repeat (X); dilations run 1, 2, …, 2^(X-1).
    pub blocks_per_repeat: usize,
    /// Repeats (R).
    pub repeats: usize,
    pub output_heads: usize,
    pub input_channels: usize,
}

impl TdcnConfig {
    /// Small CPU-trainable network.
    pub fn desk(input_channels: usize, output_heads: usize) -> Self {
        Self {
            basis_size: 64,
            kernel_length: 16,
            bottleneck: 32,
            hidden: 64,
            conv_kernel: 3,
            blocks_per_repeat: 4,
            repeats: 2,
            output_heads,
            input_channels,
        }
    }

    /// Published full-size hyperparameters.
    pub fn full(input_channels: usize, output_heads: usize) -> Self {
        Self {
            basis_size: 256,
            kernel_length: 20,
            bottleneck: 256,
            hidden: 512,
            conv_kernel: 3,
            blocks_per_repeat: 8,
            repeats: 4,
            output_heads,
            input_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.basis_size,
            self.kernel_length,
            self.bottleneck,
            self.hidden,
            self.conv_kernel,
            self.blocks_per_repeat,
            self.repeats,
            self.output_heads,
            self.input_channels,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("TDCN sizes must be positive: {self:?}")));
        }
        if self.kernel_length % 2 != 0 {
            return Err(Error::Config(format!(
                "kernel_length must be even, got {}",
                self.kernel_length
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv_kernel must be odd for same-length padding, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.kernel_length / 2
    }
}

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter in `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct BlockLayout {
    in_w: usize,
    in_b: usize,
    act1: usize,
    norm1_g: usize,
    norm1_b: usize,
    dw_w: usize,
    dw_b: usize,
    act2: usize,
    norm2_g: usize,
    norm2_b: usize,
    res_w: usize,
    res_b: usize,
    skip_w: usize,
    skip_b: usize,
    dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    enc_w: usize,
    norm_g: usize,
    norm_b: usize,
    bn_w: usize,
    bn_b: usize,
    blocks: Vec<BlockLayout>,
    out_act: usize,
    mask_w: usize,
    mask_b: usize,
    dec_w: usize,
}

/// A TDCN and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tdcn {
    cfg: TdcnConfig,
    layout: Layout,
    pub params: ParamSet,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl Tdcn {
    /// Weights uniform in ±1/√fan_in from `seed`; biases zero; norm gains one;
    /// PReLU slopes 0.25.
    pub fn new(cfg: TdcnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let TdcnConfig {
            basis_size: n,
            kernel_length: l,
            bottleneck: b,
            hidden: h,
            conv_kernel: k,
            ..
        } = cfg;
        let cin = cfg.input_channels;
        let enc_w = p.push("encoder.w".into(), uniform(&mut rng, &[n, cin, l], cin * l));
        let norm_g = p.push("norm.g".into(), Tensor::full(&[n], 1.0));
        let norm_b = p.push("norm.b".into(), Tensor::zeros(&[n]));
        let bn_w = p.push("bottleneck.w".into(), uniform(&mut rng, &[b, n], n));
        let bn_b = p.push("bottleneck.b".into(), Tensor::zeros(&[b]));
        let mut blocks = Vec::new();
        for r in 0..cfg.repeats {
            for x in 0..cfg.blocks_per_repeat {
                let tag = format!("block{r}.{x}");
                blocks.push(BlockLayout {
                    in_w: p.push(format!("{tag}.in.w"), uniform(&mut rng, &[h, b], b)),
                    in_b: p.push(format!("{tag}.in.b"), Tensor::zeros(&[h])),
                    act1: p.push(format!("{tag}.act1"), Tensor::scalar(0.25)),
                    norm1_g: p.push(format!("{tag}.norm1.g"), Tensor::full(&[h], 1.0)),
                    norm1_b: p.push(format!("{tag}.norm1.b"), Tensor::zeros(&[h])),
                    dw_w: p.push(format!("{tag}.dw.w"), uniform(&mut rng, &[h, k], k)),
                    dw_b: p.push(format!("{tag}.dw.b"), Tensor::zeros(&[h])),
                    act2: p.push(format!("{tag}.act2"), Tensor::scalar(0.25)),
                    norm2_g: p.push(format!("{tag}.norm2.g"), Tensor::full(&[h], 1.0)),
                    norm2_b: p.push(format!("{tag}.norm2.b"), Tensor::zeros(&[h])),
                    res_w: p.push(format!("{tag}.res.w"), uniform(&mut rng, &[b, h], h)),
                    res_b: p.push(format!("{tag}.res.b"), Tensor::zeros(&[b])),
                    skip_w: p.push(format!("{tag}.skip.w"), uniform(&mut rng, &[b, h], h)),
                    skip_b: p.push(format!("{tag}.skip.b"), Tensor::zeros(&[b])),
                    dilation: 1 << x,
                });
            }
        }
        let out_act = p.push("out.act".into(), Tensor::scalar(0.25));
        let heads = cfg.output_heads;
        let mask_w = p.push("mask.w".into(), uniform(&mut rng, &[heads * n, b], b));
        let mask_b = p.push("mask.b".into(), Tensor::zeros(&[heads * n]));
        let dec_w = p.push("decoder.w".into(), uniform(&mut rng, &[n, 1, l], n));
        Ok(Self {
            cfg,
            layout: Layout {
                enc_w,
                norm_g,
                norm_b,
                bn_w,
                bn_b,
                blocks,
                out_act,
                mask_w,
                mask_b,
                dec_w,
            },
            params: p,
        })
    }

    pub fn config(&self) -> &TdcnConfig {
        &self.cfg
    }

    /// Replaces the parameters, checking names and shapes.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.names != self.params.names
            || params
                .tensors
                .iter()
                .zip(&self.params.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape(
                "parameter set does not match the network layout".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Runs the network on `input: [C_in, T]`, returning one `[1, T]`
    /// waveform per head. `p` are this model's parameters bound in `g`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], input: Var) -> Result<Vec<Var>> {
        let [cin, t] = *g.shape(input) else {
            return Err(Error::Shape(format!(
                "TDCN input must be [channels, samples], got {:?}",
                g.shape(input)
            )));
        };
        if cin != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "TDCN expects {} input channels, got {cin}",
                self.cfg.input_channels
            )));
        }
        if p.len() != self.params.len() {
            return Err(Error::Shape("parameter binding has the wrong length".into()));
        }
        let (l, s, n) = (self.cfg.kernel_length, self.cfg.stride(), self.cfg.basis_size);
        let padded = (t + 2 * s).saturating_sub(l).div_ceil(s) * s + l;
        let xp = g.pad_time(input, s, padded - t - s)?;
        let enc = g.conv1d_strided(xp, p[self.layout.enc_w], s)?;
        let enc = g.relu(enc);

        let ly = &self.layout;
        let h = g.global_layer_norm(enc, p[ly.norm_g], p[ly.norm_b], GLN_EPS)?;
        let mut h = g.conv1x1(h, p[ly.bn_w], Some(p[ly.bn_b]))?;
        let mut skip_sum: Option<Var> = None;
        for blk in &ly.blocks {
            let y = g.conv1x1(h, p[blk.in_w], Some(p[blk.in_b]))?;
            let y = g.prelu(y, p[blk.act1])?;
            let y = g.global_layer_norm(y, p[blk.norm1_g], p[blk.norm1_b], GLN_EPS)?;
            let y = g.depthwise_conv1d(y, p[blk.dw_w], p[blk.dw_b], blk.dilation)?;
            let y = g.prelu(y, p[blk.act2])?;
            let y = g.global_layer_norm(y, p[blk.norm2_g], p[blk.norm2_b], GLN_EPS)?;
            let res = g.conv1x1(y, p[blk.res_w], Some(p[blk.res_b]))?;
            let skip = g.conv1x1(y, p[blk.skip_w], Some(p[blk.skip_b]))?;
            h = g.add(h, res)?;
            skip_sum = Some(match skip_sum {
                Some(acc) => g.add(acc, skip)?,
                None => skip,
            });
        }
        let out = g.prelu(skip_sum.unwrap_or(h), p[ly.out_act])?;
        let masks = g.conv1x1(out, p[ly.mask_w], Some(p[ly.mask_b]))?;
        let masks = g.relu(masks);
        (0..self.cfg.output_heads)
            .map(|head| {
                let m = g.rows(masks, head * n, n)?;
                let masked = g.mul(enc, m)?;
                let dec = g.conv_transpose1d(masked, p[ly.dec_w], s)?;
                g.crop_time(dec, s, t)
            })
            .collect()
    }

    /// Forward pass without gradient tracking; returns one waveform per head.
    pub fn infer(&self, input: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let t = input.first().map_or(0, Vec::len);
        if input.iter().any(|c| c.len() != t) || t == 0 {
            return Err(Error::Shape("inference input channels must share a non-zero length".into()));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::from_parts(vec![input.len(), t], input.concat()));
        let heads = self.forward(&mut g, &p, x)?;
        Ok(heads.into_iter().map(|h| g.value(h).data().to_vec()).collect())
    }
}

//! Training objectives: SNR loss on the virtual channel, permutation
//! invariant SNR loss on beamformer outputs, and their interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Graph, Tensor, Var};

pub const SNR_EPSILON: f64 = 1e-8;
pub const LOSS_FLOOR_DB: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtlConfig {
    /// Weight of the VM-level loss; `1 − alpha` weights the BF-level loss.
    pub alpha: f64,
    pub snr_epsilon: f64,
    pub loss_floor_db: f64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            snr_epsilon: SNR_EPSILON,
            loss_floor_db: LOSS_FLOOR_DB,
        }
    }
}

impl MtlConfig {
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.snr_epsilon > 0.0) {
            return Err(Error::Config("snr_epsilon must be positive".into()));
        }
        if !self.loss_floor_db.is_finite() {
            return Err(Error::Config("loss_floor_db must be finite".into()));
        }
        Ok(())
    }
}

fn snr_parts(reference: &[f64], estimate: &[f64]) -> Result<(f64, f64)> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "snr loss: reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let r2: f64 = reference.iter().map(|v| v * v).sum();
    if !(r2 > 0.0) {
        return Err(Error::Data("snr loss: reference is all zero".into()));
    }
    let e2: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum();
    Ok((r2, e2))
}

/// `−10 log10(‖ref‖² / (‖ref − est‖² + ε))`, floored at `floor_db`.
pub fn snr_loss_with(reference: &[f64], estimate: &[f64], eps: f64, floor_db: f64) -> Result<f64> {
    let (r2, e2) = snr_parts(reference, estimate)?;
    Ok((-10.0 * (r2 / (e2 + eps)).log10()).max(floor_db))
}

pub fn snr_loss(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    snr_loss_with(reference, estimate, SNR_EPSILON, LOSS_FLOOR_DB)
}

/// SNR loss summed over the channels of the virtual microphone signal,
/// given as one row per channel.
pub fn vm_loss(v: &[Vec<f64>], v_hat: &[Vec<f64>]) -> Result<f64> {
    if v.len() != v_hat.len() || v.is_empty() {
        return Err(Error::Shape(format!("vm loss: {} target and {} estimated channels", v.len(), v_hat.len())));
    }
    let mut total = 0.0;
    for (a, b) in v.iter().zip(v_hat) {
        total += snr_loss(a, b)?;
    }
    Ok(total)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Minimum over permutations `p` of `Σ_i costs[i][p[i]]`. Ties go to the
/// lexicographically first permutation.
pub fn pit_select(costs: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let n = costs.len();
    if n == 0 || costs.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("pit: cost matrix must be square and non-empty".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(n) {
        let mut total = 0.0;
        for (i, &j) in p.iter().enumerate() {
            total += costs[i][j];
        }
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, p));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Permutation-invariant SNR loss over lists of waveforms.
pub fn pit_bf_loss(x: &[Vec<f64>], x_bf: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    if x.len() != x_bf.len() {
        return Err(Error::Shape(format!("pit: {} references and {} estimates", x.len(), x_bf.len())));
    }
    let costs = x
        .iter()
        .map(|r| x_bf.iter().map(|e| snr_loss(r, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    pit_select(&costs)
}

pub fn mtl_value(alpha: f64, l_vm: f64, l_bf: f64) -> Result<f64> {
    MtlConfig::with_alpha(alpha)?;
    Ok(alpha * l_vm + (1.0 - alpha) * l_bf)
}

impl Graph {
    /// Differentiable SNR loss between two equally sized tensors. Where the
    /// floor is active the gradient is zero.
    pub fn snr_loss(&mut self, reference: Var, estimate: Var, eps: f64, floor_db: f64) -> Result<Var> {
        if self.value(reference).len() != self.value(estimate).len() {
            return Err(Error::Shape(format!(
                "snr loss: shapes {:?} and {:?}",
                self.shape(reference),
                self.shape(estimate)
            )));
        }
        let (r2, e2) = snr_parts(self.value(reference).data(), self.value(estimate).data())?;
        let raw = -10.0 * (r2 / (e2 + eps)).log10();
        let floored = raw < floor_db;
        let value = if floored { floor_db } else { raw };
        let c = 10.0 / std::f64::consts::LN_10;
        Ok(self.op(
            Tensor::scalar(value),
            &[reference, estimate],
            Box::new(move |ctx| {
                if floored {
                    return vec![None, None];
                }
                let g = ctx.grad[0];
                let (r, e) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                // L = c·ln(‖r − e‖² + ε) − c·ln‖r‖²
                let k = 2.0 * c * g / (e2 + eps);
                let gr = ctx.needs(0).then(|| {
                    r.iter()
                        .zip(e)
                        .map(|(ri, ei)| k * (ri - ei) - 2.0 * c * g * ri / r2)
                        .collect()
                });
                let ge = ctx
                    .needs(1)
                    .then(|| r.iter().zip(e).map(|(ri, ei)| -k * (ri - ei)).collect());
                vec![gr, ge]
            }),
        ))
    }

    /// PIT SNR loss: only the selected permutation's terms enter the graph.
    pub fn pit_snr_loss(&mut self, refs: &[Var], ests: &[Var], eps: f64, floor_db: f64) -> Result<(Var, Vec<usize>)> {
        if refs.len() != ests.len() {
            return Err(Error::Shape(format!("pit: {} references and {} estimates", refs.len(), ests.len())));
        }
        let costs = refs
            .iter()
            .map(|&r| {
                ests.iter()
                    .map(|&e| snr_loss_with(self.value(r).data(), self.value(e).data(), eps, floor_db))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, perm) = pit_select(&costs)?;
        let mut terms = Vec::with_capacity(refs.len());
        for (i, &j) in perm.iter().enumerate() {
            terms.push((self.snr_loss(refs[i], ests[j], eps, floor_db)?, 1.0));
        }
        Ok((self.weighted_sum(&terms)?, perm))
    }

    /// `α·L_VM + (1 − α)·L_BF`; a branch with zero weight gets no gradient.
    pub fn mtl_loss(&mut self, cfg: &MtlConfig, l_vm: Var, l_bf: Var) -> Result<Var> {
        cfg.validate()?;
        self.weighted_sum(&[(l_vm, cfg.alpha), (l_bf, 1.0 - cfg.alpha)])
    }
}

//! Evaluation metrics: projection SDR, SDR of the virtual channel, and
//! beamformer SDR with SIR-based permutation resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::permutations;

pub const METRIC_CLAMP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -METRIC_CLAMP_DB;
    }
    if den <= 0.0 {
        return METRIC_CLAMP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CLAMP_DB, METRIC_CLAMP_DB)
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "sdr: reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let r2 = dot(reference, reference);
    if !(r2 > 0.0) {
        return Err(Error::Data("sdr: reference is all zero".into()));
    }
    Ok(r2)
}

/// `10 log10(‖z_tgt‖² / ‖z_tgt − est‖²)` with `z_tgt` the orthogonal
/// projection of `estimate` onto `reference`, clamped to ±60 dB.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let r2 = check_pair(reference, estimate)?;
    let a = dot(estimate, reference) / r2;
    let target = a * a * r2;
    let dist: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (a * r - e).powi(2))
        .sum();
    Ok(clamp_ratio_db(target, dist))
}

/// SDR of the estimated virtual microphone against the recording there.
pub fn sdr_vm(v: &[f64], v_hat: &[f64]) -> Result<f64> {
    sdr(v, v_hat)
}

/// Output SIR of `estimate` for reference `target`: energy of its
/// projection onto that reference over the summed projection energies onto
/// the other references.
pub fn projection_sir(refs: &[Vec<f64>], target: usize, estimate: &[f64]) -> Result<f64> {
    let mut own = 0.0;
    let mut other = 0.0;
    for (k, r) in refs.iter().enumerate() {
        let r2 = check_pair(r, estimate)?;
        let p = dot(estimate, r);
        let e = p * p / r2;
        if k == target {
            own = e;
        } else {
            other += e;
        }
    }
    Ok(clamp_ratio_db(own, other))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfScore {
    /// Mean SDR over sources under the chosen permutation.
    pub sdr: f64,
    pub per_source: Vec<f64>,
    /// `permutation[i]` is the estimate assigned to reference `i`.
    pub permutation: Vec<usize>,
    pub sir: Vec<f64>,
}

/// Beamformer SDR. The permutation maximises the mean output SIR; ties go
/// to the lexicographically first permutation.
pub fn sdr_bf(x: &[Vec<f64>], x_bf: &[Vec<f64>]) -> Result<BfScore> {
    let n = x.len();
    if n == 0 || x_bf.len() != n {
        return Err(Error::Shape(format!("sdr_bf: {} references and {} estimates", n, x_bf.len())));
    }
    let sir: Vec<Vec<f64>> = (0..n)
        .map(|i| x_bf.iter().map(|e| projection_sir(x, i, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(n) {
        let mut total = 0.0;
        for (i, &j) in p.iter().enumerate() {
            total += sir[i][j];
        }
        if best.as_ref().is_none_or(|b| total > b.0) {
            best = Some((total, p));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let per_source = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| sdr(&x[i], &x_bf[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(BfScore {
        sdr: per_source.iter().sum::<f64>() / n as f64,
        sir: permutation.iter().enumerate().map(|(i, &j)| sir[i][j]).collect(),
        per_source,
        permutation,
    })
}

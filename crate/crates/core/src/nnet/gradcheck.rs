//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it is an
//! oracle independent of every backward rule.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub step: f64,
    /// Elements checked per tensor; larger tensors are sampled.
    pub max_per_tensor: usize,
    /// Errors are relative to `max(|analytic|, |numeric|, floor · max|analytic|)`.
    pub relative_floor: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_per_tensor: 24,
            relative_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: &CheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= opts.max_per_tensor {
                (0..t.len()).collect()
            } else {
                let mut v = sample(&mut rng, t.len(), opts.max_per_tensor).into_vec();
                v.sort_unstable();
                v
            }
        })
        .collect();
    let gmax = picks
        .iter()
        .enumerate()
        .flat_map(|(ti, idx)| idx.iter().map(move |&e| (ti, e)))
        .map(|(ti, e)| analytic[ti][e].abs())
        .fold(0.0, f64::max);

    let mut work = inputs.to_vec();
    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (ti, idx) in picks.iter().enumerate() {
        for &e in idx {
            let orig = work[ti].data()[e];
            work[ti].data_mut()[e] = orig + opts.step;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - opts.step;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[ti][e];
            let denom = a.abs().max(numeric.abs()).max(opts.relative_floor * gmax);
            let err = if denom == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((ti, e, a, numeric));
                }
            }
        }
    }
    Ok(report)
}

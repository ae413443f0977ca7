use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scales every gradient by `threshold / norm` when the global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], threshold: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > threshold && threshold > 0.0 {
        let s = threshold / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

/// Adam moments, step count and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_threshold: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64, clip_threshold: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_threshold,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One bias-corrected Adam update. Fails without touching anything when
    /// a gradient is not finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.first_moment[i].len() != g.len() {
                return Err(Error::Shape(format!("adam: parameter {i} size mismatch")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} in parameter {i} element {j} at step {}",
                    g[j],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Clips then steps.
    pub fn clipped_step(&mut self, params: &mut [Tensor], grads: &mut [Vec<f64>]) -> Result<f64> {
        let norm = clip_global_norm(grads, self.clip_threshold);
        if !norm.is_finite() {
            return Err(Error::Training(format!(
                "gradient norm is {norm} at step {}",
                self.step + 1
            )));
        }
        self.step(params, grads)?;
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor> {
        vec![
            Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(),
            Tensor::new(vec![2], vec![0.0, 4.0]).unwrap(),
        ]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3, 5.0);
        st.step(&mut p, &[vec![0.0; 3], vec![0.0; 2]]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn step_counter_increments() {
        let mut p = params();
        let mut st = AdamState::new(&p, 1e-3, 5.0);
        for i in 1..=4 {
            st.step(&mut p, &[vec![0.1; 3], vec![0.2; 2]]).unwrap();
            assert_eq!(st.step, i);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        // With g fixed, m̂ → g and v̂ → g², so each step tends to lr·sign(g).
        let mut p = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let lr = 1e-3;
        let mut st = AdamState::new(&p, lr, 1e9);
        let g = vec![vec![0.37, -5.0]];
        let mut prev = p[0].data().to_vec();
        for _ in 0..2000 {
            st.step(&mut p, &g).unwrap();
            let cur = p[0].data().to_vec();
            let d0 = cur[0] - prev[0];
            let d1 = cur[1] - prev[1];
            assert!(d0 < 0.0 && d1 > 0.0);
            prev = cur;
        }
        let cur = p[0].data().to_vec();
        st.step(&mut p, &g).unwrap();
        let step0 = (p[0].data()[0] - cur[0]).abs();
        let step1 = (p[0].data()[1] - cur[1]).abs();
        assert!((step0 - lr).abs() < 1e-3 * lr, "{step0}");
        assert!((step1 - lr).abs() < 1e-3 * lr, "{step1}");
    }

    #[test]
    fn nan_gradient_is_a_training_error() {
        let mut p = params();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3, 5.0);
        let err = st.step(&mut p, &[vec![0.0, f64::NAN, 0.0], vec![0.0; 2]]);
        assert!(matches!(err, Err(Error::Training(_))));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_follows_definition() {
        // norm 10 → halved at threshold 5
        let mut g = vec![vec![6.0], vec![8.0]];
        let n = clip_global_norm(&mut g, 5.0);
        assert_eq!(n, 10.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
        // norm 3 → unchanged
        let mut g = vec![vec![3.0, 0.0]];
        clip_global_norm(&mut g, 5.0);
        assert_eq!(g, vec![vec![3.0, 0.0]]);
    }

    proptest::proptest! {
        #[test]
        fn post_clip_norm_is_min_of_norm_and_threshold(
            vals in proptest::collection::vec(-100.0f64..100.0, 1..40),
            threshold in 0.01f64..50.0,
        ) {
            let mut g = vec![vals];
            let before = clip_global_norm(&mut g.clone(), threshold);
            clip_global_norm(&mut g, threshold);
            let after = g[0].iter().map(|v| v * v).sum::<f64>().sqrt();
            proptest::prop_assert!((after - before.min(threshold)).abs() < 1e-9);
        }
    }
}

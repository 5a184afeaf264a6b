use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

pub const FINE_TUNE_LEARNING_RATE: f64 = 2e-6;

/// Optimizer state: per-parameter first and second moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(FINE_TUNE_LEARNING_RATE)
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Allocates zeroed moment buffers matching `params`.
    pub fn for_params<F: Real>(learning_rate: f64, params: &[Tensor<F>]) -> Self {
        let mut state = AdamState::new(learning_rate);
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
        state
    }

    fn check_shapes<F: Real>(&self, params: &[Tensor<F>]) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} buffers for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if self.m[i].len() != p.len() || self.v[i].len() != p.len() {
                return Err(Error::Dimension(format!(
                    "moment buffer {i} does not match its parameter"
                )));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update, in place. A missing gradient counts as zero.
/// Moments are kept in 64-bit regardless of the parameter precision.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Option<Vec<F>>],
    state: &mut AdamState,
) -> Result<()> {
    if state.m.is_empty() && state.step_count == 0 {
        *state = AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            ..state.clone()
        };
    }
    state.check_shapes(params)?;
    if grads.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.len() {
                return Err(Error::Dimension("gradient does not match parameter".into()));
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let g = grads[i].as_deref();
        for (j, w) in p.values_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j].to_f64_lossless());
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            if m[j] == 0.0 {
                continue;
            }
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let delta = state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            *w -= F::from_f64_lossy(delta);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(vals: &[f64]) -> Vec<Tensor<f64>> {
        vec![Tensor::vector(vals.to_vec()).unwrap()]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params(&[0.5, -1.0]);
        let mut state = AdamState::for_params(1e-3, &p);
        adam_step(&mut p, &[Some(vec![0.0, 0.0])], &mut state).unwrap();
        assert_eq!(p[0].values(), &[0.5, -1.0]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.03, v = 9e-5; bias-corrected m_hat = 0.3, v_hat = 0.09,
        // step = 1e-3 * 0.3 / (0.3 + 1e-8).
        let mut p = params(&[0.0]);
        let mut state = AdamState::for_params(1e-3, &p);
        adam_step(&mut p, &[Some(vec![0.3])], &mut state).unwrap();
        let expected = -1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((p[0].values()[0] - expected).abs() < 1e-15);
        assert!((p[0].values()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = params(&[0.0]);
        let mut state = AdamState::for_params(1e-3, &p);
        adam_step(&mut p, &[Some(vec![0.3])], &mut state).unwrap();
        let after_one = p[0].values()[0];
        adam_step(&mut p, &[Some(vec![0.3])], &mut state).unwrap();
        let after_two = p[0].values()[0];
        assert!(after_one < 0.0 && after_two < after_one);
        // With a constant gradient both bias-corrected moments equal the
        // gradient exactly, so each step is lr * g / (|g| + eps).
        assert!((after_two - 2.0 * after_one).abs() < 1e-12);
        assert_eq!(state.step_count, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = params(&[0.0, 1.0]);
        let mut state = AdamState::for_params(1e-3, &p);
        let err = adam_step(&mut p, &[Some(vec![1.0])], &mut state);
        assert!(matches!(err, Err(Error::Dimension(_))));
        let mut other = params(&[0.0]);
        assert!(adam_step(&mut other, &[None], &mut state).is_err());
    }

    proptest! {
        #[test]
        fn fresh_state_zero_gradient_never_moves(vals in prop::collection::vec(-10.0f64..10.0, 1..8)) {
            let mut p = params(&vals);
            let mut state = AdamState::for_params(1e-2, &p);
            adam_step(&mut p, &[None], &mut state).unwrap();
            prop_assert_eq!(p[0].values(), &vals[..]);
        }
    }
}

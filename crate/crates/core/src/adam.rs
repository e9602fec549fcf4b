//! Adaptive-moment gradient descent with bias correction.
//!
//! [`adam_step`] applies one update of the standard first/second-moment
//! scheme: exponential moving averages of the gradient and its square are
//! bias-corrected by the running step count, and the parameters move against
//! the corrected first moment scaled by the inverse root of the corrected
//! second moment. All arithmetic is plain `f64` in a fixed order, so a fixed
//! gradient sequence yields bit-identical trajectories across runs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    /// Step size applied to the corrected moment ratio.
    pub lr: f64,
    /// Decay of the first-moment (gradient) average.
    pub beta1: f64,
    /// Decay of the second-moment (squared-gradient) average.
    pub beta2: f64,
    /// Denominator offset guarding against division by zero.
    pub eps: f64,
}

impl Default for AdamParams {
    /// `lr 0.01, beta1 0.9, beta2 0.999, eps 1e-8` — the defaults used by
    /// the perturbation optimizer.
    fn default() -> Self {
        AdamParams { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    /// Same defaults with a different learning rate.
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, ..AdamParams::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid optimizer settings: lr {}, beta1 {}, beta2 {}, eps {}",
                self.lr, self.beta1, self.beta2, self.eps
            )))
        }
    }
}

/// Per-tensor optimizer state: both moment averages and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    t: i32,
}

impl AdamState {
    /// Fresh state (zero moments, step counter zero) for parameters of the
    /// given shape.
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// Applies one in-place update to `params` given `grad`.
///
/// Order of operations (fixed for reproducibility): increment the step
/// counter `t`; update `m ← β₁·m + (1−β₁)·g` and `v ← β₂·v + (1−β₂)·g²`;
/// correct `m̂ = m / (1−β₁ᵗ)`, `v̂ = v / (1−β₂ᵗ)`; move
/// `θ ← θ − lr·m̂ / (√v̂ + eps)`. A zero gradient on fresh state leaves the
/// parameters bit-identical.
///
/// Rejects shape mismatches between state, parameters, and gradient, and
/// non-finite gradients.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut Tensor,
    grad: &Tensor,
    cfg: &AdamParams,
) -> Result<()> {
    cfg.validate()?;
    if params.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: params.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if state.m.shape() != params.shape() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: state.m.shape().to_vec(),
            rhs: params.shape().to_vec(),
        });
    }
    if !grad.all_finite() {
        return Err(Error::Numeric("adam_step: non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t);
    let bc2 = 1.0 - cfg.beta2.powi(state.t);
    let n = params.len();
    for i in 0..n {
        let g = grad.data()[i];
        let m = cfg.beta1 * state.m.data()[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v.data()[i] + (1.0 - cfg.beta2) * (g * g);
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_of_unit_gradient_match_hand_trajectory() {
        // With g = 1 throughout, both corrected moments are exactly 1 at each
        // step, so each update is -lr / (1 + eps); the constants below are the
        // exact f64 results of that arithmetic.
        let mut params = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut state = AdamState::new(&[1]);
        let cfg = AdamParams::default();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        adam_step(&mut state, &mut params, &g, &cfg).unwrap();
        assert!((params.data()[0] - (-0.009999999900000002)).abs() < 1e-12);
        adam_step(&mut state, &mut params, &g, &cfg).unwrap();
        assert!((params.data()[0] - (-0.019999999799999932)).abs() < 1e-12);
        assert_eq!(state.steps(), 2);
    }

    #[test]
    fn zero_gradient_on_fresh_state_is_a_bitwise_noop() {
        let mut params = Tensor::from_vec(&[4], vec![0.5, -0.25, 0.0, 1.75]).unwrap();
        let before: Vec<u64> = params.data().iter().map(|v| v.to_bits()).collect();
        let mut state = AdamState::new(&[4]);
        let g = Tensor::zeros(&[4]);
        adam_step(&mut state, &mut params, &g, &AdamParams::default()).unwrap();
        let after: Vec<u64> = params.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_is_a_signed_unit_step_damped_by_eps() {
        // On the first step the bias corrections cancel exactly, so the move
        // is -lr·g/(|g| + eps): sign(g) scaled by lr, shrunk by the eps
        // offset (noticeably so for tiny gradients).
        let cfg = AdamParams::default();
        for g0 in [3.7, -0.002, 150.0, -42.0] {
            let mut params = Tensor::from_vec(&[1], vec![1.0]).unwrap();
            let mut state = AdamState::new(&[1]);
            let g = Tensor::from_vec(&[1], vec![g0]).unwrap();
            adam_step(&mut state, &mut params, &g, &cfg).unwrap();
            let moved = params.data()[0] - 1.0;
            let want = -cfg.lr * g0 / (g0.abs() + cfg.eps);
            assert!((moved - want).abs() < 1e-15, "grad {g0}: moved {moved}, want {want}");
            assert!(moved.abs() < cfg.lr, "a first step can never exceed lr");
            assert!((moved + cfg.lr * g0.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        // Minimize (x - 3)^2: gradient 2(x - 3).
        let cfg = AdamParams { lr: 0.05, ..AdamParams::default() };
        let mut params = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut state = AdamState::new(&[1]);
        for _ in 0..2000 {
            let g = Tensor::from_vec(&[1], vec![2.0 * (params.data()[0] - 3.0)]).unwrap();
            adam_step(&mut state, &mut params, &g, &cfg).unwrap();
        }
        assert!((params.data()[0] - 3.0).abs() < 1e-3, "ended at {}", params.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = Tensor::zeros(&[3]);
        let mut state = AdamState::new(&[3]);
        let g = Tensor::zeros(&[4]);
        let err = adam_step(&mut state, &mut params, &g, &AdamParams::default()).unwrap_err();
        assert!(err.to_string().contains("adam_step"));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = Tensor::zeros(&[1]);
        let mut state = AdamState::new(&[1]);
        let g = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        assert!(adam_step(&mut state, &mut params, &g, &AdamParams::default()).is_err());
    }

    #[test]
    fn fixed_gradient_sequence_is_bit_deterministic() {
        let run = || {
            let mut params = Tensor::from_vec(&[2], vec![0.3, -0.8]).unwrap();
            let mut state = AdamState::new(&[2]);
            let cfg = AdamParams::default();
            for k in 0..50 {
                let g = Tensor::from_vec(&[2], vec![(k as f64).sin(), (k as f64).cos()]).unwrap();
                adam_step(&mut state, &mut params, &g, &cfg).unwrap();
            }
            params.data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}

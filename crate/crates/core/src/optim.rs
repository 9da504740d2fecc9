//! Gradient-norm clipping and the Adam update rule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rescale `g` so its L2 norm is at most `max_norm`, preserving direction.
/// Non-finite entries are rejected: they signal a diverged backward pass.
pub fn clip_gradient_norm(g: &Tensor, max_norm: f64) -> Result<Tensor> {
    let clipped = clip_gradient_norm_multi(std::slice::from_ref(g), max_norm)?;
    Ok(clipped.into_iter().next().unwrap())
}

/// Global-norm clipping over a list of gradient tensors (one norm for the
/// whole parameter set).
pub fn clip_gradient_norm_multi(grads: &[Tensor], max_norm: f64) -> Result<Vec<Tensor>> {
    if max_norm <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "clip norm must be positive, got {max_norm}"
        )));
    }
    let mut sq = 0.0;
    for g in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to clip".into()));
        }
        sq += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(grads.to_vec());
    }
    let s = max_norm / norm;
    Ok(grads.iter().map(|g| g.scale(s)).collect())
}

/// First/second-moment accumulators for Adam, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Zero-initialized state shaped like `params`, with the default
    /// moment coefficients (β1=0.9, β2=0.999, ε=1e-8).
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArg(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (
        state.beta1,
        state.beta2,
        state.epsilon,
        state.learning_rate,
    );
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for k in 0..p.numel() {
            let gi = g.data()[k];
            let mi = b1 * m.data()[k] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[k] + (1.0 - b2) * gi * gi;
            m.data_mut()[k] = mi;
            v.data_mut()[k] = vi;
            p.data_mut()[k] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rescales_above_threshold() {
        let g = Tensor::from_vec(vec![3.0, 4.0]);
        let c = clip_gradient_norm(&g, 1.0).unwrap();
        assert!((c.data()[0] - 0.6).abs() < 1e-15);
        assert!((c.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let g = Tensor::from_vec(vec![0.1, 0.0]);
        let c = clip_gradient_norm(&g, 1.0).unwrap();
        assert_eq!(c.data(), g.data());
    }

    #[test]
    fn clip_rejects_nan() {
        let g = Tensor::from_vec(vec![f64::NAN, 1.0]);
        assert!(clip_gradient_norm(&g, 1.0).is_err());
    }

    #[test]
    fn clip_high_dim_norm_exact() {
        // 1000-dim gradient with a known norm, rescaled to exactly 2.
        let n = 1000;
        let v = 37.0 / (n as f64).sqrt();
        let g = Tensor::from_vec(vec![v; n]);
        assert!((g.l2_norm() - 37.0).abs() < 1e-9);
        let c = clip_gradient_norm(&g, 2.0).unwrap();
        assert!((c.l2_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = [Tensor::from_vec(vec![1.0, -2.0])];
        let g = [Tensor::from_vec(vec![0.0, 0.0])];
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // Bias-corrected first step moves by lr/(1+ε), independent of the
        // gradient magnitude's scale.
        let mut p = [Tensor::scalar(0.0)];
        let g = [Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut st).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].scalar_value() - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // 200 steps on f(x) = x² from x = 5 with lr 0.1; the update rule is
        // its own oracle here.
        let mut p = [Tensor::scalar(5.0)];
        let mut st = AdamState::new(&p, 0.1);
        for _ in 0..200 {
            let g = [Tensor::scalar(2.0 * p[0].scalar_value())];
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!(
            p[0].scalar_value().abs() < 0.5,
            "x after 200 steps: {}",
            p[0].scalar_value()
        );
    }
}

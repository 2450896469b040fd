use super::{OptimizeError, OptimizerConfig};
use crate::geometry::LayoutParams;
use crate::scalar::Real;

/// Lower bound applied to the scale parameter after every step.
pub const MIN_SCALE: f64 = 1e-4;

/// Bias-corrected first/second moment estimates for the seven layout
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamState<T> {
    pub m: [T; 7],
    pub v: [T; 7],
    pub step: u64,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self { m: [T::zero(); 7], v: [T::zero(); 7], step: 0 }
    }
}

pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &LayoutParams<T>,
    grad: &[T; 7],
    config: &OptimizerConfig<T>,
) -> Result<LayoutParams<T>, OptimizeError> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimizeError::NonFiniteGradient { component: i, step: state.step });
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let mut x = params.to_array();
    for i in 0..7 {
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        x[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    x[6] = x[6].max(T::lit(MIN_SCALE));
    Ok(LayoutParams::from_array(x))
}

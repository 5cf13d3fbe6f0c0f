use super::{check_grad, OptimConfig, OptimizerState};
use crate::error::Result;

/// `sqrt(v_hat) + delta`, or `sqrt(v_hat + delta)` with the damping inside.
pub(crate) fn denominator(v_hat: f64, delta: f64, inside_sqrt: bool) -> f64 {
    if inside_sqrt {
        (v_hat + delta).sqrt()
    } else {
        v_hat.sqrt() + delta
    }
}

/// Bias-corrected Adam step `w <- w - lr m_hat / (sqrt(v_hat) + delta)`.
/// Coupled weight decay enters through the gradient, decoupled decay shrinks
/// `w` by `lr gamma w`.
pub fn adam_step(
    state: &mut OptimizerState,
    grad: &[f64],
    lr: f64,
    config: &OptimConfig,
) -> Result<()> {
    check_grad(state, grad)?;
    let (b1, b2) = config.betas;
    let t = state.step as i32 + 1;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let gamma = config.weight_decay;
    let delta = state.delta;
    for (((w, m), v), &g) in state
        .w
        .iter_mut()
        .zip(state.adam_m.iter_mut())
        .zip(state.adam_v.iter_mut())
        .zip(grad)
    {
        let g = if config.decouple_wd {
            g
        } else {
            g + gamma * *w
        };
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let update = (*m / c1) / denominator(*v / c2, delta, config.inside_sqrt);
        let decay = if config.decouple_wd { gamma * *w } else { 0.0 };
        *w -= lr * (update + decay);
    }
    state.step += 1;
    state.check_diverged()
}

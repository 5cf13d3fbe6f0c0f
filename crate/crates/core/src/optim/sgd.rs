use super::{check_grad, OptimConfig, OptimizerState};
use crate::error::Result;

/// Heavy-ball step `b <- rho b + g`, `w <- w - lr b`. Coupled weight decay
/// adds `gamma w` to the gradient; decoupled decay shrinks `w` by
/// `lr gamma w` alongside the step.
pub fn sgd_step(
    state: &mut OptimizerState,
    grad: &[f64],
    lr: f64,
    config: &OptimConfig,
) -> Result<()> {
    check_grad(state, grad)?;
    let gamma = config.weight_decay;
    let rho = config.momentum;
    for ((w, b), &g) in state.w.iter_mut().zip(state.momentum.iter_mut()).zip(grad) {
        let g = if config.decouple_wd {
            g
        } else {
            g + gamma * *w
        };
        *b = rho * *b + g;
        let decay = if config.decouple_wd {
            lr * gamma * *w
        } else {
            0.0
        };
        *w -= lr * *b + decay;
    }
    state.step += 1;
    state.check_diverged()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ParamVector;

    fn plain(lr: f64) -> OptimConfig {
        let mut c = OptimConfig::sgd(lr);
        c.momentum = 0.0;
        c
    }

    #[test]
    fn plain_gradient_step() {
        let c = plain(0.1);
        let mut s = OptimizerState::new(ParamVector::from(vec![1.0, -2.0]), &c).unwrap();
        sgd_step(&mut s, &[0.5, 1.0], 0.1, &c).unwrap();
        assert_eq!(s.w.as_slice(), &[1.0 - 0.05, -2.0 - 0.1]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn momentum_accumulates() {
        let c = OptimConfig::sgd(1.0);
        let mut s = OptimizerState::new(ParamVector::zeros(1), &c).unwrap();
        sgd_step(&mut s, &[1.0], 1.0, &c).unwrap();
        sgd_step(&mut s, &[1.0], 1.0, &c).unwrap();
        assert!((s.w[0] + 1.0 + 1.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_variants() {
        let mut c = plain(0.1);
        c.weight_decay = 0.5;
        let mut s = OptimizerState::new(ParamVector::from(vec![2.0]), &c).unwrap();
        sgd_step(&mut s, &[0.0], 0.1, &c).unwrap();
        assert!((s.w[0] - (2.0 - 0.1 * 1.0)).abs() < 1e-15);
        c.decouple_wd = true;
        let mut s = OptimizerState::new(ParamVector::from(vec![2.0]), &c).unwrap();
        sgd_step(&mut s, &[1.0], 0.1, &c).unwrap();
        assert!((s.w[0] - (2.0 - 0.1 - 0.1)).abs() < 1e-15);
    }
}

use super::{check_grad, OptimConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::lanczos::{lanczos, project_sharp, SpectralDecomposition};
use crate::linalg::ParamVector;
use crate::model::{Batch, ModelSpec};

/// A LanczosOPT update split into its component inside the Ritz subspace and
/// the orthogonal remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub sharp: ParamVector,
    pub flat: ParamVector,
}

impl Displacement {
    pub fn total(&self) -> ParamVector {
        let mut t = self.sharp.clone();
        t.axpy(1.0, &self.flat);
        t
    }
}

/// `-lr [ (1/eta) sum_i c_i / (max(lambda_i, 0) + delta) phi_i + r / delta ]`
/// where `g = sum_i c_i phi_i + r`.
pub fn lanczos_displacement(
    decomp: &SpectralDecomposition,
    grad: &[f64],
    lr: f64,
    delta: f64,
    eta: f64,
) -> Result<Displacement> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("damping {delta} must be > 0")));
    }
    let (coeffs, residual) = project_sharp(decomp, grad)?;
    let mut sharp = ParamVector::zeros(grad.len());
    for ((c, lam), phi) in coeffs
        .iter()
        .zip(&decomp.ritz_values)
        .zip(&decomp.ritz_vectors)
    {
        sharp.axpy(-lr / eta * c / (lam.max(0.0) + delta), phi);
    }
    Ok(Displacement {
        sharp,
        flat: residual.scaled(-lr / delta),
    })
}

/// One LanczosOPT step: (re)build the Ritz decomposition of the batch
/// Hessian at the current parameters when due, then apply
/// [`lanczos_displacement`].
pub fn lanczos_opt_step(
    state: &mut OptimizerState,
    model: &ModelSpec,
    batch: &Batch,
    grad: &[f64],
    lr: f64,
    config: &OptimConfig,
    seed: u64,
) -> Result<()> {
    check_grad(state, grad)?;
    let gamma = config.weight_decay;
    let mut g = ParamVector::from(grad);
    if !config.decouple_wd && gamma > 0.0 {
        g.axpy(gamma, &state.w);
    }
    if state.decomposition.is_none() || state.step.is_multiple_of(config.refresh_every) {
        let op = model.curvature(&state.w, batch)?;
        let k = config.k.min(model.dim());
        state.decomposition = Some(lanczos(&op, k, seed)?);
    }
    let decomp = state
        .decomposition
        .as_ref()
        .expect("decomposition was just built");
    let d = lanczos_displacement(decomp, &g, lr, state.delta, config.eta)?;
    if config.decouple_wd && gamma > 0.0 {
        let decay = state.w.clone().scaled(-lr * gamma);
        state.w.axpy(1.0, &decay);
    }
    state.w.axpy(1.0, &d.sharp);
    state.w.axpy(1.0, &d.flat);
    state.step += 1;
    state.check_diverged()
}

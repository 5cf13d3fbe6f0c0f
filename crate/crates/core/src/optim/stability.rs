use super::{OptimConfig, Optimizer};
use crate::error::{Error, Result};
use crate::lanczos::SpectralDecomposition;
use crate::linalg::{dot, ParamVector, SymMatrix};
use crate::model::{Batch, ModelSpec};

/// `(max(lambda_1, 0) + delta) / (max(lambda_k, 0) + delta)`: how much larger
/// the learning rate along the flattest estimated direction is than along
/// the sharpest.
pub fn r_est_curv(decomp: &SpectralDecomposition, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("damping {delta} must be > 0")));
    }
    if decomp.k() == 0 {
        return Err(Error::invalid("empty decomposition"));
    }
    Ok((decomp.largest().max(0.0) + delta) / (decomp.smallest().max(0.0) + delta))
}

/// Largest stable learning rate `2 / max_i (|phi_i^T H phi_i| / (eta_i + delta))`
/// of the preconditioned update `w <- w - lr B^{-1} H w`, where `B` has
/// eigenvalues `eta_i` on the orthonormal `basis`. Directions with
/// `eta_i + delta = 0` are skipped.
pub fn stable_lr_bound(
    h: &SymMatrix,
    precond_eigs: &[f64],
    basis: &[ParamVector],
    delta: f64,
) -> Result<f64> {
    if precond_eigs.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: precond_eigs.len(),
            got: basis.len(),
        });
    }
    let mut hv = ParamVector::zeros(h.dim());
    let mut worst = 0.0f64;
    let mut any = false;
    for (&eta, phi) in precond_eigs.iter().zip(basis) {
        if phi.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                got: phi.dim(),
            });
        }
        let denom = eta + delta;
        if denom == 0.0 {
            continue;
        }
        any = true;
        h.apply_into(phi, &mut hv);
        worst = worst.max(dot(phi, &hv).abs() / denom);
    }
    if !any {
        return Err(Error::invalid(
            "every preconditioner eigenvalue plus damping is zero",
        ));
    }
    Ok(2.0 / worst)
}

/// Fate of a fixed-rate run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The loss kept decreasing through the second half of the run.
    Converged,
    /// Neither decreasing nor blowing up (e.g. exactly at the stability edge).
    Stalled,
    /// Non-finite values, parameter blow-up, or a final loss above the
    /// starting loss.
    Diverged,
}

impl Outcome {
    pub fn is_stable(self) -> bool {
        self == Outcome::Converged
    }
}

/// Runs `steps` updates at a constant learning rate and classifies the run.
pub fn simulate(
    model: &ModelSpec,
    batch: &Batch,
    w0: &ParamVector,
    config: &OptimConfig,
    lr: f64,
    steps: usize,
) -> Result<Outcome> {
    if steps < 2 {
        return Err(Error::invalid("need at least two steps"));
    }
    let mut opt = Optimizer::new(config.clone(), w0.clone(), 0)?;
    let mut first = None;
    let mut mid = f64::NAN;
    for t in 0..steps {
        match opt.step(model, batch, lr) {
            Ok(r) => {
                first.get_or_insert(r.loss);
                if t == steps / 2 {
                    mid = r.loss;
                }
            }
            Err(Error::Diverged { .. }) => return Ok(Outcome::Diverged),
            Err(e) => return Err(e),
        }
    }
    let last = match model.evaluate(opt.params(), batch) {
        Ok(e) => e.loss,
        Err(Error::NonFinite(_)) => return Ok(Outcome::Diverged),
        Err(e) => return Err(e),
    };
    let first = first.expect("at least one step ran");
    Ok(if !last.is_finite() || last > first {
        Outcome::Diverged
    } else if last <= 1e-12 * first || last < (1.0 - 1e-6) * mid {
        Outcome::Converged
    } else {
        Outcome::Stalled
    })
}

/// Bisects for the learning rate at which runs stop converging, given a
/// stable `lo` and an unstable `hi`.
pub fn divergence_onset(
    model: &ModelSpec,
    batch: &Batch,
    w0: &ParamVector,
    config: &OptimConfig,
    mut lo: f64,
    mut hi: f64,
    steps: usize,
    iterations: usize,
) -> Result<f64> {
    if !simulate(model, batch, w0, config, lo, steps)?.is_stable() {
        return Err(Error::invalid(format!("lower bracket {lo} is not stable")));
    }
    if simulate(model, batch, w0, config, hi, steps)?.is_stable() {
        return Err(Error::invalid(format!("upper bracket {hi} is stable")));
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if simulate(model, batch, w0, config, mid, steps)?.is_stable() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

//! Damping as linear shrinkage, the optimal damping level, the Hessian
//! variance estimator and the online damping controller.
//!
//! Inverting `lambda + delta` is the same as inverting the shrunk curvature
//! `beta lambda + (1 - beta)` and rescaling by `1 / kappa`, with
//! `beta = 1 / (1 + delta)` and `kappa = 1 + delta`. If the batch curvature
//! is the true one plus noise with spectral second moment `mu_2`, the
//! shrinkage error `beta^2 mu_2 + (1 - beta)^2` is minimized at
//! `beta = 1 / (1 + mu_2)`, i.e. `delta = mu_2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, LinearOperator, ParamVector, SymMatrix};
use crate::model::{Batch, ModelSpec};
use crate::random::{seeded, unit_vector};

/// Shrinkage intensity `beta` and rescale `kappa` equivalent to damping
/// `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageParams {
    pub delta: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl ShrinkageParams {
    /// `delta = (1 - beta) / beta`.
    pub fn delta_from_beta(beta: f64) -> f64 {
        (1.0 - beta) / beta
    }

    /// `1 / (lambda + delta)` written as `[1 / (beta lambda + 1 - beta)] / kappa`.
    pub fn shrunk_inverse(&self, lambda: f64) -> f64 {
        1.0 / (self.beta * lambda + (1.0 - self.beta)) / self.kappa
    }
}

pub fn shrinkage_from_delta(delta: f64) -> Result<ShrinkageParams> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "damping {delta} must be finite and >= 0"
        )));
    }
    Ok(ShrinkageParams {
        delta,
        beta: 1.0 / (1.0 + delta),
        kappa: 1.0 + delta,
    })
}

/// `beta H + (1 - beta) I`.
pub fn shrunk_matrix(h: &SymMatrix, beta: f64) -> Result<SymMatrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "shrinkage intensity {beta} outside [0, 1]"
        )));
    }
    let mut out = h.clone();
    out.scale(beta);
    out.add_diagonal(1.0 - beta);
    Ok(out)
}

/// `E(beta) = beta^2 mu_2 + (1 - beta)^2`.
pub fn shrinkage_mse(beta: f64, mu2: f64) -> f64 {
    beta * beta * mu2 + (1.0 - beta).powi(2)
}

/// `(beta*, delta*) = (1 / (1 + mu_2), mu_2)`.
pub fn optimal_damping(mu2: f64) -> Result<(f64, f64)> {
    if !(mu2 >= 0.0) || !mu2.is_finite() {
        return Err(Error::invalid(format!(
            "second moment {mu2} must be finite and >= 0"
        )));
    }
    Ok((1.0 / (1.0 + mu2), mu2))
}

/// `P^{-1} Tr M^2` for a symmetric matrix, i.e. the second moment of its
/// spectrum.
pub fn spectral_second_moment(m: &SymMatrix) -> f64 {
    m.frobenius_norm().powi(2) / m.dim() as f64
}

/// How a single probe turns batch products into a variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceForm {
    /// `(1/N) sum_i |H_i v - Hbar v|^2`, an unbiased Hutchinson estimate of
    /// `P^{-1} Tr[(1/N) sum_i (H_i - Hbar)^2]` for unit Gaussian `v`.
    Centered,
    /// `(1/N) sum_i v^T H_i^2 v - (v^T Hbar v)^2`, the probe-level
    /// second-moment-minus-squared-mean form.
    Listing,
}

/// Result of [`estimate_hessian_variance`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// Mean over probes, clipped below at zero.
    pub sigma2: f64,
    /// Per-probe estimates before clipping.
    pub per_probe: Vec<f64>,
}

pub const DEFAULT_PROBES: usize = 8;

/// Estimates the spread of the batch Hessians `H_i` around their mean from
/// Hessian-vector products alone: for each unit Gaussian probe `v` one
/// product `H_i v` per batch.
pub fn estimate_hessian_variance(
    model: &ModelSpec,
    w: &[f64],
    batches: &[Batch],
    n_probes: usize,
    seed: u64,
    form: VarianceForm,
) -> Result<VarianceEstimate> {
    let ops = batches
        .iter()
        .map(|b| model.curvature(w, b))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&(dyn LinearOperator + Sync)> = ops.iter().map(|o| o as _).collect();
    estimate_operator_variance(&refs, n_probes, seed, form)
}

/// [`estimate_hessian_variance`] over explicit operators `H_1 .. H_N`.
pub fn estimate_operator_variance(
    ops: &[&(dyn LinearOperator + Sync)],
    n_probes: usize,
    seed: u64,
    form: VarianceForm,
) -> Result<VarianceEstimate> {
    if ops.len() < 2 {
        return Err(Error::invalid(
            "the variance estimate needs at least two batches",
        ));
    }
    if n_probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    let p = ops[0].dim();
    if let Some(bad) = ops.iter().find(|o| o.dim() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.dim(),
        });
    }
    let mut rng = seeded(seed);
    let probes: Vec<ParamVector> = (0..n_probes).map(|_| unit_vector(&mut rng, p)).collect();
    let n = ops.len() as f64;
    let mut per_probe = Vec::with_capacity(n_probes);
    for v in &probes {
        let products = ops
            .par_iter()
            .map(|op| {
                let mut y = ParamVector::zeros(p);
                op.apply(v, &mut y).map(|_| y)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mean = ParamVector::zeros(p);
        for y in &products {
            mean.axpy(1.0 / n, y);
        }
        let est = match form {
            VarianceForm::Centered => {
                products
                    .iter()
                    .map(|y| {
                        y.iter()
                            .zip(mean.iter())
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / n
            }
            VarianceForm::Listing => {
                let s2 = products.iter().map(|y| dot(y, y)).sum::<f64>() / n;
                let m = dot(v, &mean);
                s2 - m * m
            }
        };
        per_probe.push(est);
    }
    let raw = per_probe.iter().sum::<f64>() / n_probes as f64;
    Ok(VarianceEstimate {
        sigma2: raw.max(0.0),
        per_probe,
    })
}

pub const DEFAULT_EMA: f64 = 0.7;
pub const DEFAULT_UPDATE_INTERVAL: usize = 100;
/// Fraction of the initial damping used as the floor when the floor is not
/// strict.
pub const RELAXED_FLOOR_FRACTION: f64 = 1e-2;

/// Online damping controller: every `update_interval` steps the damping moves
/// towards the latest variance estimate by an exponential moving average and
/// is then floored.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingState {
    pub current_delta: f64,
    /// The initial damping `delta*`.
    pub floor: f64,
    pub ema_coeff: f64,
    pub update_interval: usize,
    /// When set, damping never drops below `delta*`; otherwise below
    /// `RELAXED_FLOOR_FRACTION * delta*`.
    pub strict_floor: bool,
    pub last_estimate: Option<f64>,
    pub history: Vec<(usize, f64)>,
}

impl DampingState {
    pub fn new(initial: f64) -> Result<Self> {
        if !(initial > 0.0) || !initial.is_finite() {
            return Err(Error::invalid(format!(
                "initial damping {initial} must be finite and > 0"
            )));
        }
        Ok(DampingState {
            current_delta: initial,
            floor: initial,
            ema_coeff: DEFAULT_EMA,
            update_interval: DEFAULT_UPDATE_INTERVAL,
            strict_floor: true,
            last_estimate: None,
            history: vec![(0, initial)],
        })
    }

    pub fn with_ema(mut self, ema_coeff: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_coeff) {
            return Err(Error::invalid(format!(
                "EMA coefficient {ema_coeff} outside [0, 1)"
            )));
        }
        self.ema_coeff = ema_coeff;
        Ok(self)
    }

    pub fn with_interval(mut self, interval: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::invalid("update interval must be positive"));
        }
        self.update_interval = interval;
        Ok(self)
    }

    pub fn with_strict_floor(mut self, strict: bool) -> Self {
        self.strict_floor = strict;
        self
    }

    pub fn floor_value(&self) -> f64 {
        if self.strict_floor {
            self.floor
        } else {
            RELAXED_FLOOR_FRACTION * self.floor
        }
    }

    pub fn is_due(&self, step: usize) -> bool {
        step.is_multiple_of(self.update_interval)
    }

    /// Applies one update if `step` falls on the interval. Returns whether the
    /// state changed.
    pub fn update(&mut self, sigma2: f64, step: usize) -> Result<bool> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!(
                "variance estimate {sigma2} must be finite and >= 0"
            )));
        }
        if !self.is_due(step) {
            return Ok(false);
        }
        let blended = self.ema_coeff * self.current_delta + (1.0 - self.ema_coeff) * sigma2;
        self.current_delta = blended.max(self.floor_value());
        self.last_estimate = Some(sigma2);
        self.history.push((step, self.current_delta));
        Ok(true)
    }
}

/// Functional form of [`DampingState::update`].
pub fn auto_damp_update(state: &DampingState, sigma2: f64, step: usize) -> Result<DampingState> {
    let mut next = state.clone();
    next.update(sigma2, step)?;
    Ok(next)
}

//! Largest stable learning rate along an explicit grid.

use crate::data::synthetic_quadratic;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::model::{Batch, ModelSpec};
use crate::optim::{simulate, OptimConfig, Outcome};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Outcome per grid learning rate, in grid order.
    pub outcomes: Vec<(f64, Outcome)>,
    /// Largest learning rate whose run converged; `None` when none did.
    pub largest_stable: Option<f64>,
}

/// Runs `steps` constant-rate updates at every learning rate of an ascending
/// grid.
pub fn stability_sweep(
    model: &ModelSpec,
    batch: &Batch,
    w0: &ParamVector,
    config: &OptimConfig,
    lrs: &[f64],
    steps: usize,
) -> Result<SweepResult> {
    if lrs.is_empty() {
        return Err(Error::invalid("learning-rate grid is empty"));
    }
    if lrs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(
            "learning-rate grid must be strictly ascending",
        ));
    }
    let outcomes = lrs
        .iter()
        .map(|&lr| simulate(model, batch, w0, config, lr, steps).map(|o| (lr, o)))
        .collect::<Result<Vec<_>>>()?;
    let largest_stable = outcomes
        .iter()
        .rev()
        .find(|(_, o)| o.is_stable())
        .map(|&(lr, _)| lr);
    if largest_stable.is_none() {
        log::warn!("no learning rate in the grid was stable");
    }
    Ok(SweepResult {
        outcomes,
        largest_stable,
    })
}

/// Stability sweep on a synthetic quadratic with the given spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySpec {
    pub optimizer: OptimConfig,
    pub lrs: Vec<f64>,
    pub steps: usize,
    pub spectrum: Vec<f64>,
    pub seed: u64,
}

impl StabilitySpec {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.lrs.is_empty() {
            return Err(Error::Config("`stability_lrs` is empty".into()));
        }
        if self.spectrum.is_empty() {
            return Err(Error::Config("`stability_spectrum` is empty".into()));
        }
        if self.steps < 2 {
            return Err(Error::Config("`stability_steps` must be >= 2".into()));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<SweepResult> {
        self.validate()?;
        let (h, w0) = synthetic_quadratic(&self.spectrum, self.seed)?;
        let model = ModelSpec::quadratic(h);
        stability_sweep(
            &model,
            &Batch::empty(),
            &w0,
            &self.optimizer,
            &self.lrs,
            self.steps,
        )
    }
}

//! Optimizers: heavy-ball SGD, Adam with explicit damping, and the Lanczos
//! second-order method with a sharp-direction perturbation, together with
//! learning-rate schedules and curvature diagnostics.

mod adam;
mod lanczos_opt;
mod schedule;
mod sgd;
mod stability;

use std::fmt;
use std::str::FromStr;

pub use adam::adam_step;
pub use lanczos_opt::{lanczos_displacement, lanczos_opt_step, Displacement};
pub use schedule::{
    schedule_lr, ScheduleKind, ScheduleSpec, DEFAULT_FLOOR_RATIO, DEFAULT_WARM_FACTOR,
};
pub use sgd::sgd_step;
pub use stability::{divergence_onset, r_est_curv, simulate, stable_lr_bound, Outcome};

use crate::error::{Error, Result};
use crate::lanczos::SpectralDecomposition;
use crate::linalg::ParamVector;
use crate::model::{Batch, ModelSpec};
use crate::random::derive_seed;
use crate::shrinkage::{estimate_hessian_variance, DampingState, VarianceForm, DEFAULT_PROBES};

/// Parameter norm beyond which a run counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    LanczosOpt,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::LanczosOpt => "lanczos_opt",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "gd" => Ok(OptimizerKind::Sgd),
            "adam" | "adamw" => Ok(OptimizerKind::Adam),
            "lanczos_opt" | "lanczosopt" | "lopt" => Ok(OptimizerKind::LanczosOpt),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Settings of the online damping controller.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoDampConfig {
    pub ema_coeff: f64,
    pub update_interval: usize,
    pub strict_floor: bool,
    pub probes: usize,
    pub form: VarianceForm,
    /// Size of the batches whose Hessians are compared.
    pub batch_size: usize,
    /// Number of batches per variance estimate.
    pub n_batches: usize,
}

impl Default for AutoDampConfig {
    fn default() -> Self {
        AutoDampConfig {
            ema_coeff: crate::shrinkage::DEFAULT_EMA,
            update_interval: crate::shrinkage::DEFAULT_UPDATE_INTERVAL,
            strict_floor: true,
            probes: DEFAULT_PROBES,
            form: VarianceForm::Centered,
            batch_size: 128,
            n_batches: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub betas: (f64, f64),
    pub damping: f64,
    /// Divisor applied to the step along the Lanczos directions.
    pub eta: f64,
    /// Lanczos steps.
    pub k: usize,
    pub weight_decay: f64,
    pub decouple_wd: bool,
    /// Adam only: put the damping under the square root.
    pub inside_sqrt: bool,
    /// Recompute the Lanczos decomposition every this many steps.
    pub refresh_every: usize,
    pub auto_damp: Option<AutoDampConfig>,
}

impl OptimConfig {
    fn base(kind: OptimizerKind, lr: f64, damping: f64) -> Self {
        OptimConfig {
            kind,
            lr,
            momentum: 0.9,
            betas: (0.9, 0.999),
            damping,
            eta: 1.0,
            k: 50,
            weight_decay: 0.0,
            decouple_wd: false,
            inside_sqrt: false,
            refresh_every: 1,
            auto_damp: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::base(OptimizerKind::Sgd, lr, 0.0)
    }

    pub fn adam(lr: f64, damping: f64) -> Self {
        Self::base(OptimizerKind::Adam, lr, damping)
    }

    pub fn lanczos_opt(lr: f64, damping: f64) -> Self {
        Self::base(OptimizerKind::LanczosOpt, lr, damping)
    }

    /// Damping-to-learning-rate ratio `delta / alpha`.
    pub fn damping_lr_ratio(&self) -> f64 {
        self.damping / self.lr
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be > 0", self.lr));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return bad(format!("damping {} must be >= 0", self.damping));
        }
        if self.kind == OptimizerKind::LanczosOpt && self.damping <= 0.0 {
            return bad("lanczos_opt needs damping > 0".into());
        }
        if !(self.eta >= 1.0) {
            return bad(format!("eta {} must be >= 1", self.eta));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad(format!("Adam betas {:?} outside [0, 1)", self.betas));
        }
        if self.k == 0 {
            return bad("Lanczos steps k must be positive".into());
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if let Some(a) = &self.auto_damp {
            if self.damping <= 0.0 {
                return bad("auto-damping needs a positive initial damping".into());
            }
            if !(0.0..1.0).contains(&a.ema_coeff)
                || a.update_interval == 0
                || a.probes == 0
                || a.batch_size == 0
                || a.n_batches < 2
            {
                return bad("invalid auto-damping settings".into());
            }
        }
        Ok(())
    }
}

/// Mutable optimizer state for one run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub w: ParamVector,
    /// Completed steps.
    pub step: usize,
    pub momentum: ParamVector,
    pub adam_m: ParamVector,
    pub adam_v: ParamVector,
    pub decomposition: Option<SpectralDecomposition>,
    /// Damping in effect (changes only under auto-damping).
    pub delta: f64,
    pub damping: Option<DampingState>,
}

impl OptimizerState {
    pub fn new(w: ParamVector, config: &OptimConfig) -> Result<Self> {
        let p = w.dim();
        let damping = match &config.auto_damp {
            Some(a) => Some(
                DampingState::new(config.damping)?
                    .with_ema(a.ema_coeff)?
                    .with_interval(a.update_interval)?
                    .with_strict_floor(a.strict_floor),
            ),
            None => None,
        };
        Ok(OptimizerState {
            w,
            step: 0,
            momentum: ParamVector::zeros(p),
            adam_m: ParamVector::zeros(p),
            adam_v: ParamVector::zeros(p),
            decomposition: None,
            delta: config.damping,
            damping,
        })
    }

    pub(crate) fn check_diverged(&self) -> Result<()> {
        if !self.w.is_finite() || self.w.norm() > DIVERGENCE_NORM {
            Err(Error::Diverged { step: self.step })
        } else {
            Ok(())
        }
    }
}

pub(crate) fn check_grad(state: &OptimizerState, grad: &[f64]) -> Result<()> {
    if grad.len() != state.w.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.w.dim(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { step: state.step });
    }
    Ok(())
}

/// Loss statistics of the parameters a step started from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub error_rate: f64,
    pub grad_norm: f64,
}

/// Config plus state plus the seed that drives Lanczos starting vectors and
/// variance probes.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub state: OptimizerState,
    seed: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig, w0: ParamVector, seed: u64) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(w0, &config)?;
        Ok(Optimizer {
            config,
            state,
            seed,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.w
    }

    pub fn delta(&self) -> f64 {
        self.state.delta
    }

    /// One update with learning rate `lr` on `batch`. Non-finite losses or
    /// parameters surface as [`Error::Diverged`].
    pub fn step(&mut self, model: &ModelSpec, batch: &Batch, lr: f64) -> Result<StepReport> {
        let diverged = |e: Error, step| match e {
            Error::NonFinite(_) => Error::Diverged { step },
            other => other,
        };
        let step = self.state.step;
        let eval = model
            .batch_loss_grad(&self.state.w, batch)
            .map_err(|e| diverged(e, step))?;
        let report = StepReport {
            loss: eval.loss,
            error_rate: eval.error_rate,
            grad_norm: eval.gradient.norm(),
        };
        match self.config.kind {
            OptimizerKind::Sgd => sgd_step(&mut self.state, &eval.gradient, lr, &self.config)?,
            OptimizerKind::Adam => adam_step(&mut self.state, &eval.gradient, lr, &self.config)?,
            OptimizerKind::LanczosOpt => {
                let seed = derive_seed(self.seed, step as u64);
                lanczos_opt_step(
                    &mut self.state,
                    model,
                    batch,
                    &eval.gradient,
                    lr,
                    &self.config,
                    seed,
                )
                .map_err(|e| diverged(e, step))?;
            }
        }
        Ok(report)
    }

    /// Runs the damping controller if it is due after the last completed
    /// step. Returns the new damping when an update happened.
    pub fn update_damping(&mut self, model: &ModelSpec, batches: &[Batch]) -> Result<Option<f64>> {
        let (Some(cfg), Some(ds)) = (&self.config.auto_damp, &self.state.damping) else {
            return Ok(None);
        };
        let step = self.state.step;
        if step == 0 || !ds.is_due(step) {
            return Ok(None);
        }
        let seed = derive_seed(self.seed ^ 0xDA3F, step as u64);
        let est =
            estimate_hessian_variance(model, &self.state.w, batches, cfg.probes, seed, cfg.form)?;
        let ds = self.state.damping.as_mut().expect("checked above");
        ds.update(est.sigma2, step)?;
        self.state.delta = ds.current_delta;
        log::debug!(
            "step {step}: variance estimate {:.4e}, damping {:.4e}",
            est.sigma2,
            self.state.delta
        );
        Ok(Some(self.state.delta))
    }

    /// Ratio of the largest to the smallest per-direction learning rate the
    /// preconditioner currently applies: 1 for SGD, the spread of
    /// `1 / (sqrt(v) + delta)` for Adam, and [`r_est_curv`] of the latest
    /// decomposition for LanczosOPT.
    pub fn r_est_curv(&self) -> Option<f64> {
        match self.config.kind {
            OptimizerKind::Sgd => Some(1.0),
            OptimizerKind::Adam => {
                if self.state.step == 0 {
                    return Some(1.0);
                }
                let bc = 1.0 - self.config.betas.1.powi(self.state.step as i32);
                let (lo, hi) = self
                    .state
                    .adam_v
                    .iter()
                    .map(|v| adam::denominator(v / bc, self.state.delta, self.config.inside_sqrt))
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
                        (lo.min(d), hi.max(d))
                    });
                (lo > 0.0).then(|| hi / lo)
            }
            OptimizerKind::LanczosOpt => self
                .state
                .decomposition
                .as_ref()
                .and_then(|d| r_est_curv(d, self.state.delta).ok()),
        }
    }
}

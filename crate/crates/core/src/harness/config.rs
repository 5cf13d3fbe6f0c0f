//! Flat `key = value` experiment configuration in TOML syntax.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::experiment::{DataSpec, ExperimentSpec, ModelChoice};
use super::sweep::StabilitySpec;
use crate::error::{Error, Result};
use crate::model::Init;
use crate::optim::{AutoDampConfig, OptimConfig, OptimizerKind, ScheduleKind};
use crate::rmt::SpikedEnsembleSpec;
use crate::shrinkage::VarianceForm;

/// A scalar or a list, so grid keys accept `lr = 0.01` as well as
/// `lr = [0.01, 0.1]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn one(x: f64) -> OneOrMany {
    OneOrMany::One(x)
}

/// Every key with its default. Only `seeds` is required.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub name: String,
    pub seeds: Vec<u64>,

    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub data_seed: Option<u64>,
    pub synthetic_dim: usize,
    pub synthetic_classes: usize,

    pub model: String,
    pub hidden: usize,
    pub init: String,

    pub optimizer: String,
    pub lr: OneOrMany,
    pub damping: OneOrMany,
    pub eta: OneOrMany,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub k: usize,
    pub weight_decay: f64,
    pub decouple_wd: bool,
    pub inside_sqrt: bool,
    pub refresh_every: usize,

    pub auto_damp: bool,
    pub auto_damp_ema: f64,
    pub auto_damp_interval: usize,
    pub auto_damp_strict_floor: bool,
    pub auto_damp_probes: usize,
    pub auto_damp_form: String,
    pub auto_damp_batch_size: usize,
    pub auto_damp_batches: usize,

    pub schedule: String,
    pub floor_ratio: f64,
    pub warm_factor: f64,
    pub epochs: usize,
    /// Mini-batch size; absent means full-batch steps.
    pub batch_size: Option<usize>,
    pub metric_every: usize,

    pub rmt_dim: usize,
    pub rmt_batch: usize,
    pub rmt_sigma: f64,
    /// Spike strengths in units of the bulk scale `s`.
    pub rmt_spikes: Vec<f64>,
    pub rmt_seeds: usize,

    /// Learning rates tried by the stability sweep, ascending.
    pub stability_lrs: Vec<f64>,
    pub stability_steps: usize,
    /// Eigenvalues of the synthetic quadratic the sweep runs on.
    pub stability_spectrum: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let auto = AutoDampConfig::default();
        Config {
            name: "experiment".into(),
            seeds: Vec::new(),
            dataset: "mnist".into(),
            data_dir: None,
            train_size: Some(1000),
            test_size: None,
            data_seed: None,
            synthetic_dim: 20,
            synthetic_classes: 3,
            model: "softmax".into(),
            hidden: crate::model::DEFAULT_HIDDEN,
            init: "zeros".into(),
            optimizer: "lanczos_opt".into(),
            lr: one(0.01),
            damping: one(1e-2),
            eta: one(1.0),
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            k: 50,
            weight_decay: 0.0,
            decouple_wd: false,
            inside_sqrt: false,
            refresh_every: 1,
            auto_damp: false,
            auto_damp_ema: auto.ema_coeff,
            auto_damp_interval: auto.update_interval,
            auto_damp_strict_floor: auto.strict_floor,
            auto_damp_probes: auto.probes,
            auto_damp_form: "centered".into(),
            auto_damp_batch_size: auto.batch_size,
            auto_damp_batches: auto.n_batches,
            schedule: "flat".into(),
            floor_ratio: crate::optim::DEFAULT_FLOOR_RATIO,
            warm_factor: crate::optim::DEFAULT_WARM_FACTOR,
            epochs: 500,
            batch_size: None,
            metric_every: 10,
            rmt_dim: 1024,
            rmt_batch: 100,
            rmt_sigma: 1.0,
            rmt_spikes: vec![0.8, 1.5, 2.0, 3.0, 5.0],
            rmt_seeds: 20,
            stability_lrs: Vec::new(),
            stability_steps: 200,
            stability_spectrum: Vec::new(),
        }
    }
}

fn parse_form(s: &str) -> Result<VarianceForm> {
    match s {
        "centered" => Ok(VarianceForm::Centered),
        "listing" => Ok(VarianceForm::Listing),
        other => Err(Error::Config(format!("unknown variance form {other:?}"))),
    }
}

fn parse_init(s: &str) -> Result<Init> {
    match s {
        "zeros" => Ok(Init::Zeros),
        "fan_in" => Ok(Init::FanIn),
        other => Err(Error::Config(format!("unknown init {other:?}"))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.seeds.is_empty() {
            return Err(Error::Config(
                "`seeds` is required and must be nonempty".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn variance_form(&self) -> Result<VarianceForm> {
        parse_form(&self.auto_damp_form)
    }

    /// Optimizer settings with the first grid value of `lr`, `damping` and
    /// `eta`.
    pub fn optim_config(&self) -> Result<OptimConfig> {
        let kind: OptimizerKind = self.optimizer.parse()?;
        let first = |v: &OneOrMany, key: &str| {
            v.to_vec()
                .first()
                .copied()
                .ok_or_else(|| Error::Config(format!("`{key}` is empty")))
        };
        let auto_damp = if self.auto_damp {
            Some(AutoDampConfig {
                ema_coeff: self.auto_damp_ema,
                update_interval: self.auto_damp_interval,
                strict_floor: self.auto_damp_strict_floor,
                probes: self.auto_damp_probes,
                form: self.variance_form()?,
                batch_size: self.auto_damp_batch_size,
                n_batches: self.auto_damp_batches,
            })
        } else {
            None
        };
        Ok(OptimConfig {
            kind,
            lr: first(&self.lr, "lr")?,
            momentum: self.momentum,
            betas: (self.beta1, self.beta2),
            damping: if kind == OptimizerKind::Sgd {
                0.0
            } else {
                first(&self.damping, "damping")?
            },
            eta: first(&self.eta, "eta")?,
            k: self.k,
            weight_decay: self.weight_decay,
            decouple_wd: self.decouple_wd,
            inside_sqrt: self.inside_sqrt,
            refresh_every: self.refresh_every,
            auto_damp,
        })
    }

    pub fn data_spec(&self) -> Result<DataSpec> {
        Ok(DataSpec {
            kind: self.dataset.parse()?,
            root: self.data_dir.clone().unwrap_or_else(crate::data::data_dir),
            train_size: self.train_size,
            test_size: self.test_size,
            seed: self.data_seed.unwrap_or(self.seeds[0]),
            synthetic_dim: self.synthetic_dim,
            synthetic_classes: self.synthetic_classes,
        })
    }

    pub fn model_choice(&self) -> Result<ModelChoice> {
        match self.model.as_str() {
            "softmax" | "logistic" => Ok(ModelChoice::Softmax),
            "mlp" => Ok(ModelChoice::Mlp {
                hidden: self.hidden,
            }),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let optimizer = self.optim_config()?;
        let deltas = if optimizer.kind == OptimizerKind::Sgd {
            vec![0.0]
        } else {
            self.damping.to_vec()
        };
        let spec = ExperimentSpec {
            name: self.name.clone(),
            data: self.data_spec()?,
            model: self.model_choice()?,
            init: parse_init(&self.init)?,
            optimizer,
            lrs: self.lr.to_vec(),
            deltas,
            etas: self.eta.to_vec(),
            schedule: self.schedule.parse::<ScheduleKind>()?,
            floor_ratio: self.floor_ratio,
            warm_factor: self.warm_factor,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seeds: self.seeds.clone(),
            metric_every: self.metric_every,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ensemble for RMT validation; spikes are given in units of `s`.
    pub fn rmt_spec(&self) -> Result<SpikedEnsembleSpec> {
        let unit = SpikedEnsembleSpec::new(self.rmt_dim, self.rmt_batch, self.rmt_sigma, vec![])?;
        let s = unit.scale();
        SpikedEnsembleSpec::new(
            self.rmt_dim,
            self.rmt_batch,
            self.rmt_sigma,
            self.rmt_spikes.iter().map(|r| r * s).collect(),
        )
    }

    pub fn stability_spec(&self) -> Result<StabilitySpec> {
        let spec = StabilitySpec {
            optimizer: self.optim_config()?,
            lrs: self.stability_lrs.clone(),
            steps: self.stability_steps,
            spectrum: self.stability_spectrum.clone(),
            seed: self.seeds[0],
        };
        spec.validate()?;
        Ok(spec)
    }
}

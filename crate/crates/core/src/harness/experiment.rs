//! Grid experiments: one training run per (cell, seed), executed in
//! parallel, each fully determined by its spec, cell and seed.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::data::{
    load_split, subsample, synthetic_classification, BatchSampler, Dataset, DatasetKind,
};
use crate::error::{Error, Result};
use crate::lanczos::{gradient_overlap, lanczos};
use crate::model::{Batch, Init, ModelSpec};
use crate::optim::{schedule_lr, OptimConfig, Optimizer, ScheduleKind, ScheduleSpec};
use crate::random::derive_seed;

const SAMPLER_STREAM: u64 = 0xB47C;
const DIAGNOSTIC_STREAM: u64 = 0xD1A6;
const DAMPING_STREAM: u64 = 0xDA4B;

/// Number of leading Ritz directions whose gradient overlap is logged.
pub const OVERLAP_TOP: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Subsample the training split to this many points.
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Seed of the subsample (and of the synthetic generator).
    pub seed: u64,
    pub synthetic_dim: usize,
    pub synthetic_classes: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn load(spec: &DataSpec) -> Result<Self> {
        match spec.kind {
            DatasetKind::Synthetic => {
                let n_train = spec.train_size.unwrap_or(1000);
                let n_test = spec.test_size.unwrap_or(1000);
                let all = synthetic_classification(
                    n_train + n_test,
                    spec.synthetic_dim,
                    spec.synthetic_classes,
                    spec.seed,
                )?;
                let train: Vec<usize> = (0..n_train).collect();
                let test: Vec<usize> = (n_train..n_train + n_test).collect();
                Ok(ExperimentData {
                    train: all.select(&train),
                    test: all.select(&test),
                })
            }
            kind => {
                let mut train = load_split(kind, &spec.root, true)?;
                let mut test = load_split(kind, &spec.root, false)?;
                if let Some(n) = spec.train_size.filter(|&n| n < train.len()) {
                    train = subsample(&train, n, spec.seed)?;
                }
                if let Some(n) = spec.test_size.filter(|&n| n < test.len()) {
                    test = subsample(&test, n, derive_seed(spec.seed, 1))?;
                }
                Ok(ExperimentData { train, test })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelChoice {
    Softmax,
    Mlp { hidden: usize },
}

impl ModelChoice {
    pub fn build(self, input_dim: usize, classes: usize) -> ModelSpec {
        match self {
            ModelChoice::Softmax => ModelSpec::softmax_regression(input_dim, classes),
            ModelChoice::Mlp { hidden } => ModelSpec::mlp(input_dim, hidden, classes),
        }
    }
}

/// One point of the optimizer grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub delta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: DataSpec,
    pub model: ModelChoice,
    pub init: Init,
    /// Template; `lr`, `damping` and `eta` are overwritten per cell.
    pub optimizer: OptimConfig,
    pub lrs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub etas: Vec<f64>,
    pub schedule: ScheduleKind,
    pub floor_ratio: f64,
    pub warm_factor: f64,
    pub epochs: usize,
    /// `None` means one full-batch step per epoch.
    pub batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    /// Epoch spacing of the Ritz and gradient-overlap diagnostics.
    pub metric_every: usize,
}

impl ExperimentSpec {
    /// Cells in row-major order over (lr, delta, eta).
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &delta in &self.deltas {
                for &eta in &self.etas {
                    out.push(GridCell { lr, delta, eta });
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: GridCell) -> OptimConfig {
        OptimConfig {
            lr: cell.lr,
            damping: cell.delta,
            eta: cell.eta,
            ..self.optimizer.clone()
        }
    }

    pub fn schedule_spec(&self, lr: f64) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            base_lr: lr,
            total_epochs: self.epochs,
            floor_ratio: self.floor_ratio,
            warm_factor: self.warm_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.lrs.is_empty() || self.deltas.is_empty() || self.etas.is_empty() {
            return bad("optimizer grid is empty");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.metric_every == 0 {
            return bad("metric_every must be >= 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        for cell in self.cells() {
            self.cell_config(cell).validate()?;
            self.schedule_spec(cell.lr).validate()?;
        }
        Ok(())
    }

    pub fn run_id(&self, cell: GridCell, seed: u64) -> String {
        format!(
            "{}-{}-lr{}-d{}-eta{}-s{}",
            self.name, self.optimizer.kind, cell.lr, cell.delta, cell.eta, seed
        )
    }
}

/// Metrics after one epoch. Diagnostics not computed at this epoch are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_err: f64,
    pub test_loss: f64,
    pub test_err: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub delta: f64,
    pub r_est_curv: f64,
    pub lambda_1: f64,
    pub overlap_top10: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub cell: GridCell,
    pub seed: u64,
    /// Epoch 0 is the initial point.
    pub records: Vec<EpochRecord>,
    pub diverged: bool,
    pub wall_time: Duration,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn best_train_err(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.train_err)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn best_test_err(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.test_err)
            .fold(f64::INFINITY, f64::min)
    }

    /// First epoch whose training error is at most `threshold`.
    pub fn epochs_to_train_err(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.train_err <= threshold)
            .map(|r| r.epoch)
    }
}

/// Runs every (cell, seed) pair. Divergence ends a run early and is recorded
/// in its metrics; any other failure aborts the experiment.
pub fn run_experiment(spec: &ExperimentSpec, data: &ExperimentData) -> Result<Vec<RunMetrics>> {
    spec.validate()?;
    let jobs: Vec<(GridCell, u64)> = spec
        .cells()
        .into_iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(cell, seed)| run_single(spec, data, cell, seed))
        .collect()
}

fn evaluate_record(
    model: &ModelSpec,
    opt: &Optimizer,
    train: &Batch,
    test: &Batch,
    epoch: usize,
    lr: f64,
) -> Result<EpochRecord> {
    let tr = model.evaluate(opt.params(), train)?;
    let te = model.evaluate(opt.params(), test)?;
    Ok(EpochRecord {
        epoch,
        train_loss: tr.loss,
        train_err: tr.error_rate,
        test_loss: te.loss,
        test_err: te.error_rate,
        lr,
        delta: opt.delta(),
        r_est_curv: opt.r_est_curv().unwrap_or(f64::NAN),
        lambda_1: f64::NAN,
        overlap_top10: f64::NAN,
    })
}

/// Top Ritz value of the full training Hessian and the share of the
/// gradient in its leading directions.
fn diagnostics(
    model: &ModelSpec,
    w: &[f64],
    train: &Batch,
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let k = k.max(OVERLAP_TOP).min(model.dim());
    let eval = model.batch_loss_grad(w, train)?;
    let curv = model.curvature(w, train)?;
    let decomp = lanczos(&curv, k, seed)?;
    let overlap = match gradient_overlap(&decomp, &eval.gradient, OVERLAP_TOP.min(decomp.k())) {
        Ok(x) => x,
        Err(Error::ZeroGradient) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok((decomp.largest(), overlap))
}

pub fn run_single(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    cell: GridCell,
    seed: u64,
) -> Result<RunMetrics> {
    let start = Instant::now();
    let config = spec.cell_config(cell);
    let schedule = spec.schedule_spec(cell.lr);
    let model = spec
        .model
        .build(data.train.input_dim(), data.train.classes());
    let train = Batch::full(&data.train);
    let test = Batch::full(&data.test);
    let mut opt = Optimizer::new(config.clone(), model.init_params(spec.init, seed), seed)?;
    let mut sampler = match spec.batch_size {
        Some(b) => Some(BatchSampler::new(
            data.train.len(),
            b.min(data.train.len()),
            derive_seed(seed, SAMPLER_STREAM),
            false,
        )?),
        None => None,
    };
    let steps_per_epoch = sampler.as_ref().map_or(1, |s| s.batches_per_epoch());
    let diag_seed = derive_seed(seed, DIAGNOSTIC_STREAM);
    let run_id = spec.run_id(cell, seed);

    let mut records = Vec::with_capacity(spec.epochs + 1);
    let mut diverged = false;
    let lr0 = schedule_lr(&schedule, 0.0)?;
    let mut rec = evaluate_record(&model, &opt, &train, &test, 0, lr0)?;
    let (l1, ov) = diagnostics(&model, opt.params(), &train, config.k, diag_seed)?;
    rec.lambda_1 = l1;
    rec.overlap_top10 = ov;
    records.push(rec);

    'epochs: for epoch in 0..spec.epochs {
        let epoch_lr = schedule_lr(&schedule, epoch as f64)?;
        for i in 0..steps_per_epoch {
            let t = epoch as f64 + i as f64 / steps_per_epoch as f64;
            let lr = schedule_lr(&schedule, t)?;
            let result = match sampler.as_mut() {
                Some(s) => {
                    let rows = s.next_batch();
                    opt.step(&model, &Batch::from_dataset(&data.train, &rows), lr)
                }
                None => opt.step(&model, &train, lr),
            };
            match result {
                Ok(_) => {}
                Err(Error::Diverged { step }) => {
                    log::info!("{run_id}: diverged at step {step}");
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if let Some(a) = &config.auto_damp {
                let due = opt
                    .state
                    .damping
                    .as_ref()
                    .is_some_and(|d| d.is_due(opt.state.step));
                if due {
                    let bs = a.batch_size.min(data.train.len());
                    let mut s = BatchSampler::new(
                        data.train.len(),
                        bs,
                        derive_seed(seed ^ DAMPING_STREAM, opt.state.step as u64),
                        false,
                    )?;
                    let batches: Vec<Batch> = (0..a.n_batches)
                        .map(|_| Batch::from_dataset(&data.train, &s.next_batch()))
                        .collect();
                    opt.update_damping(&model, &batches)?;
                }
            }
        }
        let e = epoch + 1;
        let mut rec = match evaluate_record(&model, &opt, &train, &test, e, epoch_lr) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(err) => return Err(err),
        };
        if e % spec.metric_every == 0 || e == spec.epochs {
            let (l1, ov) = diagnostics(
                &model,
                opt.params(),
                &train,
                config.k,
                derive_seed(diag_seed, e as u64),
            )?;
            rec.lambda_1 = l1;
            rec.overlap_top10 = ov;
        }
        records.push(rec);
    }
    Ok(RunMetrics {
        run_id,
        cell,
        seed,
        records,
        diverged,
        wall_time: start.elapsed(),
    })
}

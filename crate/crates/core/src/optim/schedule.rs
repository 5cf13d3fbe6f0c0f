//! Per-epoch learning-rate schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_FLOOR_RATIO: f64 = 0.01;
pub const DEFAULT_WARM_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Flat,
    /// Hold, decay linearly to `r alpha_0` between half and nine tenths of
    /// the budget, then hold.
    LinearDecay,
    /// Hold for the first tenth, ramp up to `warm_factor alpha_0` by three
    /// tenths, decay linearly to `r alpha_0` by nine tenths, then hold.
    Warmup,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Flat => "flat",
            ScheduleKind::LinearDecay => "linear_decay",
            ScheduleKind::Warmup => "warmup",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(ScheduleKind::Flat),
            "linear_decay" => Ok(ScheduleKind::LinearDecay),
            "warmup" => Ok(ScheduleKind::Warmup),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total_epochs: usize,
    pub floor_ratio: f64,
    pub warm_factor: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, base_lr: f64, total_epochs: usize) -> Self {
        ScheduleSpec {
            kind,
            base_lr,
            total_epochs,
            floor_ratio: DEFAULT_FLOOR_RATIO,
            warm_factor: DEFAULT_WARM_FACTOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::invalid(format!(
                "base learning rate {} must be > 0",
                self.base_lr
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::invalid("schedule needs at least one epoch"));
        }
        if !(self.floor_ratio > 0.0 && self.floor_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "floor ratio {} outside (0, 1]",
                self.floor_ratio
            )));
        }
        if !(self.warm_factor >= 1.0) {
            return Err(Error::invalid(format!(
                "warm factor {} below 1",
                self.warm_factor
            )));
        }
        Ok(())
    }
}

/// Learning rate at epoch `t` (`0 <= t <= T`).
pub fn schedule_lr(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    let total = spec.total_epochs as f64;
    if !(0.0..=total).contains(&t) {
        return Err(Error::invalid(format!("epoch {t} outside [0, {total}]")));
    }
    let a0 = spec.base_lr;
    let r = spec.floor_ratio;
    let k = spec.warm_factor;
    let x = t / total;
    Ok(match spec.kind {
        ScheduleKind::Flat => a0,
        ScheduleKind::LinearDecay => {
            if x <= 0.5 {
                a0
            } else if x <= 0.9 {
                a0 * (1.0 - (1.0 - r) * (x - 0.5) / 0.4)
            } else {
                a0 * r
            }
        }
        ScheduleKind::Warmup => {
            if x <= 0.1 {
                a0
            } else if x <= 0.3 {
                a0 * (1.0 + (k - 1.0) * (x - 0.1) / 0.2)
            } else if x <= 0.9 {
                a0 * (k - (k - r) * (x - 0.3) / 0.6)
            } else {
                a0 * r
            }
        }
    })
}

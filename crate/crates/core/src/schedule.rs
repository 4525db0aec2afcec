//! Piecewise-constant learning-rate schedules, including the two early-drop
//! regimes used for selective training on CIFAR-sized problems.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct LrSchedule {
    rates: Vec<f64>,
    milestones: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    rates: Vec<f64>,
    #[serde(default)]
    milestones: Vec<usize>,
}

impl TryFrom<RawSchedule> for LrSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        LrSchedule::new(raw.rates, raw.milestones)
    }
}

impl From<LrSchedule> for RawSchedule {
    fn from(s: LrSchedule) -> Self {
        RawSchedule {
            rates: s.rates,
            milestones: s.milestones,
        }
    }
}

impl LrSchedule {
    /// `rates[j]` applies from `milestones[j - 1]` (inclusive) up to
    /// `milestones[j]` (exclusive).
    pub fn new(rates: Vec<f64>, milestones: Vec<usize>) -> Result<Self> {
        if rates.len() != milestones.len() + 1 {
            return Err(Error::config(
                "lr",
                format!(
                    "{} rates need {} milestones, got {}",
                    rates.len(),
                    rates.len().saturating_sub(1),
                    milestones.len()
                ),
            ));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::config(
                "lr",
                format!("rate {r} must be positive and finite"),
            ));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("lr", "milestones must be strictly increasing"));
        }
        Ok(LrSchedule { rates, milestones })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        LrSchedule::new(vec![rate], Vec::new())
    }

    /// ResNet-44 / CIFAR10 early drop: 0.1, 0.01, 0.001, 0.0001 at steps
    /// 24992, 27335, 29678 (epochs 32, 35, 38 at batch 64).
    pub fn cifar10_early() -> Self {
        LrSchedule {
            rates: vec![0.1, 0.01, 0.001, 0.0001],
            milestones: vec![24992, 27335, 29678],
        }
    }

    /// WRN-28-10 / CIFAR100 early drop: 0.1, 0.02, 0.004, 0.0008 at steps
    /// 39050, 41393, 43736 (epochs 50, 53, 56 at batch 64).
    pub fn cifar100_early() -> Self {
        LrSchedule {
            rates: vec![0.1, 0.02, 0.004, 0.0008],
            milestones: vec![39050, 41393, 43736],
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let j = self.milestones.partition_point(|&m| m <= step);
        self.rates[j]
    }
}

/// Parses `cifar10-early`, `cifar100-early` or `const:<rate>`.
impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10-early" => Ok(LrSchedule::cifar10_early()),
            "cifar100-early" => Ok(LrSchedule::cifar100_early()),
            _ => match s.strip_prefix("const:").map(str::parse::<f64>) {
                Some(Ok(rate)) => LrSchedule::constant(rate),
                _ => Err(Error::config(
                    "lr-preset",
                    format!("unknown preset {s:?} (expected cifar10-early, cifar100-early or const:x)"),
                )),
            },
        }
    }
}

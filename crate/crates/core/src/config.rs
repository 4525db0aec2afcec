//! Experiment definition and the master-seed derivation of every random
//! stream a run uses.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PoolPolicy, PoolSpec, Split, Standardizer};
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::numerics::Stream;
use crate::schedule::LrSchedule;
use crate::selection::Strategy;

/// Sub-stream ids under the run's master seed. Each consumer owns one
/// stream, so switching strategy never shifts the data or pool draws.
pub mod streams {
    /// Training-set generation, or the holdout shuffle for CSV input.
    pub const TRAIN_DATA: u64 = 0;
    pub const TEST_DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const POOL: u64 = 3;
    pub const UNIFORM_SELECTION: u64 = 4;
}

/// Fraction of a single CSV file held out for testing when no test file is given.
pub const CSV_HOLDOUT: f64 = 0.2;

pub const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Gauss {
        classes: usize,
        dim: usize,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        classes: usize,
        #[serde(default = "default_true")]
        standardize: bool,
    },
    /// A directory holding the four standard MNIST-style IDX files.
    Idx {
        dir: PathBuf,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_true() -> bool {
    true
}

impl DataSource {
    /// Loads the train and test splits. Gaussian data is drawn from the
    /// `TRAIN_DATA` and `TEST_DATA` sub-streams of `seed`.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Gauss {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
            } => {
                let train = data::gen_gaussian_mixture(
                    *classes,
                    *dim,
                    *per_class,
                    *separation,
                    Split::Train,
                    &mut Stream::substream(seed, streams::TRAIN_DATA),
                )?;
                let test = data::gen_gaussian_mixture(
                    *classes,
                    *dim,
                    *test_per_class,
                    *separation,
                    Split::Test,
                    &mut Stream::substream(seed, streams::TEST_DATA),
                )?;
                Ok((train, test))
            }
            DataSource::Csv {
                path,
                test_path,
                classes,
                standardize,
            } => {
                let (train, test) = match test_path {
                    Some(tp) => (
                        data::load_csv(path, *classes, Split::Train)?,
                        data::load_csv(tp, *classes, Split::Test)?,
                    ),
                    None => {
                        let all = data::load_csv(path, *classes, Split::Train)?;
                        data::holdout_split(
                            &all,
                            CSV_HOLDOUT,
                            &mut Stream::substream(seed, streams::TRAIN_DATA),
                        )?
                    }
                };
                finish(train, test, *standardize)
            }
            DataSource::Idx { dir, standardize } => {
                let file = |i: usize| dir.join(IDX_FILES[i]);
                let train = data::load_idx(&file(0), &file(1), Split::Train)?;
                let mut test = data::load_idx(&file(2), &file(3), Split::Test)?;
                let n = train.n_classes.max(test.n_classes);
                test.n_classes = n;
                let train = Dataset {
                    n_classes: n,
                    ..train
                };
                finish(train, test, *standardize)
            }
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            DataSource::Gauss { classes, .. } | DataSource::Csv { classes, .. } => Some(*classes),
            DataSource::Idx { .. } => None,
        }
    }
}

fn finish(mut train: Dataset, mut test: Dataset, standardize: bool) -> Result<(Dataset, Dataset)> {
    if train.input_dim() != test.input_dim() {
        return Err(Error::shape(
            "load",
            format!(
                "train has {} features, test has {}",
                train.input_dim(),
                test.input_dim()
            ),
        ));
    }
    if standardize {
        let st = Standardizer::fit(&train.features);
        st.apply(&mut train)?;
        st.apply(&mut test)?;
    }
    Ok((train, test))
}

/// Stop once test error has been at or below `target` for `patience`
/// consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub target: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub arch: Architecture,
    pub strategy: Strategy,
    /// Candidate pool size B.
    pub pool: usize,
    /// Training batch size b.
    pub b: usize,
    #[serde(default)]
    pub pool_policy: PoolPolicy,
    pub steps: usize,
    pub eval_every: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    /// Test error that counts as "reached" for steps-to-threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<EarlyStop>,
    /// Adds per-step wall time to the metrics; off by default so metrics
    /// files are byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn pool_spec(&self) -> PoolSpec {
        PoolSpec {
            pool_size: self.pool,
            batch_size: self.b,
            policy: self.pool_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        self.pool_spec().validate()?;
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("threshold", "must lie in [0, 1]"));
            }
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(0.0..=1.0).contains(&es.target) {
                return Err(Error::config(
                    "early_stop",
                    "needs patience >= 1 and target in [0, 1]",
                ));
            }
        }
        match &self.data {
            DataSource::Gauss {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
            } => {
                if *classes < 2 {
                    return Err(Error::config("classes", "need at least 2 classes"));
                }
                if *dim == 0 {
                    return Err(Error::config("dim", "must be positive"));
                }
                if *per_class == 0 || *test_per_class == 0 {
                    return Err(Error::config("per_class", "must be positive"));
                }
                if !(*separation >= 0.0 && separation.is_finite()) {
                    return Err(Error::config("separation", "must be finite and non-negative"));
                }
                if self.pool > classes * per_class {
                    return Err(Error::config(
                        "pool",
                        format!(
                            "pool of {} exceeds the {} training samples",
                            self.pool,
                            classes * per_class
                        ),
                    ));
                }
            }
            DataSource::Csv { classes, .. } if *classes < 2 => {
                return Err(Error::config("classes", "need at least 2 classes"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn gauss_config() -> RunConfig {
        RunConfig {
            data: DataSource::Gauss {
                classes: 3,
                dim: 4,
                per_class: 20,
                test_per_class: 10,
                separation: 3.0,
            },
            arch: Architecture::Linear,
            strategy: Strategy::Mms,
            pool: 20,
            b: 4,
            pool_policy: PoolPolicy::Fresh,
            steps: 10,
            eval_every: 5,
            lr: LrSchedule::constant(0.1).unwrap(),
            seed: 1,
            threshold: None,
            early_stop: None,
            record_wall_time: false,
            out: None,
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = gauss_config();
        assert!(c.validate().is_ok());
        c.steps = 0;
        assert!(matches!(c.validate(), Err(Error::Config { field: "steps", .. })));

        let mut c = gauss_config();
        c.pool = 2;
        let err = c.validate().unwrap_err();
        assert_eq!(err.to_string(), "invalid pool: pool must be >= batch");

        let mut c = gauss_config();
        c.pool = 61;
        assert!(matches!(c.validate(), Err(Error::Config { field: "pool", .. })));

        let mut c = gauss_config();
        c.eval_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut c = gauss_config();
        c.threshold = Some(0.05);
        c.lr = LrSchedule::cifar10_early();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn gauss_streams_differ_between_splits() {
        let c = gauss_config();
        let (train, test) = c.data.load(7).unwrap();
        assert_eq!((train.len(), test.len()), (60, 30));
        assert_ne!(train.features.row(0), test.features.row(0));
        let (again, _) = c.data.load(7).unwrap();
        assert_eq!(train, again);
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mms_core::config::EarlyStop;
use mms_core::{Architecture, DataSource, LrSchedule, PoolPolicy, RunConfig, Strategy};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mms",
    version,
    about = "Minimal-margin selective sampling experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write its run directory.
    Run(RunArgs),
    /// Train the same configuration once per strategy, with paired seeds.
    Sweep(SweepArgs),
    /// Rank a dataset by a strategy's score under a saved checkpoint.
    ScorePool(ScorePoolArgs),
    /// Write a synthetic Gaussian-mixture train/test pair as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataFlags {
    /// gauss, csv or idx
    #[arg(long)]
    pub dataset: Option<String>,
    /// CSV training file, or the directory holding the IDX files
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// CSV test file; without it a fifth of the training file is held out
    #[arg(long)]
    pub test_path: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// Skip per-feature standardization of CSV/IDX data
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_standardize: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Every setting a run accepts, as flags or as keys of a TOML/JSON file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataFlags,
    /// linear or mlp:H
    #[arg(long)]
    pub arch: Option<String>,
    /// uniform, mms, hnm or entropy
    #[arg(long)]
    pub strategy: Option<String>,
    /// Candidate pool size B (default 10 × b)
    #[arg(long)]
    pub pool: Option<usize>,
    /// Training batch size b
    #[arg(long)]
    pub b: Option<usize>,
    /// fresh or epoch-sequential
    #[arg(long)]
    pub pool_policy: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// cifar10-early, cifar100-early or const:x
    #[arg(long)]
    pub lr_preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub lr_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lr_milestones: Option<Vec<usize>>,
    /// Test error counted as reaching the goal in summaries
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Stop after `--early-stop-patience` consecutive evals at or below this error
    #[arg(long)]
    pub early_stop: Option<f64>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Log per-step wall time (metrics are then no longer byte-reproducible)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_wall_time: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML or JSON settings file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated strategies to compare
    #[arg(long, value_delimiter = ',', required = true)]
    pub strategies: Vec<String>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct ScorePoolArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// mms, hnm or entropy
    #[arg(long, default_value = "mms")]
    pub strategy: String,
    /// Which split to score
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub data: DataFlags,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Directory for train.csv and test.csv
    #[arg(long)]
    pub out: PathBuf,
}

pub const DEFAULT_CLASSES: usize = 10;
pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_PER_CLASS: usize = 1000;
pub const DEFAULT_TEST_PER_CLASS: usize = 200;
pub const DEFAULT_SEPARATION: f64 = 3.5;
pub const DEFAULT_B: usize = 64;
/// Pool is this many times the batch unless set explicitly.
pub const DEFAULT_POOL_RATIO: usize = 10;
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_EVAL_EVERY: usize = 100;
pub const DEFAULT_LR: &str = "const:0.05";
pub const DEFAULT_EARLY_STOP_PATIENCE: usize = 3;

fn parse_field<T: std::str::FromStr>(field: &'static str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::invalid(field, format!("cannot parse {value:?}")))
}

impl DataFlags {
    /// `self` wins wherever it is set.
    pub fn or(self, base: DataFlags) -> DataFlags {
        DataFlags {
            dataset: self.dataset.or(base.dataset),
            data_path: self.data_path.or(base.data_path),
            test_path: self.test_path.or(base.test_path),
            classes: self.classes.or(base.classes),
            dim: self.dim.or(base.dim),
            per_class: self.per_class.or(base.per_class),
            test_per_class: self.test_per_class.or(base.test_per_class),
            separation: self.separation.or(base.separation),
            no_standardize: self.no_standardize.or(base.no_standardize),
            seed: self.seed.or(base.seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn source(&self) -> Result<DataSource, CliError> {
        let standardize = !self.no_standardize.unwrap_or(false);
        let kind = self.dataset.as_deref().unwrap_or("gauss");
        let need_path = || {
            self.data_path.clone().ok_or_else(|| {
                CliError::missing_data(format!("--data-path is required for --dataset {kind}"))
            })
        };
        match kind {
            "gauss" => Ok(DataSource::Gauss {
                classes: self.classes.unwrap_or(DEFAULT_CLASSES),
                dim: self.dim.unwrap_or(DEFAULT_DIM),
                per_class: self.per_class.unwrap_or(DEFAULT_PER_CLASS),
                test_per_class: self.test_per_class.unwrap_or(DEFAULT_TEST_PER_CLASS),
                separation: self.separation.unwrap_or(DEFAULT_SEPARATION),
            }),
            "csv" => {
                let path = need_path()?;
                let classes = self
                    .classes
                    .ok_or_else(|| CliError::invalid("classes", "--classes is required for CSV data"))?;
                Ok(DataSource::Csv {
                    path,
                    test_path: self.test_path.clone(),
                    classes,
                    standardize,
                })
            }
            "idx" => Ok(DataSource::Idx {
                dir: need_path()?,
                standardize,
            }),
            other => Err(CliError::invalid(
                "dataset",
                format!("unknown dataset {other:?} (expected gauss, csv or idx)"),
            )),
        }
    }
}

impl Settings {
    /// `self` wins wherever it is set.
    pub fn or(self, base: Settings) -> Settings {
        Settings {
            data: self.data.or(base.data),
            arch: self.arch.or(base.arch),
            strategy: self.strategy.or(base.strategy),
            pool: self.pool.or(base.pool),
            b: self.b.or(base.b),
            pool_policy: self.pool_policy.or(base.pool_policy),
            steps: self.steps.or(base.steps),
            eval_every: self.eval_every.or(base.eval_every),
            lr_preset: self.lr_preset.or(base.lr_preset),
            lr_rates: self.lr_rates.or(base.lr_rates),
            lr_milestones: self.lr_milestones.or(base.lr_milestones),
            threshold: self.threshold.or(base.threshold),
            early_stop: self.early_stop.or(base.early_stop),
            early_stop_patience: self.early_stop_patience.or(base.early_stop_patience),
            record_wall_time: self.record_wall_time.or(base.record_wall_time),
            out: self.out.or(base.out),
        }
    }

    /// Settings that reproduce a saved run configuration.
    pub fn from_run_config(c: &RunConfig) -> Settings {
        let mut data = DataFlags {
            seed: Some(c.seed),
            ..DataFlags::default()
        };
        match &c.data {
            DataSource::Gauss {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
            } => {
                data.dataset = Some("gauss".into());
                data.classes = Some(*classes);
                data.dim = Some(*dim);
                data.per_class = Some(*per_class);
                data.test_per_class = Some(*test_per_class);
                data.separation = Some(*separation);
            }
            DataSource::Csv {
                path,
                test_path,
                classes,
                standardize,
            } => {
                data.dataset = Some("csv".into());
                data.data_path = Some(path.clone());
                data.test_path = test_path.clone();
                data.classes = Some(*classes);
                data.no_standardize = Some(!standardize);
            }
            DataSource::Idx { dir, standardize } => {
                data.dataset = Some("idx".into());
                data.data_path = Some(dir.clone());
                data.no_standardize = Some(!standardize);
            }
        }
        Settings {
            data,
            arch: Some(c.arch.to_string()),
            strategy: Some(c.strategy.to_string()),
            pool: Some(c.pool),
            b: Some(c.b),
            pool_policy: Some(
                match c.pool_policy {
                    PoolPolicy::Fresh => "fresh",
                    PoolPolicy::EpochSequential => "epoch-sequential",
                }
                .into(),
            ),
            steps: Some(c.steps),
            eval_every: Some(c.eval_every),
            lr_preset: None,
            lr_rates: Some(c.lr.rates().to_vec()),
            lr_milestones: Some(c.lr.milestones().to_vec()),
            threshold: c.threshold,
            early_stop: c.early_stop.map(|e| e.target),
            early_stop_patience: c.early_stop.map(|e| e.patience),
            record_wall_time: Some(c.record_wall_time),
            out: c.out.clone(),
        }
    }

    /// Reads a settings file: flat TOML/JSON keys named like the flags, or a
    /// `config.json` snapshot written by a previous run.
    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::missing_data(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            if let Ok(snapshot) = serde_json::from_str::<RunConfig>(&text) {
                return Ok(Settings::from_run_config(&snapshot));
            }
            serde_json::from_str(&text)
                .map_err(|e| CliError::invalid("config", format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::invalid("config", format!("{}: {}", path.display(), e.message())))
        }
    }

    fn schedule(&self) -> Result<LrSchedule, CliError> {
        match (&self.lr_preset, &self.lr_rates) {
            (Some(_), Some(_)) => Err(CliError::invalid(
                "lr-preset",
                "give either --lr-preset or --lr-rates, not both",
            )),
            (Some(preset), None) => {
                if self.lr_milestones.is_some() {
                    return Err(CliError::invalid("lr-milestones", "milestones need --lr-rates"));
                }
                preset.parse().map_err(CliError::from_core)
            }
            (None, Some(rates)) => {
                LrSchedule::new(rates.clone(), self.lr_milestones.clone().unwrap_or_default())
                    .map_err(CliError::from_core)
            }
            (None, None) => {
                if self.lr_milestones.is_some() {
                    return Err(CliError::invalid("lr-milestones", "milestones need --lr-rates"));
                }
                Ok(DEFAULT_LR.parse().expect("default preset parses"))
            }
        }
    }

    /// Resolves defaults and validates the result.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let b = self.b.unwrap_or(DEFAULT_B);
        let strategy: Strategy = parse_field("strategy", self.strategy.as_deref().unwrap_or("mms"))?;
        let arch: Architecture = parse_field("arch", self.arch.as_deref().unwrap_or("linear"))?;
        let pool_policy = match self.pool_policy.as_deref() {
            None | Some("fresh") => PoolPolicy::Fresh,
            Some("epoch-sequential") => PoolPolicy::EpochSequential,
            Some(other) => {
                return Err(CliError::invalid(
                    "pool-policy",
                    format!("unknown policy {other:?} (expected fresh or epoch-sequential)"),
                ))
            }
        };
        let early_stop = match (self.early_stop, self.early_stop_patience) {
            (Some(target), patience) => Some(EarlyStop {
                target,
                patience: patience.unwrap_or(DEFAULT_EARLY_STOP_PATIENCE),
            }),
            (None, Some(_)) => return Err(CliError::invalid("early-stop-patience", "needs --early-stop")),
            (None, None) => None,
        };
        let config = RunConfig {
            data: self.data.source()?,
            arch,
            strategy,
            pool: self.pool.unwrap_or(b.saturating_mul(DEFAULT_POOL_RATIO)),
            b,
            pool_policy,
            steps: self.steps.unwrap_or(DEFAULT_STEPS),
            eval_every: self.eval_every.unwrap_or(DEFAULT_EVAL_EVERY),
            lr: self.schedule()?,
            seed: self.data.seed(),
            threshold: self.threshold,
            early_stop,
            record_wall_time: self.record_wall_time.unwrap_or(false),
            out: self.out.clone(),
        };
        config.validate().map_err(CliError::from_core)?;
        Ok(config)
    }
}

/// Flags over file over defaults.
pub fn parse_config(flags: &Settings, file: Option<&Path>) -> Result<RunConfig, CliError> {
    let base = match file {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    flags.clone().or(base).resolve()
}

use std::fs;
use std::path::PathBuf;

use mms_core::experiment::{self, SUMMARY_FILE};
use mms_core::{data, model, DataSource, Strategy};

use crate::args::{parse_config, GenDataArgs, RunArgs, ScorePoolArgs, SweepArgs};
use crate::{CliError, ErrorKind};

const DEFAULT_RUN_DIR: &str = "out";
const DEFAULT_SWEEP_DIR: &str = "sweep";

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let config = parse_config(&args.settings, args.config.as_deref())?;
    let dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR));
    let summary = experiment::run_to_dir(&config, &dir)?;
    let table = experiment::summary_table(std::slice::from_ref(&summary));
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, &table).map_err(|e| CliError::from_core(mms_core::Error::Io { path, source: e }))?;
    print!("{table}");
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = parse_config(&args.settings, args.config.as_deref())?;
    let strategies = args
        .strategies
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<Strategy>()
                .map_err(|_| CliError::invalid("strategies", format!("unknown strategy {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dir = base
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_SWEEP_DIR));
    let report = experiment::run_sweep(&base, &strategies, &dir)?;
    print!("{}", experiment::summary_table(&report.rows));
    if report.all_succeeded() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| r.failure.is_some())
            .map(|r| r.strategy.name())
            .collect();
        Err(CliError {
            kind: ErrorKind::SweepFailed,
            field: None,
            message: format!("failed runs: {}", failed.join(",")),
        })
    }
}

pub fn score_pool(args: ScorePoolArgs) -> Result<(), CliError> {
    let strategy: Strategy = args
        .strategy
        .parse()
        .map_err(|_| CliError::invalid("strategy", format!("unknown strategy {:?}", args.strategy)))?;
    let params = model::load_checkpoint(&args.checkpoint)?;
    let source = args.data.source()?;
    let (train, test) = source.load(args.data.seed())?;
    let ds = match args.split.as_str() {
        "train" => train,
        "test" => test,
        other => {
            return Err(CliError::invalid(
                "split",
                format!("unknown split {other:?} (expected train or test)"),
            ))
        }
    };
    if ds.input_dim() != params.input_dim() {
        return Err(CliError {
            kind: ErrorKind::Run,
            field: None,
            message: format!(
                "checkpoint expects {} input features, dataset has {}",
                params.input_dim(),
                ds.input_dim()
            ),
        });
    }
    let rows = experiment::score_pool(&params, &ds, strategy)?;
    let table = experiment::score_table(&rows);
    match args.out {
        Some(path) => fs::write(&path, table)
            .map_err(|e| CliError::from_core(mms_core::Error::Io { path, source: e }))?,
        None => print!("{table}"),
    }
    Ok(())
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let source = args.data.source()?;
    if !matches!(source, DataSource::Gauss { .. }) {
        return Err(CliError::invalid("dataset", "gen-data only generates gauss data"));
    }
    let (train, test) = source.load(args.data.seed())?;
    fs::create_dir_all(&args.out).map_err(|e| {
        CliError::from_core(mms_core::Error::Io {
            path: args.out.clone(),
            source: e,
        })
    })?;
    data::write_csv(&train, &args.out.join("train.csv"))?;
    data::write_csv(&test, &args.out.join("test.csv"))?;
    println!("{}\t{}", train.len(), test.len());
    Ok(())
}

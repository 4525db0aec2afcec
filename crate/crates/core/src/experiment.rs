//! Running configured experiments to disk: single runs, paired strategy
//! sweeps, and offline scoring of a pool against a saved checkpoint.
//!
//! A run directory holds `config.json`, `metrics.jsonl` and `final.params`.
//! A sweep directory holds `summary.tsv` plus one run directory per strategy.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, NetworkParams};
use crate::scoring::{entropy_scores, hnm_scores, mms_scores};
use crate::selection::{ranked_indices, Strategy};
use crate::trainer::{steps_to_threshold, JsonlSink, MetricsRecord, PoolChecksum, Trainer};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "final.params";
pub const SUMMARY_FILE: &str = "summary.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub steps_run: usize,
    pub final_test_err: Option<f64>,
    pub threshold: Option<f64>,
    pub steps_to_threshold: Option<usize>,
    pub pool_checksum: Option<PoolChecksum>,
    pub failure: Option<String>,
}

impl RunSummary {
    fn failed(strategy: Strategy, threshold: Option<f64>, err: &Error) -> Self {
        RunSummary {
            strategy,
            steps_run: 0,
            final_test_err: None,
            threshold,
            steps_to_threshold: None,
            pool_checksum: None,
            failure: Some(err.to_string()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains `config` and writes its run directory. Returns the summary row.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    create_dir(dir)?;
    let mut snapshot = config.clone();
    snapshot.out = Some(dir.to_path_buf());
    snapshot.write_snapshot(&dir.join(CONFIG_FILE))?;

    let trainer = Trainer::new(config.clone())?;
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut sink = (JsonlSink::create(&dir.join(METRICS_FILE))?, &mut records);
    let out = trainer.run(&mut sink)?;
    model::save_checkpoint(&out.params, &dir.join(CHECKPOINT_FILE))?;

    Ok(RunSummary {
        strategy: config.strategy,
        steps_run: out.steps_run,
        final_test_err: out.last_test_err,
        threshold: config.threshold,
        steps_to_threshold: config.threshold.and_then(|t| steps_to_threshold(&records, t)),
        pool_checksum: Some(out.pool_checksum),
        failure: None,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<RunSummary>,
    pub summary_path: PathBuf,
}

impl SweepReport {
    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none())
    }
}

/// Runs `base` once per strategy under `out/<strategy>/`. All runs share the
/// master seed, so their data, initialization and pool draws are identical.
/// A failed run is recorded in the summary and the sweep moves on.
pub fn run_sweep(base: &RunConfig, strategies: &[Strategy], out: &Path) -> Result<SweepReport> {
    if strategies.is_empty() {
        return Err(Error::config("strategies", "need at least one strategy"));
    }
    for (i, s) in strategies.iter().enumerate() {
        if strategies[..i].contains(s) {
            return Err(Error::config("strategies", format!("{s} listed twice")));
        }
    }
    create_dir(out)?;
    let rows: Vec<RunSummary> = strategies
        .iter()
        .map(|&strategy| {
            let config = RunConfig {
                strategy,
                ..base.clone()
            };
            run_to_dir(&config, &out.join(strategy.name())).unwrap_or_else(|e| {
                log::error!("{strategy} run failed: {e}");
                RunSummary::failed(strategy, base.threshold, &e)
            })
        })
        .collect();
    let summary_path = out.join(SUMMARY_FILE);
    write_summary(&rows, &summary_path)?;
    Ok(SweepReport { rows, summary_path })
}

pub fn summary_table(rows: &[RunSummary]) -> String {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map_or_else(|| "-".to_owned(), |v| v.to_string())
    }
    let mut out = String::from(
        "strategy\tsteps\tfinal_test_err\tthreshold\tsteps_to_threshold\tpool_checksum\tstatus\n",
    );
    for r in rows {
        let status = match &r.failure {
            None => "ok".to_owned(),
            Some(msg) => format!("failed: {}", msg.replace(['\t', '\n'], " ")),
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.strategy,
            r.steps_run,
            opt(r.final_test_err),
            opt(r.threshold),
            opt(r.steps_to_threshold),
            opt(r.pool_checksum),
            status
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_summary(rows: &[RunSummary], path: &Path) -> Result<()> {
    fs::write(path, summary_table(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub index: usize,
    pub score: f64,
    pub predicted: usize,
    pub runner_up: usize,
}

/// Scores every row of `ds` under `params`, most-preferred first.
pub fn score_pool(params: &NetworkParams, ds: &Dataset, strategy: Strategy) -> Result<Vec<ScoreRow>> {
    if ds.is_empty() {
        return Err(Error::Empty("cannot score an empty dataset"));
    }
    if ds.n_classes > params.n_classes() {
        return Err(Error::shape(
            "score_pool",
            format!(
                "dataset has {} classes, checkpoint has {}",
                ds.n_classes,
                params.n_classes()
            ),
        ));
    }
    let fr = model::forward(params, &ds.features)?;
    let pool = match strategy {
        Strategy::Mms => mms_scores(&fr, &params.head)?,
        Strategy::Hnm => hnm_scores(&fr, &ds.labels)?,
        Strategy::Entropy => entropy_scores(&fr)?,
        Strategy::Uniform => {
            return Err(Error::config(
                "strategy",
                "uniform selection has no score to rank by",
            ))
        }
    };
    Ok(ranked_indices(&pool.scores, pool.direction)
        .into_iter()
        .map(|i| ScoreRow {
            index: i,
            score: pool.scores[i],
            predicted: pool.top2[i].0,
            runner_up: pool.top2[i].1,
        })
        .collect())
}

pub fn score_table(rows: &[ScoreRow]) -> String {
    let mut out = String::from("index\tscore\tpredicted\trunner_up\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}", r.index, r.score, r.predicted, r.runner_up)
            .expect("writing to a String");
    }
    out
}

//! The selective training loop. Every step draws a pool of `B` candidates,
//! forward-passes all of them, scores them with the configured strategy,
//! keeps `b`, and takes one SGD step on those `b` alone.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{streams, RunConfig};
use crate::data::{Dataset, PoolSampler};
use crate::error::{Error, Result};
use crate::model::{self, NetworkParams};
use crate::numerics::Stream;
use crate::scoring::{entropy_scores, hnm_scores, mms_scores};
use crate::selection::{mean_mms_telemetry, select, Strategy};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss_batch: f64,
    /// Error of the pre-update parameters on the selected batch.
    pub train_err_batch: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_err: Option<f64>,
    /// `null` in JSON when the selection contains a degenerate `+inf` margin.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_infinity")]
    pub mean_mms_10: f64,
    pub selected_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_infinity<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Destination for metrics records as they are produced.
pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()>;

    /// Called after every evaluation and at the end of the run.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Newline-delimited JSON, one record per line, append-only.
pub struct JsonlSink {
    path: std::path::PathBuf,
    out: BufWriter<fs::File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("metrics serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl<S: MetricsSink + ?Sized> MetricsSink for &mut S {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        (**self).record(rec)
    }

    fn flush(&mut self) -> Result<()> {
        (**self).flush()
    }
}

/// Tees records into two sinks.
impl<A: MetricsSink, B: MetricsSink> MetricsSink for (A, B) {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.0.record(rec)?;
        self.1.record(rec)
    }

    fn flush(&mut self) -> Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Test error (fraction of rows whose argmax logit misses the label) and
/// mean cross-entropy.
pub fn evaluate(params: &NetworkParams, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation on an empty dataset"));
    }
    let fr = model::forward(params, &ds.features)?;
    let mut wrong = 0usize;
    let mut loss = 0.0;
    for (row, &label) in fr.logits.row_iter().zip(&ds.labels) {
        if crate::numerics::argmax(row) != label {
            wrong += 1;
        }
        loss += model::cross_entropy(row, label);
    }
    let n = ds.len() as f64;
    Ok((wrong as f64 / n, loss / n))
}

/// FNV-1a over the little-endian bytes of each pool index. Equal checksums
/// across runs mean identical data-stream draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolChecksum(pub u64);

impl Default for PoolChecksum {
    fn default() -> Self {
        PoolChecksum(0xcbf2_9ce4_8422_2325)
    }
}

impl PoolChecksum {
    pub fn update(&mut self, indices: &[usize]) {
        for &i in indices {
            for byte in (i as u64).to_le_bytes() {
                self.0 ^= u64::from(byte);
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
}

impl std::fmt::Display for PoolChecksum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub params: NetworkParams,
    pub steps_run: usize,
    pub pool_checksum: PoolChecksum,
    pub last_test_err: Option<f64>,
}

/// Counters for the work done so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounts {
    pub updates: usize,
    pub pool_draws: usize,
    pub forward_rows: usize,
    pub backward_rows: usize,
}

pub struct Trainer {
    config: RunConfig,
    train: Dataset,
    test: Dataset,
    params: NetworkParams,
    sampler: PoolSampler,
    selection_stream: Stream,
    step: usize,
    checksum: PoolChecksum,
    work: WorkCounts,
    streak: usize,
    last_test_err: Option<f64>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.data.load(config.seed)?;
        Trainer::with_data(config, train, test)
    }

    pub fn with_data(config: RunConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.input_dim() != test.input_dim() || train.n_classes != test.n_classes {
            return Err(Error::shape("Trainer", "train and test splits disagree in shape"));
        }
        let params = model::init_params(
            config.arch,
            train.input_dim(),
            train.n_classes,
            &mut Stream::substream(config.seed, streams::INIT),
        )?;
        let sampler = PoolSampler::new(
            train.len(),
            config.pool_spec(),
            Stream::substream(config.seed, streams::POOL),
        )?;
        Ok(Trainer {
            selection_stream: Stream::substream(config.seed, streams::UNIFORM_SELECTION),
            config,
            train,
            test,
            params,
            sampler,
            step: 0,
            checksum: PoolChecksum::default(),
            work: WorkCounts::default(),
            streak: 0,
            last_test_err: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn work(&self) -> WorkCounts {
        self.work
    }

    pub fn pool_checksum(&self) -> PoolChecksum {
        self.checksum
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps || self.early_stopped()
    }

    fn early_stopped(&self) -> bool {
        self.config
            .early_stop
            .is_some_and(|es| self.streak >= es.patience)
    }

    /// Runs one step and returns its metrics record.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let t = self.step + 1;
        self.step_inner(t).map_err(|e| Error::Step {
            step: t,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, t: usize) -> Result<MetricsRecord> {
        let started = self.config.record_wall_time.then(Instant::now);
        let strategy = self.config.strategy;

        let pool = self.sampler.next_pool()?;
        self.checksum.update(&pool);
        self.work.pool_draws += 1;
        let (inputs, labels) = self.train.subset(&pool);

        let fr = model::forward(&self.params, &inputs)?;
        self.work.forward_rows += fr.len();
        let mms = mms_scores(&fr, &self.params.head)?;
        let scored = match strategy {
            Strategy::Mms | Strategy::Uniform => None,
            Strategy::Hnm => Some(hnm_scores(&fr, &labels)?),
            Strategy::Entropy => Some(entropy_scores(&fr)?),
        };
        let selection = select(
            scored.as_ref().unwrap_or(&mms),
            strategy,
            self.config.b,
            &mut self.selection_stream,
        )?;
        let mean_mms_10 = match selection.mean_mms_10 {
            Some(v) => v,
            None => mean_mms_telemetry(&mms, &selection)?,
        };

        let predicted = fr.predicted();
        let wrong = selection
            .indices
            .iter()
            .filter(|&&i| predicted[i] != labels[i])
            .count();
        let batch_inputs = inputs.select_rows(&selection.indices);
        let batch_labels: Vec<usize> = selection.indices.iter().map(|&i| labels[i]).collect();

        let (loss, grad) = model::loss_and_grad(&self.params, &batch_inputs, &batch_labels)?;
        self.work.backward_rows += batch_labels.len();
        let lr = self.config.lr.lr_at(t);
        self.params = model::sgd_step(&self.params, &grad, lr)?;
        self.work.updates += 1;
        self.step = t;

        let test_err = if t.is_multiple_of(self.config.eval_every) || t == self.config.steps {
            let (err, _) = evaluate(&self.params, &self.test)?;
            self.last_test_err = Some(err);
            match self.config.early_stop {
                Some(es) if err <= es.target => self.streak += 1,
                _ => self.streak = 0,
            }
            Some(err)
        } else {
            None
        };

        Ok(MetricsRecord {
            step: t,
            lr,
            train_loss_batch: loss,
            train_err_batch: wrong as f64 / batch_labels.len() as f64,
            test_err,
            mean_mms_10,
            selected_count: batch_labels.len(),
            wall_ms: started.map(|s| s.elapsed().as_secs_f64() * 1e3),
        })
    }

    /// Runs to completion (or early stop), streaming every record to `sink`.
    pub fn run(mut self, sink: &mut dyn MetricsSink) -> Result<RunOutput> {
        while !self.is_finished() {
            let rec = self.step()?;
            let evaluated = rec.test_err.is_some();
            sink.record(&rec)?;
            if evaluated {
                sink.flush()?;
            }
        }
        sink.flush()?;
        Ok(RunOutput {
            params: self.params,
            steps_run: self.step,
            pool_checksum: self.checksum,
            last_test_err: self.last_test_err,
        })
    }
}

/// Loads the configured data, trains, and returns every record in memory.
pub fn train(config: RunConfig) -> Result<(Vec<MetricsRecord>, RunOutput)> {
    let mut records = Vec::new();
    let out = Trainer::new(config)?.run(&mut records)?;
    Ok((records, out))
}

/// First evaluated step whose test error is at or below `threshold`.
pub fn steps_to_threshold(records: &[MetricsRecord], threshold: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.test_err.is_some_and(|e| e <= threshold))
        .map(|r| r.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DataSource, EarlyStop};
    use crate::data::{gen_gaussian_mixture, PoolPolicy, Split};
    use crate::model::{Architecture, LinearHead};
    use crate::numerics::{Matrix, Vector};
    use crate::schedule::LrSchedule;

    fn config(strategy: Strategy) -> RunConfig {
        RunConfig {
            data: DataSource::Gauss {
                classes: 3,
                dim: 4,
                per_class: 40,
                test_per_class: 20,
                separation: 3.0,
            },
            arch: Architecture::Linear,
            strategy,
            pool: 30,
            b: 6,
            pool_policy: PoolPolicy::Fresh,
            steps: 25,
            eval_every: 10,
            lr: LrSchedule::constant(0.2).unwrap(),
            seed: 3,
            threshold: None,
            early_stop: None,
            record_wall_time: false,
            out: None,
        }
    }

    #[test]
    fn records_every_step_and_evaluates_on_cadence() {
        let (records, out) = train(config(Strategy::Mms)).unwrap();
        assert_eq!(records.len(), 25);
        assert_eq!(out.steps_run, 25);
        let evals: Vec<usize> = records
            .iter()
            .filter(|r| r.test_err.is_some())
            .map(|r| r.step)
            .collect();
        assert_eq!(evals, vec![10, 20, 25]);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.step, i + 1);
            assert_eq!(r.selected_count, 6);
            assert!((0.0..=1.0).contains(&r.train_err_batch));
            assert!(r.mean_mms_10 >= 0.0);
            assert!(r.wall_ms.is_none());
        }
    }

    #[test]
    fn every_strategy_runs() {
        for s in Strategy::ALL {
            let (records, _) = train(config(s)).unwrap();
            assert_eq!(records.len(), 25, "{s}");
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let mut c = config(Strategy::Uniform);
        c.steps = 0;
        assert!(matches!(train(c), Err(Error::Config { field: "steps", .. })));
    }

    #[test]
    fn work_shape_is_b_forward_and_b_backward() {
        let mut t = Trainer::new(config(Strategy::Hnm)).unwrap();
        for _ in 0..7 {
            t.step().unwrap();
        }
        assert_eq!(
            t.work(),
            WorkCounts {
                updates: 7,
                pool_draws: 7,
                forward_rows: 7 * 30,
                backward_rows: 7 * 6,
            }
        );
    }

    #[test]
    fn pool_draws_do_not_depend_on_strategy() {
        let a = train(config(Strategy::Uniform)).unwrap().1.pool_checksum;
        let b = train(config(Strategy::Entropy)).unwrap().1.pool_checksum;
        assert_eq!(a, b);
        let mut other = config(Strategy::Uniform);
        other.seed = 4;
        assert_ne!(a, train(other).unwrap().1.pool_checksum);
    }

    #[test]
    fn wall_time_is_opt_in() {
        let mut c = config(Strategy::Mms);
        c.record_wall_time = true;
        let (records, _) = train(c).unwrap();
        assert!(records.iter().all(|r| r.wall_ms.is_some_and(|w| w >= 0.0)));
    }

    #[test]
    fn early_stop_after_patience() {
        let mut c = config(Strategy::Uniform);
        c.steps = 1000;
        c.eval_every = 5;
        c.early_stop = Some(EarlyStop {
            target: 1.0,
            patience: 2,
        });
        let (records, out) = train(c).unwrap();
        assert_eq!(out.steps_run, 10);
        assert_eq!(records.len(), 10);
    }

    #[test]
    fn lr_follows_schedule() {
        let mut c = config(Strategy::Uniform);
        c.lr = LrSchedule::new(vec![0.3, 0.1], vec![5]).unwrap();
        let (records, _) = train(c).unwrap();
        assert_eq!(records[3].lr, 0.3);
        assert_eq!(records[4].lr, 0.1);
    }

    #[test]
    fn epoch_sequential_policy_runs() {
        let mut c = config(Strategy::Mms);
        c.pool_policy = PoolPolicy::EpochSequential;
        assert_eq!(train(c).unwrap().0.len(), 25);
    }

    #[test]
    fn evaluate_cases() {
        let ds = gen_gaussian_mixture(2, 2, 5, 10.0, Split::Test, &mut Stream::new(1)).unwrap();
        let perfect = NetworkParams {
            hidden: None,
            head: LinearHead::new(Matrix::identity(2), Vector::zeros(2)).unwrap(),
        };
        assert_eq!(evaluate(&perfect, &ds).unwrap().0, 0.0);

        let one = Dataset::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), vec![1], 2, Split::Test).unwrap();
        let (err, _) = evaluate(&perfect, &one).unwrap();
        assert_eq!(err, 1.0);

        let wide = Dataset::new(Matrix::zeros(1, 3), vec![0], 2, Split::Test).unwrap();
        assert_eq!(evaluate(&perfect, &wide).unwrap_err().kind(), "shape");
    }

    #[test]
    fn errors_carry_step_context() {
        let c = config(Strategy::Mms);
        let (train_ds, test_ds) = c.data.load(c.seed).unwrap();
        let mut t = Trainer::with_data(c, train_ds, test_ds).unwrap();
        t.step().unwrap();
        // poison the parameters so the next forward pass fails
        t.params.head.weights[(0, 0)] = f64::NAN;
        match t.step().unwrap_err() {
            Error::Step { step, .. } => assert_eq!(step, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn metrics_json_field_names() {
        let rec = MetricsRecord {
            step: 3,
            lr: 0.1,
            train_loss_batch: 0.5,
            train_err_batch: 0.25,
            test_err: Some(0.1),
            mean_mms_10: f64::INFINITY,
            selected_count: 4,
            wall_ms: None,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            r#"{"step":3,"lr":0.1,"train_loss_batch":0.5,"train_err_batch":0.25,"test_err":0.1,"mean_mms_10":null,"selected_count":4}"#
        );
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn threshold_lookup() {
        let rec = |step, test_err| MetricsRecord {
            step,
            lr: 0.1,
            train_loss_batch: 0.0,
            train_err_batch: 0.0,
            test_err,
            mean_mms_10: 0.0,
            selected_count: 1,
            wall_ms: None,
        };
        let records = [
            rec(1, None),
            rec(2, Some(0.3)),
            rec(3, None),
            rec(4, Some(0.1)),
            rec(6, Some(0.05)),
        ];
        assert_eq!(steps_to_threshold(&records, 0.1), Some(4));
        assert_eq!(steps_to_threshold(&records, 0.01), None);
    }
}

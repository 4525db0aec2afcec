use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mms_core::model::{forward, init_params};
use mms_core::scoring::mms_scores;
use mms_core::selection::select;
use mms_core::{
    Architecture, DataSource, LrSchedule, Matrix, PoolPolicy, RunConfig, Strategy, Stream, Trainer,
};

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("mms_scores");
    for &(classes, dim) in &[(10, 32), (100, 64)] {
        let mut s = Stream::new(1);
        let params = init_params(Architecture::Linear, dim, classes, &mut s).unwrap();
        let x = Matrix::from_fn(640, dim, |_, _| s.gaussian());
        let fr = forward(&params, &x).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{classes}x{dim}")),
            &fr,
            |bench, fr| bench.iter(|| mms_scores(black_box(fr), &params.head).unwrap()),
        );
    }
    group.finish();
}

fn selecting(c: &mut Criterion) {
    let mut group = c.benchmark_group("select");
    let mut s = Stream::new(2);
    let x = Matrix::from_fn(3200, 16, |_, _| s.gaussian());
    let params = init_params(Architecture::Linear, 16, 10, &mut s).unwrap();
    let pool = mms_scores(&forward(&params, &x).unwrap(), &params.head).unwrap();
    for b in [32, 320, 1600] {
        group.bench_with_input(BenchmarkId::from_parameter(b), &b, |bench, &b| {
            let mut stream = Stream::new(3);
            bench.iter(|| select(black_box(&pool), Strategy::Mms, b, &mut stream).unwrap())
        });
    }
    group.finish();
}

fn trainer_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("trainer_step");
    for strategy in Strategy::ALL {
        let config = RunConfig {
            data: DataSource::Gauss {
                classes: 10,
                dim: 32,
                per_class: 1000,
                test_per_class: 200,
                separation: 3.5,
            },
            arch: Architecture::Mlp { hidden: 64 },
            strategy,
            pool: 320,
            b: 32,
            pool_policy: PoolPolicy::Fresh,
            steps: usize::MAX,
            eval_every: usize::MAX,
            lr: LrSchedule::constant(0.05).unwrap(),
            seed: 1,
            threshold: None,
            early_stop: None,
            record_wall_time: false,
            out: None,
        };
        let mut trainer = Trainer::new(config).unwrap();
        group.bench_function(strategy.name(), |bench| bench.iter(|| trainer.step().unwrap()));
    }
    group.finish();
}

criterion_group!(benches, scoring, selecting, trainer_step);
criterion_main!(benches);

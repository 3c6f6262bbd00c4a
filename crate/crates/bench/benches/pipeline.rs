use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qfan::decoder::fit_ridge;
use qfan::generation::rollout;
use qfan::nalgebra::DMatrix;
use qfan::quantum::{build_state, exact_features, sampled_features, ExecutionCounter};
use qfan::sketch::{SketchPlan, SketchState};
use qfan::training::{build_cache, initial_theta, mmd2, spsa_step, TrainContext};
use qfan::{CircuitSpec, Model, ModelConfig, Readout, Theta, TrainConfig};
use qfan_bench::{short_bundle, showers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn circuit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("circuit");
    for n in [3, 5, 8] {
        let spec = CircuitSpec::new(n, 2).unwrap();
        let a: Vec<f64> = (0..spec.angle_count()).map(|_| rng.random()).collect();
        let t = Theta((0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect());
        group.bench_with_input(BenchmarkId::new("build_state", n), &n, |b, _| {
            b.iter(|| build_state(&spec, &a, &t).unwrap())
        });
        let psi = build_state(&spec, &a, &t).unwrap();
        group.bench_with_input(BenchmarkId::new("exact_features", n), &n, |b, _| {
            b.iter(|| exact_features(&spec, &psi).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sampled_features_512", n), &n, |b, _| {
            b.iter(|| sampled_features(&spec, &psi, 512, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn sketch(c: &mut Criterion) {
    let plan = SketchPlan::new(40_500, 512, 0).unwrap();
    let block: Vec<(usize, f64)> = (0..73).map(|k| (1000 + k, 0.1 * k as f64)).collect();
    c.bench_function("sketch_update_b73", |b| {
        b.iter(|| {
            let mut s = SketchState::zeros(512);
            s.update(&plan, &block).unwrap()
        })
    });
}

fn linear_algebra(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = DMatrix::from_fn(6000, 12, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(6000, 6, |_, _| rng.random::<f64>());
    c.bench_function("ridge_fit_6000x12", |b| b.iter(|| fit_ridge(&f, &y, 1e-3).unwrap()));
    let x = DMatrix::from_fn(128, 6, |_, _| rng.random::<f64>());
    let z = DMatrix::from_fn(128, 6, |_, _| rng.random::<f64>());
    c.bench_function("mmd2_128", |b| b.iter(|| mmd2(&x, &z, 0.5).unwrap()));
}

fn training(c: &mut Criterion) {
    let data = showers(12, 1000);
    let model = Model::new(&ModelConfig::default(), 12, 0).unwrap();
    let cache = build_cache(&data, &model.conditioner, &model.partition).unwrap();
    let config = TrainConfig::default();
    let ctx = TrainContext {
        model: &model,
        config: &config,
        data: &data,
        cache: &cache,
        seed: 0,
    };
    let theta = initial_theta(&model, 0);
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("spsa_step_nb128", |b| b.iter(|| spsa_step(&ctx, &theta, 0).unwrap()));
    group.finish();
}

fn generation(c: &mut Criterion) {
    let data = showers(12, 1000);
    let bundle = short_bundle(&data);
    let counter = ExecutionCounter::new();
    let mut shots = ChaCha8Rng::seed_from_u64(3);
    let mut res = ChaCha8Rng::seed_from_u64(4);
    c.bench_function("rollout_d12", |b| {
        b.iter(|| rollout(&bundle, Readout::Shots(512), &mut shots, Some(&mut res), &counter).unwrap())
    });
}

criterion_group!(benches, circuit, sketch, linear_algebra, training, generation);
criterion_main!(benches);

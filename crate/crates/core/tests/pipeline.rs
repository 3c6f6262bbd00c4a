//! Training, generation and bundle behaviour on small synthetic runs.

use nalgebra::DMatrix;
use qfan::data::{synth_showers, Dataset, ShowerRecipe};
use qfan::evaluation::noise_accumulation_check;
use qfan::generation::{generate_batch, rollout, ModelBundle};
use qfan::quantum::{ExecutionCounter, Readout};
use qfan::rng::stream_rng;
use qfan::training::{build_cache, spsa_step, train, SketchCache, TrainConfig, TrainContext};
use qfan::{Model, ModelConfig};

fn data(d: usize, n: usize, seed: u64) -> Dataset {
    synth_showers(&ShowerRecipe::default(), d, n, seed).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        steps: 8,
        batch: 32,
        shots: 256,
        gate_epochs: 100,
        ..TrainConfig::default()
    }
}

fn small_bundle(exact: bool) -> (ModelBundle, Dataset) {
    let ds = data(12, 600, 1);
    let config = TrainConfig {
        exact,
        ..small_config()
    };
    let model = Model::new(&ModelConfig::default(), 12, 3).unwrap();
    let out = train(&model, &config, &ds, 3).unwrap();
    (ModelBundle::new(model, out.theta, out.fits, config).unwrap(), ds)
}

#[test]
fn cache_matches_prefix_recomputation() {
    let ds = data(12, 50, 2);
    for blocks in [1, 2, 5] {
        let config = ModelConfig {
            block_size: None,
            blocks: Some(blocks),
            ..Default::default()
        };
        let model = Model::new(&config, 12, 9).unwrap();
        let cache = build_cache(&ds, &model.conditioner, &model.partition).unwrap();
        assert_eq!(cache.blocks(), blocks);
        for beta in 0..blocks {
            let prefix = model.partition.prefix_len(beta);
            for i in 0..ds.n() {
                let s = model.conditioner.plan.apply_prefix(&ds.row(i), prefix).unwrap();
                let expected = model.conditioner.mixed(&s).unwrap();
                assert_eq!(cache.get(beta, i), expected.as_slice());
                if beta == 0 {
                    assert!(expected.iter().all(|v| *v == 0.0));
                }
            }
        }
    }
}

fn context<'a>(model: &'a Model, config: &'a TrainConfig, ds: &'a Dataset, cache: &'a SketchCache) -> TrainContext<'a> {
    TrainContext {
        model,
        config,
        data: ds,
        cache,
        seed: 4,
    }
}

#[test]
fn tiny_perturbation_leaves_theta_unchanged() {
    let ds = data(12, 200, 3);
    let model = Model::new(&ModelConfig::default(), 12, 4).unwrap();
    let cache = build_cache(&ds, &model.conditioner, &model.partition).unwrap();
    let config = TrainConfig {
        exact: true,
        c0: 1e-12,
        ..small_config()
    };
    let ctx = context(&model, &config, &ds, &cache);
    let theta = qfan::training::initial_theta(&model, 4);
    let (next, record) = spsa_step(&ctx, &theta, 0).unwrap();
    assert!((record.loss_plus - record.loss_minus).abs() < 1e-9);
    for (a, b) in next.0.iter().zip(&theta.0) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn step_ledger_counts_are_independent_of_d() {
    for batch in [24usize, 128] {
        let mut counts = Vec::new();
        for d in [12usize, 25, 48] {
            let ds = data(d, 300, 5);
            let config = TrainConfig {
                batch,
                ..small_config()
            };
            let model = Model::new(&ModelConfig::default(), d, 6).unwrap();
            let cache = build_cache(&ds, &model.conditioner, &model.partition).unwrap();
            let ctx = context(&model, &config, &ds, &cache);
            let (_, record) = spsa_step(&ctx, &qfan::training::initial_theta(&model, 6), 0).unwrap();
            assert_eq!(record.shots, record.circuits * 256);
            counts.push(record.circuits);
        }
        let expected = if batch == 128 { 512 } else { 96 };
        assert_eq!(counts, vec![expected; 3]);
    }
}

#[test]
fn training_is_deterministic_and_teacher_forced() {
    let ds = data(12, 400, 6);
    let model = Model::new(&ModelConfig::default(), 12, 7).unwrap();
    let config = small_config();
    let before = build_cache(&ds, &model.conditioner, &model.partition).unwrap();
    let a = train(&model, &config, &ds, 7).unwrap();
    let b = train(&model, &config, &ds, 7).unwrap();
    assert_eq!(a.theta, b.theta);
    let hashes = |o: &qfan::training::TrainOutcome| o.history.iter().map(|r| r.theta_hash.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
    assert_eq!(a.total_circuits(), 8 * 2 * 2 * 32);
    assert_ne!(a.theta, a.initial_theta);
    let after = build_cache(&ds, &model.conditioner, &model.partition).unwrap();
    assert_eq!(before, after);
}

#[test]
fn exact_training_lowers_the_loss_on_most_seeds() {
    let ds = data(12, 2000, 8);
    let config = TrainConfig {
        exact: true,
        gate_epochs: 1,
        ..TrainConfig::default()
    };
    let mut improved = 0;
    for seed in 0..10 {
        let model = Model::new(&ModelConfig::default(), 12, seed).unwrap();
        let out = train(&model, &config, &ds, seed).unwrap();
        if out.final_loss.mean < out.initial_loss.mean {
            improved += 1;
        }
    }
    assert!(improved >= 9, "improved on {improved} of 10 seeds");
}

#[test]
fn single_block_generation_decodes_the_zero_sketch() {
    let ds = data(12, 300, 9);
    let config = ModelConfig {
        block_size: Some(12),
        ..Default::default()
    };
    let model = Model::new(&config, 12, 1).unwrap();
    let tc = TrainConfig {
        exact: true,
        ..small_config()
    };
    let out = train(&model, &tc, &ds, 1).unwrap();
    let bundle = ModelBundle::new(model, out.theta, out.fits, tc).unwrap();
    let g = generate_batch(&bundle, 5, Readout::Exact, 0, false).unwrap();
    let f = bundle
        .model
        .features(
            &vec![0.0; 32],
            &bundle.theta,
            Readout::Exact,
            &mut stream_rng(0, 0),
            &ExecutionCounter::new(),
        )
        .unwrap();
    let expected: Vec<f64> = bundle.decoders[0]
        .decode(&f)
        .unwrap()
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    for r in 0..5 {
        assert_eq!(g.row(r).iter().copied().collect::<Vec<_>>(), expected);
    }
}

#[test]
fn generation_shape_determinism_and_clamping() {
    let (bundle, _) = small_bundle(false);
    assert_eq!(
        generate_batch(&bundle, 0, Readout::Shots(256), 1, true)
            .unwrap()
            .nrows(),
        0
    );
    let a = generate_batch(&bundle, 50, Readout::Shots(256), 1, true).unwrap();
    let b = generate_batch(&bundle, 50, Readout::Shots(256), 1, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.ncols(), 12);
    assert!(a.iter().all(|v| *v >= 0.0));
    let e1 = generate_batch(&bundle, 3, Readout::Exact, 1, false).unwrap();
    let e2 = generate_batch(&bundle, 3, Readout::Exact, 2, false).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn later_decoders_do_not_affect_earlier_blocks() {
    let ds = data(12, 600, 10);
    let config = ModelConfig {
        block_size: Some(3),
        ..Default::default()
    };
    let model = Model::new(&config, 12, 2).unwrap();
    let tc = small_config();
    let out = train(&model, &tc, &ds, 2).unwrap();
    let bundle = ModelBundle::new(model, out.theta, out.fits, tc).unwrap();
    let full = generate_batch(&bundle, 20, Readout::Shots(256), 5, true).unwrap();
    for beta in 0..4 {
        let mut probe = bundle.clone();
        for w in probe.decoders.iter_mut().skip(beta + 1) {
            w.w.fill(0.0);
        }
        let cut = generate_batch(&probe, 20, Readout::Shots(256), 5, true).unwrap();
        let end = probe.model.partition.range(beta).end;
        assert_eq!(full.columns(0, end), cut.columns(0, end));
    }
}

#[test]
fn different_seeds_agree_on_pixel_means() {
    let (bundle, _) = small_bundle(false);
    let a = generate_batch(&bundle, 1000, Readout::Shots(256), 11, true).unwrap();
    let b = generate_batch(&bundle, 1000, Readout::Shots(256), 12, true).unwrap();
    for j in 0..12 {
        let stats = |m: &DMatrix<f64>| {
            let col = m.column(j);
            let mean = col.mean();
            (mean, col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0)
        };
        let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
        let se = ((va + vb) / 1000.0).sqrt();
        assert!((ma - mb).abs() <= 3.0 * se.max(1e-12), "pixel {j}: {ma} vs {mb}");
    }
}

#[test]
fn bundle_round_trip() {
    let (bundle, _) = small_bundle(false);
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(back.hash().unwrap(), bundle.hash().unwrap());
    assert_eq!(
        generate_batch(&back, 10, Readout::Shots(64), 3, true).unwrap(),
        generate_batch(&bundle, 10, Readout::Shots(64), 3, true).unwrap()
    );
    std::fs::write(dir.path().join("theta.json"), "[0.0]").unwrap();
    assert!(ModelBundle::load(dir.path()).is_err());
}

#[test]
fn exact_rollouts_couple_perfectly_and_noise_stays_under_bound() {
    let (bundle, _) = small_bundle(false);
    let counter = ExecutionCounter::new();
    let run = || {
        let mut res = stream_rng(1, 0);
        rollout(&bundle, Readout::Exact, &mut stream_rng(2, 0), Some(&mut res), &counter).unwrap()
    };
    assert_eq!(run(), run());
    for row in noise_accumulation_check(&bundle, &[64, 1024], 50, 0).unwrap() {
        assert!(row.empirical > 0.0);
        assert!(row.empirical <= row.bound, "{row:?}");
    }
}

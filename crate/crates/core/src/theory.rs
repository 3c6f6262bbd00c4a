//! Empirical checks of the analytic guarantees: sketch inner products,
//! per-step circuit counts and the ridge weight bound.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{synth_showers, ShowerRecipe};
use crate::decoder::{decoder_gain, fit_ridge, weight_norm_bound_check};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::quantum::MEASUREMENT_GROUPS;
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sketch::SketchPlan;
use crate::training::{build_cache, initial_theta, spsa_step, step_circuit_count, TrainConfig, TrainContext};

/// Variance constant used when checking the sketch estimator empirically.
pub const SKETCH_VARIANCE_CONSTANT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchCheck {
    pub d: usize,
    pub m: usize,
    pub plans: usize,
    pub truth: f64,
    pub mean: f64,
    pub std_error: f64,
    pub variance: f64,
    pub variance_cap: f64,
    pub unbiased: bool,
    pub variance_ok: bool,
}

/// Inner-product estimates over `plans` independent sketch plans for one
/// fixed random pair of nonnegative vectors.
pub fn sketch_inner_product_check(d: usize, m: usize, plans: usize, seed: u64) -> Result<SketchCheck> {
    let mut rng = stream_rng(derive_seed(seed, &[tag::EVAL, 0x5C]), 0);
    let y: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    let y2: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, z)| x * z).sum::<f64>();
    let truth = dot(&y, &y2);
    let base = derive_seed(seed, &[tag::EVAL, 0x5D]);
    let est = (0..plans)
        .map(|p| SketchPlan::new(d, m, derive_seed(base, &[p as u64]))?.inner_product_estimate(&y, &y2))
        .collect::<Result<Vec<f64>>>()?;
    let n = plans as f64;
    let mean = est.iter().sum::<f64>() / n;
    let variance = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let std_error = (variance / n).sqrt();
    let variance_cap = SKETCH_VARIANCE_CONSTANT * dot(&y, &y) * dot(&y2, &y2) / m as f64;
    Ok(SketchCheck {
        d,
        m,
        plans,
        truth,
        mean,
        std_error,
        variance,
        variance_cap,
        unbiased: (mean - truth).abs() <= 3.0 * std_error,
        variance_ok: variance <= variance_cap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub d: usize,
    pub blocks: usize,
    pub batch: usize,
    pub circuits: u64,
    pub expected: u64,
}

/// Run one instrumented SPSA step per `(d, B, n_b)` and record its circuit
/// count.
pub fn circuit_count_grid(ds: &[usize], blocks: &[usize], batches: &[usize], seed: u64) -> Result<Vec<CountRow>> {
    let mut rows = Vec::new();
    for &d in ds {
        let data = synth_showers(&ShowerRecipe::default(), d, 256, seed)?;
        for &b in blocks {
            let config = ModelConfig {
                block_size: None,
                blocks: Some(b),
                ..ModelConfig::default()
            };
            let model = Model::new(&config, d, seed)?;
            let cache = build_cache(&data, &model.conditioner, &model.partition)?;
            for &batch in batches {
                let train = TrainConfig {
                    batch,
                    steps: 1,
                    ..TrainConfig::default()
                };
                let ctx = TrainContext {
                    model: &model,
                    config: &train,
                    data: &data,
                    cache: &cache,
                    seed,
                };
                let (_, record) = spsa_step(&ctx, &initial_theta(&model, seed), 0)?;
                rows.push(CountRow {
                    d,
                    blocks: b,
                    batch,
                    circuits: record.circuits,
                    expected: step_circuit_count(batch, MEASUREMENT_GROUPS),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeCheck {
    pub trials: usize,
    pub bound_holds: usize,
    /// Largest `||W||_F / (||Y||_F / (2 sqrt(alpha)))` seen.
    pub max_ratio: f64,
    /// Largest decoder gain seen.
    pub max_gain: f64,
}

/// Weight-norm bound on random ridge problems of varied shape and scale.
pub fn ridge_bound_check(trials: usize, seed: u64) -> Result<RidgeCheck> {
    let mut rng = stream_rng(derive_seed(seed, &[tag::EVAL, 0x41]), 0);
    let mut out = RidgeCheck {
        trials,
        bound_holds: 0,
        max_ratio: 0.0,
        max_gain: 0.0,
    };
    for _ in 0..trials {
        let (n, p, b) = (rng.random_range(1..60), rng.random_range(1..20), rng.random_range(1..8));
        let scale: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
        let alpha: f64 = 10f64.powf(rng.random_range(-4.0..1.0));
        let f = DMatrix::from_fn(n, p, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, b, |_, _| rng.sample::<f64, _>(StandardNormal));
        let check = weight_norm_bound_check(&f, &y, alpha)?;
        if check.holds {
            out.bound_holds += 1;
        }
        out.max_ratio = out.max_ratio.max(check.lhs / check.rhs);
        out.max_gain = out.max_gain.max(decoder_gain(&fit_ridge(&f, &y, alpha)?));
    }
    Ok(out)
}

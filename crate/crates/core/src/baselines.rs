//! Ablation feature stages and the ablation sweeps.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{QfanError, Result};
use crate::evaluation::evaluate;
use crate::generation::{generate_batch, ModelBundle};
use crate::model::{FeatureKind, Model, ModelConfig};
use crate::quantum::FeatureVector;
use crate::rng::{derive_seed, stream_rng, tag};
use crate::training::{train, TrainConfig};

/// `cos(W s + b)` elementwise.
pub fn rff_features(mixed: &[f64], weights: &DMatrix<f64>, bias: &[f64]) -> Result<Vec<f64>> {
    if weights.ncols() != mixed.len() {
        return Err(QfanError::mismatch("rff input", weights.ncols(), mixed.len()));
    }
    if bias.len() != weights.nrows() {
        return Err(QfanError::mismatch("rff bias", weights.nrows(), bias.len()));
    }
    Ok((0..weights.nrows())
        .map(|i| {
            let z: f64 = weights.row(i).iter().zip(mixed).map(|(w, s)| w * s).sum();
            (z + bias[i]).cos()
        })
        .collect())
}

/// Frozen random Fourier feature map: standard-normal weights, bias uniform
/// on `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
}

impl RffMap {
    pub fn new(features: usize, m: usize, seed: u64) -> Result<Self> {
        if features == 0 || m == 0 {
            return Err(QfanError::InvalidDimension("rff map needs positive sizes".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let weights = DMatrix::from_fn(features, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let bias = (0..features).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self { weights, bias })
    }

    pub fn features(&self, mixed: &[f64]) -> Result<Vec<f64>> {
        rff_features(mixed, &self.weights, &self.bias)
    }
}

/// Positions of the single-qubit Z and X expectations in a full feature
/// vector.
pub fn weight1_indices(n_qubits: usize) -> Vec<usize> {
    let group = n_qubits + n_qubits * n_qubits.saturating_sub(1) / 2;
    (0..n_qubits).chain(group..group + n_qubits).collect()
}

pub fn weight1_feature_mask(f: &FeatureVector, n_qubits: usize) -> Result<Vec<f64>> {
    let expected = crate::quantum::feature_count(n_qubits);
    if f.0.len() != expected {
        return Err(QfanError::mismatch("feature vector", expected, f.0.len()));
    }
    Ok(weight1_indices(n_qubits).into_iter().map(|i| f.0[i]).collect())
}

/// Inverse of the mask: retained entries in place, zeros elsewhere.
pub fn weight1_embed(masked: &[f64], n_qubits: usize) -> Vec<f64> {
    let mut out = vec![0.0; crate::quantum::feature_count(n_qubits)];
    for (v, i) in masked.iter().zip(weight1_indices(n_qubits)) {
        out[i] = *v;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSuite {
    Weight2,
    Blocksize,
    Rff,
}

impl AblationSuite {
    /// Labelled model variants of the suite, derived from `base`.
    pub fn cells(&self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        let with = |features: FeatureKind, block: usize, rff: usize| ModelConfig {
            features,
            block_size: Some(block),
            blocks: None,
            rff_features: rff,
            ..base.clone()
        };
        let b = base.block_size.unwrap_or(6);
        match self {
            AblationSuite::Weight2 => vec![
                ("weight-1".into(), with(FeatureKind::Weight1, b, 0)),
                ("weight-1+2".into(), with(FeatureKind::Quantum, b, 0)),
            ],
            AblationSuite::Blocksize => [3, 4, 6, 12]
                .into_iter()
                .map(|bs| (format!("b={bs}"), with(FeatureKind::Quantum, bs, 0)))
                .collect(),
            AblationSuite::Rff => vec![
                ("quantum-12".into(), with(FeatureKind::Quantum, b, 0)),
                ("rff-12".into(), with(FeatureKind::Rff, b, 12)),
                ("rff-72".into(), with(FeatureKind::Rff, b, 72)),
            ],
        }
    }
}

/// Shared budget of every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub generated: usize,
    /// Add sampled residuals at generation time. Without them the first
    /// block sees a zero sketch and decodes to a near-constant image.
    pub residuals: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            generated: 1000,
            residuals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: AblationSuite,
    pub label: String,
    pub p_f: usize,
    pub block_size: usize,
    pub blocks: usize,
    pub rho: f64,
    pub seed_w1: Vec<f64>,
    pub seed_corr_error: Vec<f64>,
    pub median_w1: f64,
    pub median_corr_error: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train, generate and evaluate every cell of `suite` over all seeds.
pub fn run_ablation_suite(
    train_data: &Dataset,
    test_data: &Dataset,
    base: &ModelConfig,
    suite: AblationSuite,
    settings: &AblationSettings,
) -> Result<Vec<AblationRow>> {
    let readout = settings.train.readout();
    suite
        .cells(base)
        .into_iter()
        .map(|(label, config)| {
            let mut seed_w1 = Vec::new();
            let mut seed_corr = Vec::new();
            let mut shape = (0, 0, 0);
            for &seed in &settings.seeds {
                let model = Model::new(&config, train_data.d(), seed)?;
                shape = (model.feature_dim(), config.block_size.unwrap_or(0), model.blocks());
                let outcome = train(&model, &settings.train, train_data, seed)?;
                let partition = model.partition.clone();
                let bundle = ModelBundle::new(model, outcome.theta, outcome.fits, settings.train.clone())?;
                let gen_seed = derive_seed(seed, &[tag::GENERATE, 0xAB]);
                let gen = generate_batch(&bundle, settings.generated, readout, gen_seed, settings.residuals)?;
                let report = evaluate(&test_data.y, &gen, &partition)?;
                log::info!(
                    "{label} seed {seed}: W1 {:.5} dC {:.5}",
                    report.w1.mean,
                    report.corr_error
                );
                seed_w1.push(report.w1.mean);
                seed_corr.push(report.corr_error);
            }
            let (p_f, block_size, blocks) = shape;
            Ok(AblationRow {
                suite,
                label,
                p_f,
                block_size,
                blocks,
                rho: p_f as f64 / block_size.max(1) as f64,
                median_w1: median(&seed_w1),
                median_corr_error: median(&seed_corr),
                seed_w1,
                seed_corr_error: seed_corr,
            })
        })
        .collect()
}

/// CSV in the layout of the ablation tables.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("suite,config,p_f,b,B,rho,median_w1,median_corr_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.4},{:?},{:?}\n",
            serde_json::to_value(r.suite)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            r.label,
            r.p_f,
            r.block_size,
            r.blocks,
            r.rho,
            r.median_w1,
            r.median_corr_error
        ));
    }
    out
}

//! Free-running autoregressive rollouts and the on-disk model bundle.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::RidgeWeights;
use crate::error::{QfanError, Result};
use crate::model::{Model, ModelConfig};
use crate::quantum::{ExecutionCounter, Readout, Theta};
use crate::residual::{sample_residual, ClusterBank, GateModel};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sketch::{SketchRecord, SketchState};
use crate::training::{BlockFits, TrainConfig};

pub const BUNDLE_SCHEMA: u32 = 1;
const BUNDLE_FILES: [&str; 6] = [
    "model.json",
    "theta.json",
    "decoders.json",
    "bank.json",
    "gate.json",
    "config.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    schema_version: u32,
    d: usize,
    seed: u64,
    model: ModelConfig,
    sketch: SketchRecord,
}

/// Trained model: frozen architecture, shared parameters, per-block decoders
/// and residual samplers.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: Model,
    pub theta: Theta,
    pub decoders: Vec<RidgeWeights>,
    pub banks: Vec<ClusterBank>,
    pub gates: Vec<GateModel>,
    pub train_config: TrainConfig,
}

impl ModelBundle {
    pub fn new(model: Model, theta: Theta, fits: BlockFits, train_config: TrainConfig) -> Result<Self> {
        let bundle = Self {
            model,
            theta,
            decoders: fits.decoders,
            banks: fits.banks,
            gates: fits.gates,
            train_config,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.model.blocks();
        for (what, len) in [
            ("decoders", self.decoders.len()),
            ("residual banks", self.banks.len()),
            ("gates", self.gates.len()),
        ] {
            if len != blocks {
                return Err(QfanError::mismatch(what, blocks, len));
            }
        }
        if self.theta.len() != self.model.spec.param_count() {
            return Err(QfanError::mismatch(
                "theta",
                self.model.spec.param_count(),
                self.theta.len(),
            ));
        }
        let p = self.model.feature_dim();
        for (beta, w) in self.decoders.iter().enumerate() {
            let width = self.model.partition.width(beta);
            if w.features() != p || w.outputs() != width {
                return Err(QfanError::mismatch(
                    "decoder shape",
                    p * width,
                    w.features() * w.outputs(),
                ));
            }
            if self.banks[beta].width() != width {
                return Err(QfanError::mismatch("residual width", width, self.banks[beta].width()));
            }
            if self.gates[beta].inputs != self.model.conditioner.m() {
                return Err(QfanError::mismatch(
                    "gate inputs",
                    self.model.conditioner.m(),
                    self.gates[beta].inputs,
                ));
            }
        }
        Ok(())
    }

    /// Worst block decoder gain.
    pub fn gain(&self) -> f64 {
        self.decoders.iter().map(RidgeWeights::gain).fold(0.0, f64::max)
    }

    fn file_contents(&self) -> Result<Vec<String>> {
        let record = ModelRecord {
            schema_version: BUNDLE_SCHEMA,
            d: self.model.d(),
            seed: self.model.seed,
            model: self.model.config.clone(),
            sketch: self.model.conditioner.plan.record(),
        };
        Ok(vec![
            serde_json::to_string_pretty(&record)?,
            serde_json::to_string_pretty(&self.theta)?,
            serde_json::to_string_pretty(&self.decoders)?,
            serde_json::to_string_pretty(&self.banks)?,
            serde_json::to_string_pretty(&self.gates)?,
            serde_json::to_string_pretty(&self.train_config)?,
        ])
    }

    /// Hex SHA-256 over the serialized bundle files.
    pub fn hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for text in self.file_contents()? {
            hasher.update(text.as_bytes());
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in BUNDLE_FILES.iter().zip(self.file_contents()?) {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> { Ok(fs::read_to_string(dir.join(name))?) };
        let record: ModelRecord = serde_json::from_str(&read("model.json")?)?;
        if record.schema_version != BUNDLE_SCHEMA {
            return Err(QfanError::Format(format!(
                "unsupported bundle schema {}",
                record.schema_version
            )));
        }
        let model = Model::new(&record.model, record.d, record.seed)?;
        if model.conditioner.plan.record() != record.sketch {
            return Err(QfanError::Format("stored sketch plan does not match its seed".into()));
        }
        let bundle = Self {
            model,
            theta: serde_json::from_str(&read("theta.json")?)?,
            decoders: serde_json::from_str(&read("decoders.json")?)?,
            banks: serde_json::from_str(&read("bank.json")?)?,
            gates: serde_json::from_str(&read("gate.json")?)?,
            train_config: serde_json::from_str(&read("config.json")?)?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// One generated image plus the raw sketch after each non-final block.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub image: Vec<f64>,
    pub sketches: Vec<Vec<f64>>,
}

/// Sequential block loop. Shot noise and residual draws use separate
/// generators so two rollouts can share one and differ in the other.
pub fn rollout<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    bundle: &ModelBundle,
    readout: Readout,
    shot_rng: &mut R1,
    residual_rng: Option<&mut R2>,
    counter: &ExecutionCounter,
) -> Result<Rollout> {
    let model = &bundle.model;
    let mut residual_rng = residual_rng;
    let mut state = SketchState::zeros(model.conditioner.m());
    let mut image = Vec::with_capacity(model.d());
    let mut sketches = Vec::with_capacity(model.blocks().saturating_sub(1));
    for (beta, range) in model.partition.ranges().enumerate() {
        let mixed = model.conditioner.mixed(state.values())?;
        let f = model.features(&mixed, &bundle.theta, readout, shot_rng, counter)?;
        let mut block = bundle.decoders[beta].decode(&f)?;
        if let Some(rng) = residual_rng.as_deref_mut() {
            let r = sample_residual(&bundle.banks[beta], &bundle.gates[beta], &mixed, rng)?;
            for (v, e) in block.iter_mut().zip(r) {
                *v += e;
            }
        }
        for v in block.iter_mut() {
            *v = v.max(0.0);
        }
        image.extend_from_slice(&block);
        if beta + 1 < model.blocks() {
            let pairs: Vec<(usize, f64)> = range.zip(block.iter().copied()).collect();
            state.update(&model.conditioner.plan, &pairs)?;
            sketches.push(state.values().to_vec());
        }
    }
    Ok(Rollout { image, sketches })
}

/// Generate one image with a single generator for all randomness.
pub fn generate_one<R: Rng>(bundle: &ModelBundle, readout: Readout, rng: &mut R, residuals: bool) -> Result<Vec<f64>> {
    let counter = ExecutionCounter::new();
    let mut residual_rng = rand_chacha::ChaCha8Rng::from_rng(&mut *rng);
    let out = rollout(bundle, readout, rng, residuals.then_some(&mut residual_rng), &counter)?;
    Ok(out.image)
}

/// Per-row generators: (shot stream, residual stream) for row `i`.
pub fn row_streams(seed: u64, i: usize) -> (rand_chacha::ChaCha8Rng, rand_chacha::ChaCha8Rng) {
    (
        stream_rng(derive_seed(seed, &[tag::GENERATE, 0]), i as u64),
        stream_rng(derive_seed(seed, &[tag::GENERATE, 1]), i as u64),
    )
}

/// `n` independent rollouts; row `i` depends only on `(seed, i)`.
pub fn generate_batch(
    bundle: &ModelBundle,
    n: usize,
    readout: Readout,
    seed: u64,
    residuals: bool,
) -> Result<DMatrix<f64>> {
    let counter = ExecutionCounter::new();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut shots, mut res) = row_streams(seed, i);
            rollout(bundle, readout, &mut shots, residuals.then_some(&mut res), &counter).map(|r| r.image)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, bundle.model.d(), |r, c| rows[r][c]))
}

/// Provenance written next to a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub bundle_hash: String,
    pub seed: u64,
    pub n: usize,
    pub shots: Option<usize>,
    pub residuals: bool,
}

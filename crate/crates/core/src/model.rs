//! Architecture configuration and the feature stage shared by training and
//! generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{weight1_indices, RffMap};
use crate::blocks::BlockPartition;
use crate::error::{QfanError, Result};
use crate::quantum::{measure, CircuitSpec, ExecutionCounter, Readout, Theta};
use crate::rng::{derive_seed, tag};
use crate::sketch::SketchConditioner;

/// Which features feed the ridge decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// All weight-1 and weight-2 Z/X expectations.
    Quantum,
    /// Single-qubit Z and X expectations only.
    Weight1,
    /// Frozen random Fourier features of the mixed sketch; no circuit.
    Rff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_qubits: usize,
    pub layers: usize,
    pub sketch_dim: usize,
    /// Pixels per block; the last block may be short. Exclusive with `blocks`.
    pub block_size: Option<usize>,
    /// Number of near-equal blocks. Exclusive with `block_size`.
    pub blocks: Option<usize>,
    pub features: FeatureKind,
    /// Output width of the random Fourier feature stage.
    pub rff_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_qubits: 3,
            layers: 2,
            sketch_dim: 32,
            block_size: Some(6),
            blocks: None,
            features: FeatureKind::Quantum,
            rff_features: 12,
        }
    }
}

impl ModelConfig {
    pub fn partition(&self, d: usize) -> Result<BlockPartition> {
        match (self.block_size, self.blocks) {
            (Some(b), None) => BlockPartition::uniform(d, b),
            (None, Some(count)) => BlockPartition::balanced(d, count),
            _ => Err(QfanError::InvalidConfig(
                "exactly one of block_size and blocks must be set".into(),
            )),
        }
    }
}

/// Frozen architecture: circuit, sketch conditioner, partition and feature
/// stage, all rebuilt deterministically from `(config, d, seed)`.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub spec: CircuitSpec,
    pub conditioner: SketchConditioner,
    pub partition: BlockPartition,
    rff: Option<RffMap>,
    weight1: Vec<usize>,
}

impl Model {
    pub fn new(config: &ModelConfig, d: usize, seed: u64) -> Result<Self> {
        let spec = CircuitSpec::new(config.n_qubits, config.layers)?;
        let partition = config.partition(d)?;
        let conditioner = SketchConditioner::new(d, config.sketch_dim, spec.angle_count(), seed)?;
        let rff = match config.features {
            FeatureKind::Rff => Some(RffMap::new(
                config.rff_features,
                config.sketch_dim,
                derive_seed(seed, &[tag::RFF]),
            )?),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            seed,
            spec,
            conditioner,
            partition,
            rff,
            weight1: weight1_indices(config.n_qubits),
        })
    }

    pub fn d(&self) -> usize {
        self.partition.d()
    }

    pub fn blocks(&self) -> usize {
        self.partition.count()
    }

    /// Whether the features depend on the circuit parameters.
    pub fn uses_circuit(&self) -> bool {
        self.config.features != FeatureKind::Rff
    }

    pub fn feature_dim(&self) -> usize {
        match self.config.features {
            FeatureKind::Quantum => self.spec.feature_count(),
            FeatureKind::Weight1 => self.weight1.len(),
            FeatureKind::Rff => self.config.rff_features,
        }
    }

    /// Features for one mixed sketch. Circuit executions are recorded on
    /// `counter`; the classical stage records none.
    pub fn features<R: Rng + ?Sized>(
        &self,
        mixed: &[f64],
        theta: &Theta,
        readout: Readout,
        rng: &mut R,
        counter: &ExecutionCounter,
    ) -> Result<Vec<f64>> {
        match &self.rff {
            Some(rff) => rff.features(mixed),
            None => {
                let angles = self.conditioner.angles(mixed)?;
                let f = measure(&self.spec, &angles, theta, readout, rng, counter)?;
                Ok(match self.config.features {
                    FeatureKind::Weight1 => self.weight1.iter().map(|&i| f.0[i]).collect(),
                    _ => f.0,
                })
            }
        }
    }
}

//! Streaming count-sketch of generated pixels and the fixed maps that turn
//! a sketch into circuit angles.
//!
//! A [`SketchPlan`] fixes the bucket map `h: [d] -> [m]` and the sign map
//! `sgn: [d] -> {+1, -1}`. The running [`SketchState`] accumulates
//! `s[h(k)] += sgn(k) * y_k` one block at a time. Before the sketch reaches
//! the circuit it passes through a near-identity [`MixingLayer`]
//! (`tanh(M s)`) and an [`AngleProjector`] (`logistic(A s~ + b)`).
//!
//! All maps are regenerated from `(d, m, seed)`; nothing here is trained.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QfanError, Result};
use crate::rng::{derive_seed, stream_rng, tag};

/// Scale of the random perturbation added to the identity in [`MixingLayer`].
pub const MIXING_EPSILON: f64 = 0.01;

/// Fixed hash and sign maps of a count-sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPlan {
    d: usize,
    m: usize,
    seed: u64,
    buckets: Vec<usize>,
    signs: Vec<f64>,
}

/// Serializable identity of a plan; the maps are rebuilt from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchRecord {
    pub d: usize,
    pub m: usize,
    pub seed: u64,
}

impl SketchPlan {
    /// Draw bucket and sign for every pixel index. Pixel `k` reads its own
    /// counter-addressed stream, so plans for different `d` agree on the
    /// shared prefix of indices.
    pub fn new(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(QfanError::InvalidDimension(format!(
                "sketch needs d >= 1 and m >= 1 (got d={d}, m={m})"
            )));
        }
        let hash_seed = derive_seed(seed, &[tag::SKETCH_HASH]);
        let (buckets, signs) = (0..d)
            .map(|k| {
                let mut rng = stream_rng(hash_seed, k as u64);
                let bucket = rng.random_range(0..m);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (bucket, sign)
            })
            .unzip();
        Ok(Self {
            d,
            m,
            seed,
            buckets,
            signs,
        })
    }

    /// Plan with explicit maps, mostly for tests and hand-built examples.
    pub fn from_maps(m: usize, buckets: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        if buckets.is_empty() || m == 0 {
            return Err(QfanError::InvalidDimension("empty sketch maps".into()));
        }
        if buckets.len() != signs.len() {
            return Err(QfanError::mismatch("sketch sign map", buckets.len(), signs.len()));
        }
        if let Some(&b) = buckets.iter().find(|&&b| b >= m) {
            return Err(QfanError::IndexOutOfRange { index: b, len: m });
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(QfanError::InvalidDimension("signs must be +1 or -1".into()));
        }
        Ok(Self {
            d: buckets.len(),
            m,
            seed: 0,
            buckets,
            signs,
        })
    }

    pub fn from_record(record: SketchRecord) -> Result<Self> {
        Self::new(record.d, record.m, record.seed)
    }

    pub fn record(&self) -> SketchRecord {
        SketchRecord {
            d: self.d,
            m: self.m,
            seed: self.seed,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bucket(&self, k: usize) -> usize {
        self.buckets[k]
    }

    pub fn sign(&self, k: usize) -> f64 {
        self.signs[k]
    }

    /// `S y` for a full-length vector.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d {
            return Err(QfanError::mismatch("sketch input", self.d, y.len()));
        }
        let mut s = vec![0.0; self.m];
        for (k, &v) in y.iter().enumerate() {
            s[self.buckets[k]] += self.signs[k] * v;
        }
        Ok(s)
    }

    /// `S y` restricted to the prefix `y[..len]`; the rest is treated as zero.
    pub fn apply_prefix(&self, y: &[f64], len: usize) -> Result<Vec<f64>> {
        if y.len() != self.d {
            return Err(QfanError::mismatch("sketch input", self.d, y.len()));
        }
        if len > self.d {
            return Err(QfanError::IndexOutOfRange {
                index: len,
                len: self.d,
            });
        }
        let mut s = vec![0.0; self.m];
        for k in 0..len {
            s[self.buckets[k]] += self.signs[k] * y[k];
        }
        Ok(s)
    }

    /// Sketch inner-product estimate `<S y, S y'>`.
    pub fn inner_product_estimate(&self, y: &[f64], y2: &[f64]) -> Result<f64> {
        let a = self.apply(y)?;
        let b = self.apply(y2)?;
        Ok(a.iter().zip(&b).map(|(x, z)| x * z).sum())
    }
}

/// Running sketch of the pixels generated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchState {
    s: Vec<f64>,
    blocks_absorbed: usize,
}

impl SketchState {
    pub fn zeros(m: usize) -> Self {
        Self {
            s: vec![0.0; m],
            blocks_absorbed: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn blocks_absorbed(&self) -> usize {
        self.blocks_absorbed
    }

    /// Absorb one block of `(pixel index, value)` pairs. Returns the number of
    /// bucket writes performed, which never exceeds the block length.
    ///
    /// The block is validated before any bucket is touched, so a failed call
    /// leaves the state unchanged.
    pub fn update(&mut self, plan: &SketchPlan, block: &[(usize, f64)]) -> Result<usize> {
        if self.s.len() != plan.m() {
            return Err(QfanError::mismatch("sketch state width", plan.m(), self.s.len()));
        }
        let mut indices: Vec<usize> = block.iter().map(|&(k, _)| k).collect();
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(QfanError::DuplicateIndex(w[0]));
            }
        }
        if let Some(&k) = indices.last() {
            if k >= plan.d() {
                return Err(QfanError::IndexOutOfRange {
                    index: k,
                    len: plan.d(),
                });
            }
        }
        let mut writes = 0;
        for &(k, v) in block {
            self.s[plan.bucket(k)] += plan.sign(k) * v;
            writes += 1;
        }
        self.blocks_absorbed += 1;
        Ok(writes)
    }
}

/// Near-identity `m x m` map applied as `tanh(M s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingLayer {
    m: usize,
    /// Row-major `m x m`.
    matrix: Vec<f64>,
}

impl MixingLayer {
    /// `M = I + 0.01 G` with standard-normal `G`.
    pub fn new(m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(QfanError::InvalidDimension("mixing width must be >= 1".into()));
        }
        let mut rng = stream_rng(derive_seed(seed, &[tag::MIXING]), 0);
        let mut matrix = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let g: f64 = rng.sample(StandardNormal);
                matrix[i * m + j] = if i == j { 1.0 } else { 0.0 } + MIXING_EPSILON * g;
            }
        }
        Ok(Self { m, matrix })
    }

    pub fn identity(m: usize) -> Self {
        let mut matrix = vec![0.0; m * m];
        for i in 0..m {
            matrix[i * m + i] = 1.0;
        }
        Self { m, matrix }
    }

    pub fn from_matrix(m: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != m * m {
            return Err(QfanError::mismatch("mixing matrix", m * m, matrix.len()));
        }
        Ok(Self { m, matrix })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.m + j]
    }

    pub fn mix(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.m {
            return Err(QfanError::mismatch("mixing input", self.m, s.len()));
        }
        Ok(self
            .matrix
            .chunks_exact(self.m)
            .map(|row| row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect())
    }
}

/// Affine map plus logistic squashing from mixed sketch to angle slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleProjector {
    outputs: usize,
    m: usize,
    /// Row-major `outputs x m`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AngleProjector {
    /// Weights standard-normal scaled by `1/sqrt(m)`, bias zero.
    pub fn new(outputs: usize, m: usize, seed: u64) -> Result<Self> {
        if outputs == 0 || m == 0 {
            return Err(QfanError::InvalidDimension(format!(
                "projector needs outputs >= 1 and m >= 1 (got {outputs}, {m})"
            )));
        }
        let mut rng = stream_rng(derive_seed(seed, &[tag::PROJECTION]), 0);
        let scale = 1.0 / (m as f64).sqrt();
        let weights = (0..outputs * m)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            outputs,
            m,
            weights,
            bias: vec![0.0; outputs],
        })
    }

    pub fn from_parts(outputs: usize, m: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != outputs * m {
            return Err(QfanError::mismatch("projector weights", outputs * m, weights.len()));
        }
        if bias.len() != outputs {
            return Err(QfanError::mismatch("projector bias", outputs, bias.len()));
        }
        Ok(Self {
            outputs,
            m,
            weights,
            bias,
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn project(&self, mixed: &[f64]) -> Result<Vec<f64>> {
        if mixed.len() != self.m {
            return Err(QfanError::mismatch("projector input", self.m, mixed.len()));
        }
        Ok(self
            .weights
            .chunks_exact(self.m)
            .zip(&self.bias)
            .map(|(row, b)| logistic(row.iter().zip(mixed).map(|(w, x)| w * x).sum::<f64>() + b))
            .collect())
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything between the raw sketch and the circuit angles, rebuilt from
/// one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchConditioner {
    pub plan: SketchPlan,
    pub mixer: MixingLayer,
    pub projector: AngleProjector,
}

impl SketchConditioner {
    pub fn new(d: usize, m: usize, angle_count: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            plan: SketchPlan::new(d, m, seed)?,
            mixer: MixingLayer::new(m, seed)?,
            projector: AngleProjector::new(angle_count, m, seed)?,
        })
    }

    pub fn m(&self) -> usize {
        self.plan.m()
    }

    /// Mixed sketch `tanh(M s)` of a raw sketch.
    pub fn mixed(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.mixer.mix(s)
    }

    pub fn angles(&self, mixed: &[f64]) -> Result<Vec<f64>> {
        self.projector.project(mixed)
    }
}

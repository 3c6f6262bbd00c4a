//! SPSA training of the shared circuit parameters under the blockwise MMD²
//! loss, with a teacher-forced sketch cache and exact circuit accounting.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::BlockPartition;
use crate::data::Dataset;
use crate::decoder::{fit_ridge, predict, RidgeWeights, DEFAULT_ALPHA};
use crate::error::{QfanError, Result};
use crate::model::Model;
use crate::quantum::{ExecutionCounter, Readout, Theta, MEASUREMENT_GROUPS};
use crate::residual::{
    fit_gate, fit_residual_bank, ClusterBank, GateModel, DEFAULT_CLUSTERS, DEFAULT_GATE_EPOCHS, DEFAULT_GATE_STEP,
    DEFAULT_KMEANS_ITERS,
};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sketch::{SketchConditioner, SketchState};

/// Perturbation sizes at or below this skip the update: the difference
/// quotient is pure rounding noise there.
pub const MIN_PERTURBATION: f64 = 1e-9;

/// Kernel bandwidth for the MMD² loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    /// Median pairwise distance of the minibatch's ground-truth block.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub shots: usize,
    /// Use exact expectations instead of finite shots.
    pub exact: bool,
    pub a0: f64,
    pub c0: f64,
    /// SPSA stability constant; `None` means `0.1 * steps`.
    pub stability: Option<f64>,
    pub alpha_exponent: f64,
    pub gamma_exponent: f64,
    pub ridge_alpha: f64,
    pub bandwidth: BandwidthMode,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub gate_epochs: usize,
    pub gate_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 120,
            batch: 128,
            shots: 512,
            exact: false,
            a0: 0.15,
            c0: 0.1,
            stability: None,
            alpha_exponent: 0.602,
            gamma_exponent: 0.101,
            ridge_alpha: DEFAULT_ALPHA,
            bandwidth: BandwidthMode::Median,
            clusters: DEFAULT_CLUSTERS,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            gate_epochs: DEFAULT_GATE_EPOCHS,
            gate_step: DEFAULT_GATE_STEP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(QfanError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.batch < 2 {
            return Err(QfanError::InvalidConfig("batch must be >= 2".into()));
        }
        if self.shots == 0 {
            return Err(QfanError::InvalidShots);
        }
        if !(self.a0 > 0.0) || !(self.c0 >= 0.0) {
            return Err(QfanError::InvalidConfig("SPSA gains must be positive".into()));
        }
        if !(self.ridge_alpha > 0.0) {
            return Err(QfanError::InvalidRegularization(self.ridge_alpha));
        }
        if let BandwidthMode::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(QfanError::InvalidBandwidth(h));
            }
        }
        Ok(())
    }

    pub fn readout(&self) -> Readout {
        if self.exact {
            Readout::Exact
        } else {
            Readout::Shots(self.shots)
        }
    }

    pub fn stability_constant(&self) -> f64 {
        self.stability.unwrap_or(0.1 * self.steps as f64)
    }

    /// `a_t = a0 / (t + 1 + A)^alpha`.
    pub fn gain_a(&self, t: usize) -> f64 {
        self.a0 / (t as f64 + 1.0 + self.stability_constant()).powf(self.alpha_exponent)
    }

    /// `c_t = c0 / (t + 1)^gamma`.
    pub fn gain_c(&self, t: usize) -> f64 {
        self.c0 / (t as f64 + 1.0).powf(self.gamma_exponent)
    }
}

/// Circuits per SPSA step: two loss evaluations of `groups * batch` circuits.
pub fn step_circuit_count(batch: usize, groups: usize) -> u64 {
    2 * groups as u64 * batch as u64
}

pub fn total_circuit_count(steps: usize, batch: usize, groups: usize) -> u64 {
    steps as u64 * step_circuit_count(batch, groups)
}

/// Shots per SPSA step.
pub fn step_shot_count(batch: usize, groups: usize, shots: usize) -> u64 {
    step_circuit_count(batch, groups) * shots as u64
}

/// Teacher-forced mixed sketches: entry `(block, i)` is the mixed sketch of
/// sample `i`'s ground-truth pixels before `block`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchCache {
    blocks: usize,
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl SketchCache {
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, block: usize, i: usize) -> &[f64] {
        let start = (block * self.n + i) * self.m;
        &self.data[start..start + self.m]
    }

    /// All samples' mixed sketches for one block as an `N x m` matrix.
    pub fn block_matrix(&self, block: usize) -> DMatrix<f64> {
        let start = block * self.n * self.m;
        DMatrix::from_row_slice(self.n, self.m, &self.data[start..start + self.n * self.m])
    }
}

pub fn build_cache(data: &Dataset, conditioner: &SketchConditioner, partition: &BlockPartition) -> Result<SketchCache> {
    if partition.d() != data.d() || conditioner.plan.d() != data.d() {
        return Err(QfanError::mismatch("cache pixels", data.d(), partition.d()));
    }
    let (n, m, blocks) = (data.n(), conditioner.m(), partition.count());
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let row = data.row(i);
            let mut state = SketchState::zeros(m);
            let mut out = Vec::with_capacity(blocks * m);
            for (beta, range) in partition.ranges().enumerate() {
                out.extend(conditioner.mixed(state.values())?);
                if beta + 1 < blocks {
                    let block: Vec<(usize, f64)> = range.map(|k| (k, row[k])).collect();
                    state.update(&conditioner.plan, &block)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut cache = vec![0.0; blocks * n * m];
    for (i, sample) in per_sample.iter().enumerate() {
        for beta in 0..blocks {
            let dst = (beta * n + i) * m;
            cache[dst..dst + m].copy_from_slice(&sample[beta * m..(beta + 1) * m]);
        }
    }
    Ok(SketchCache {
        blocks,
        n,
        m,
        data: cache,
    })
}

fn sq_dist(x: &DMatrix<f64>, i: usize, y: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|c| (x[(i, c)] - y[(j, c)]).powi(2)).sum()
}

fn mean_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>, inv: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        for j in 0..y.nrows() {
            total += (-sq_dist(x, i, y, j) * inv).exp();
        }
    }
    total / (x.nrows() * y.nrows()) as f64
}

/// Biased (V-statistic) squared MMD with the Gaussian kernel
/// `exp(-|x - y|² / (2 h²))`. Rows are samples.
pub fn mmd2(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(QfanError::InvalidBandwidth(bandwidth));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(QfanError::EmptySamples);
    }
    if x.ncols() != y.ncols() {
        return Err(QfanError::mismatch("mmd sample width", x.ncols(), y.ncols()));
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let v = mean_kernel(x, x, inv) + mean_kernel(y, y, inv) - 2.0 * mean_kernel(x, y, inv);
    Ok(v.max(0.0))
}

/// Median pairwise Euclidean distance between rows, falling back to the mean
/// nonzero distance (then 1) when the median is zero.
pub fn median_bandwidth(x: &DMatrix<f64>) -> f64 {
    let mut dists = Vec::with_capacity(x.nrows() * x.nrows().saturating_sub(1) / 2);
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            dists.push(sq_dist(x, i, x, j).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        return median;
    }
    let nonzero: Vec<f64> = dists.into_iter().filter(|v| *v > 0.0).collect();
    if nonzero.is_empty() {
        1.0
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    }
}

/// Ground-truth pixels of one block for the selected rows.
pub fn block_targets(data: &Dataset, partition: &BlockPartition, block: usize, rows: &[usize]) -> DMatrix<f64> {
    let range = partition.range(block);
    DMatrix::from_fn(rows.len(), range.len(), |r, c| data.y[(rows[r], range.start + c)])
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub block: usize,
    pub circuits: u64,
    pub shots: u64,
    pub loss_plus: f64,
    pub loss_minus: f64,
    pub bandwidth: f64,
    pub theta_hash: String,
    pub wall_ms: f64,
}

pub fn theta_hash(theta: &Theta) -> String {
    let mut hasher = Sha256::new();
    for v in theta.as_slice() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Everything an SPSA step reads.
pub struct TrainContext<'a> {
    pub model: &'a Model,
    pub config: &'a TrainConfig,
    pub data: &'a Dataset,
    pub cache: &'a SketchCache,
    pub seed: u64,
}

/// Loss inputs shared by the two perturbed evaluations of a step.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub block: usize,
    pub rows: Vec<usize>,
    pub targets: DMatrix<f64>,
    pub bandwidth: f64,
    /// Seed of the per-sample shot streams.
    pub shot_seed: u64,
}

impl TrainContext<'_> {
    pub fn loss_batch(&self, block: usize, rows: Vec<usize>, shot_seed: u64) -> LossBatch {
        let targets = block_targets(self.data, &self.model.partition, block, &rows);
        let bandwidth = match self.config.bandwidth {
            BandwidthMode::Median => median_bandwidth(&targets),
            BandwidthMode::Fixed(h) => h,
        };
        LossBatch {
            block,
            rows,
            targets,
            bandwidth,
            shot_seed,
        }
    }

    /// Feature matrix of the batch at `theta`; sample `k` of the batch always
    /// uses shot stream `k`.
    pub fn batch_features(&self, batch: &LossBatch, theta: &Theta, counter: &ExecutionCounter) -> Result<DMatrix<f64>> {
        let readout = self.config.readout();
        let rows: Vec<Vec<f64>> = batch
            .rows
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut rng = stream_rng(batch.shot_seed, k as u64);
                self.model
                    .features(self.cache.get(batch.block, i), theta, readout, &mut rng, counter)
            })
            .collect::<Result<_>>()?;
        let p = self.model.feature_dim();
        Ok(DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]))
    }

    /// Minibatch ridge fit followed by MMD² against the targets.
    pub fn batch_loss(&self, batch: &LossBatch, theta: &Theta, counter: &ExecutionCounter) -> Result<f64> {
        let f = self.batch_features(batch, theta, counter)?;
        let w = fit_ridge(&f, &batch.targets, self.config.ridge_alpha)?;
        mmd2(&batch.targets, &predict(&f, &w)?, batch.bandwidth)
    }

    fn draw_batch(&self, t: usize) -> LossBatch {
        let mut rng = stream_rng(derive_seed(self.seed, &[tag::SPSA_BLOCK]), t as u64);
        let block = rng.random_range(0..self.model.blocks());
        let size = self.config.batch.min(self.data.n());
        let rows = sample_indices(&mut rng, self.data.n(), size).into_vec();
        self.loss_batch(block, rows, derive_seed(self.seed, &[tag::SPSA_SHOTS, t as u64]))
    }
}

/// One SPSA update with common random numbers for the `+-` evaluations.
pub fn spsa_step(ctx: &TrainContext, theta: &Theta, t: usize) -> Result<(Theta, StepRecord)> {
    let started = Instant::now();
    let batch = ctx.draw_batch(t);
    let p = theta.len();
    let mut delta_rng = stream_rng(derive_seed(ctx.seed, &[tag::SPSA_DELTA]), t as u64);
    let delta: Vec<f64> = (0..p)
        .map(|_| if delta_rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let (a_t, c_t) = (ctx.config.gain_a(t), ctx.config.gain_c(t));
    let shift = |sign: f64| Theta(theta.0.iter().zip(&delta).map(|(v, dl)| v + sign * c_t * dl).collect());

    let counter = ExecutionCounter::new();
    let loss_plus = ctx.batch_loss(&batch, &shift(1.0), &counter)?;
    let loss_minus = ctx.batch_loss(&batch, &shift(-1.0), &counter)?;

    let scale = if c_t > MIN_PERTURBATION {
        (loss_plus - loss_minus) / (2.0 * c_t)
    } else {
        0.0
    };
    let next = Theta(theta.0.iter().zip(&delta).map(|(v, dl)| v - a_t * scale * dl).collect());

    if ctx.model.uses_circuit() {
        let expected = step_circuit_count(batch.rows.len(), MEASUREMENT_GROUPS);
        if counter.circuits() != expected {
            return Err(QfanError::Invariant(format!(
                "step {t} executed {} circuits, expected {expected}",
                counter.circuits()
            )));
        }
    }
    let record = StepRecord {
        step: t,
        block: batch.block,
        circuits: counter.circuits(),
        shots: counter.shots(),
        loss_plus,
        loss_minus,
        bandwidth: batch.bandwidth,
        theta_hash: theta_hash(&next),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((next, record))
}

/// Seeded initial parameters, uniform in `(-0.1, 0.1)`.
pub fn initial_theta(model: &Model, seed: u64) -> Theta {
    let mut rng = stream_rng(derive_seed(seed, &[tag::THETA_INIT]), 0);
    Theta(
        (0..model.spec.param_count())
            .map(|_| rng.random_range(-0.1..0.1))
            .collect(),
    )
}

/// Diagnostic loss: mean over blocks of the minibatch-ridge MMD² on a fixed
/// evaluation subset with fixed shot streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub mean: f64,
    pub per_block: Vec<f64>,
    /// 95% percentile bootstrap half-width of `mean`.
    pub ci_half_width: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Kernel matrices of a paired (truth, prediction) sample, so bootstrap
/// resamples of the rows cost only lookups.
struct PairKernels {
    xx: DMatrix<f64>,
    yy: DMatrix<f64>,
    xy: DMatrix<f64>,
}

impl PairKernels {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidth: f64) -> Self {
        let inv = 1.0 / (2.0 * bandwidth * bandwidth);
        let gram = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (-sq_dist(a, i, b, j) * inv).exp())
        };
        Self {
            xx: gram(x, x),
            yy: gram(y, y),
            xy: gram(x, y),
        }
    }

    fn resampled_mmd2(&self, idx: &[usize]) -> f64 {
        let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
        for &i in idx {
            for &j in idx {
                xx += self.xx[(i, j)];
                yy += self.yy[(i, j)];
                xy += self.xy[(i, j)];
            }
        }
        ((xx + yy - 2.0 * xy) / (idx.len() * idx.len()) as f64).max(0.0)
    }
}

pub fn evaluation_loss(ctx: &TrainContext, theta: &Theta, bootstrap: usize) -> Result<LossSummary> {
    let size = ctx.config.batch.min(ctx.data.n());
    let mut rng = stream_rng(derive_seed(ctx.seed, &[tag::EVAL]), 0);
    let rows = sample_indices(&mut rng, ctx.data.n(), size).into_vec();
    let counter = ExecutionCounter::new();
    let mut per_block = Vec::with_capacity(ctx.model.blocks());
    let mut kernels = Vec::with_capacity(ctx.model.blocks());
    for block in 0..ctx.model.blocks() {
        let batch = ctx.loss_batch(
            block,
            rows.clone(),
            derive_seed(ctx.seed, &[tag::EVAL, 1 + block as u64]),
        );
        let f = ctx.batch_features(&batch, theta, &counter)?;
        let w = fit_ridge(&f, &batch.targets, ctx.config.ridge_alpha)?;
        let pred = predict(&f, &w)?;
        per_block.push(mmd2(&batch.targets, &pred, batch.bandwidth)?);
        kernels.push(PairKernels::new(&batch.targets, &pred, batch.bandwidth));
    }
    let mean = per_block.iter().sum::<f64>() / per_block.len() as f64;
    let ci_half_width = if bootstrap == 0 {
        0.0
    } else {
        let boot_seed = derive_seed(ctx.seed, &[tag::EVAL, 0xB007]);
        let mut stats: Vec<f64> = (0..bootstrap)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(boot_seed, r as u64);
                let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..size)).collect();
                kernels.iter().map(|k| k.resampled_mmd2(&idx)).sum::<f64>() / kernels.len() as f64
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        let q = |p: f64| stats[((p * (bootstrap - 1) as f64).round() as usize).min(bootstrap - 1)];
        0.5 * (q(0.975) - q(0.025))
    };
    Ok(LossSummary {
        mean,
        per_block,
        ci_half_width,
    })
}

/// Frozen-parameter decoders and residual model for every block.
#[derive(Debug, Clone)]
pub struct BlockFits {
    pub decoders: Vec<RidgeWeights>,
    pub banks: Vec<ClusterBank>,
    pub gates: Vec<GateModel>,
    pub circuits: u64,
}

/// Refit each block's ridge decoder on the full training set at `theta`,
/// then fit the residual bank and gate on the frozen-parameter residuals.
pub fn fit_blocks(ctx: &TrainContext, theta: &Theta) -> Result<BlockFits> {
    let counter = ExecutionCounter::new();
    let all: Vec<usize> = (0..ctx.data.n()).collect();
    let mut fits = BlockFits {
        decoders: Vec::new(),
        banks: Vec::new(),
        gates: Vec::new(),
        circuits: 0,
    };
    for block in 0..ctx.model.blocks() {
        let batch = LossBatch {
            block,
            targets: block_targets(ctx.data, &ctx.model.partition, block, &all),
            rows: all.clone(),
            bandwidth: f64::NAN,
            shot_seed: derive_seed(ctx.seed, &[tag::REFIT_SHOTS, block as u64]),
        };
        let f = ctx.batch_features(&batch, theta, &counter)?;
        let w = fit_ridge(&f, &batch.targets, ctx.config.ridge_alpha)?;
        let residuals = &batch.targets - predict(&f, &w)?;
        let clusters = ctx.config.clusters;
        let km = fit_residual_bank(
            &residuals,
            clusters,
            derive_seed(ctx.seed, &[tag::KMEANS, block as u64]),
            ctx.config.kmeans_iters,
        )?;
        let gate = fit_gate(
            &ctx.cache.block_matrix(block),
            &km.labels,
            clusters,
            ctx.config.gate_epochs,
            ctx.config.gate_step,
        )?;
        fits.decoders.push(RidgeWeights {
            w,
            alpha: ctx.config.ridge_alpha,
            block,
        });
        fits.banks.push(km.bank);
        fits.gates.push(gate.gate);
    }
    fits.circuits = counter.circuits();
    Ok(fits)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Theta,
    pub initial_theta: Theta,
    pub history: Vec<StepRecord>,
    pub fits: BlockFits,
    pub initial_loss: LossSummary,
    pub final_loss: LossSummary,
}

impl TrainOutcome {
    pub fn total_circuits(&self) -> u64 {
        self.history.iter().map(|r| r.circuits).sum()
    }
}

/// Full training run: SPSA on the circuit parameters, then the frozen fits.
/// The classical feature stage has no parameters, so it skips SPSA.
pub fn train(model: &Model, config: &TrainConfig, data: &Dataset, seed: u64) -> Result<TrainOutcome> {
    train_with(model, config, data, seed, |_| {})
}

/// `train` with a callback invoked after every step.
pub fn train_with(
    model: &Model,
    config: &TrainConfig,
    data: &Dataset,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.d() != model.d() {
        return Err(QfanError::mismatch("training pixels", model.d(), data.d()));
    }
    if data.n() < 2 {
        return Err(QfanError::InsufficientData(
            "training needs at least two samples".into(),
        ));
    }
    let cache = build_cache(data, &model.conditioner, &model.partition)?;
    let ctx = TrainContext {
        model,
        config,
        data,
        cache: &cache,
        seed,
    };
    let theta0 = initial_theta(model, seed);
    let initial_loss = evaluation_loss(&ctx, &theta0, BOOTSTRAP_RESAMPLES)?;
    let mut theta = theta0.clone();
    let mut history = Vec::with_capacity(config.steps);
    if model.uses_circuit() {
        for t in 0..config.steps {
            let (next, record) = spsa_step(&ctx, &theta, t)?;
            log::debug!(
                "step {t} block {} loss+ {:.6} loss- {:.6}",
                record.block,
                record.loss_plus,
                record.loss_minus
            );
            on_step(&record);
            history.push(record);
            theta = next;
        }
    }
    let final_loss = evaluation_loss(&ctx, &theta, BOOTSTRAP_RESAMPLES)?;
    let fits = fit_blocks(&ctx, &theta)?;
    Ok(TrainOutcome {
        theta,
        initial_theta: theta0,
        history,
        fits,
        initial_loss,
        final_loss,
    })
}

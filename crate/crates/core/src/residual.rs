//! Post-hoc residual sampler: a K-means bank over ridge residuals per block
//! and a softmax gate that picks a cluster from the mixed sketch.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QfanError, Result};
use crate::rng::{derive_seed, stream_rng, tag};

pub const DEFAULT_CLUSTERS: usize = 8;
pub const KMEANS_RESTARTS: usize = 5;
pub const DEFAULT_KMEANS_ITERS: usize = 100;
pub const DEFAULT_GATE_EPOCHS: usize = 500;
pub const DEFAULT_GATE_STEP: f64 = 0.1;

/// Clusters of one block's residual vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBank {
    pub centroids: Vec<Vec<f64>>,
    pub members: Vec<Vec<Vec<f64>>>,
}

/// Output of a K-means fit.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub bank: ClusterBank,
    /// Cluster of each training row.
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration of the kept restart.
    pub objective_history: Vec<f64>,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

impl ClusterBank {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn width(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, mu)| (c, sq_dist(mu, x)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Within-cluster sum of squares of an assignment.
pub fn wcss(rows: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    rows.iter().zip(labels).map(|(x, &l)| sq_dist(x, &centroids[l])).sum()
}

/// Centroids, labels and objective history of one restart.
type Clustering = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>);

/// Seeded Lloyd's algorithm with `KMEANS_RESTARTS` restarts, keeping the best
/// objective. Requires `N >= M` and `M` a power of two.
pub fn fit_residual_bank(residuals: &DMatrix<f64>, clusters: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    if clusters == 0 || !clusters.is_power_of_two() {
        return Err(QfanError::InvalidConfig(format!(
            "cluster count {clusters} must be a power of two"
        )));
    }
    let n = residuals.nrows();
    if n < clusters {
        return Err(QfanError::InsufficientData(format!(
            "{n} residuals cannot fill {clusters} clusters"
        )));
    }
    let rows: Vec<Vec<f64>> = residuals.row_iter().map(|r| r.iter().copied().collect()).collect();
    let base = derive_seed(seed, &[tag::KMEANS]);
    let mut best: Option<Clustering> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = stream_rng(base, restart as u64);
        let mut centroids: Vec<Vec<f64>> = sample_indices(&mut rng, n, clusters)
            .into_iter()
            .map(|i| rows[i].clone())
            .collect();
        let mut labels = vec![0; n];
        let mut history = Vec::new();
        for iter in 0..max_iters.max(1) {
            let mut changed = iter == 0;
            for (i, x) in rows.iter().enumerate() {
                let (c, _) = nearest(&centroids, x);
                if c != labels[i] {
                    labels[i] = c;
                    changed = true;
                }
            }
            let width = residuals.ncols();
            let mut sums = vec![vec![0.0; width]; clusters];
            let mut counts = vec![0usize; clusters];
            for (x, &l) in rows.iter().zip(&labels) {
                counts[l] += 1;
                for (s, v) in sums[l].iter_mut().zip(x) {
                    *s += v;
                }
            }
            for c in 0..clusters {
                // An empty cluster keeps its previous centroid.
                if counts[c] > 0 {
                    centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            history.push(wcss(&rows, &centroids, &labels));
            if !changed {
                break;
            }
        }
        let obj = *history.last().unwrap();
        if best.as_ref().is_none_or(|b| obj < *b.2.last().unwrap()) {
            best = Some((centroids, labels, history));
        }
    }
    let (centroids, labels, objective_history) = best.expect("at least one restart");
    let mut members = vec![Vec::new(); clusters];
    for (x, &l) in rows.iter().zip(&labels) {
        members[l].push(x.clone());
    }
    Ok(KMeansFit {
        bank: ClusterBank { centroids, members },
        labels,
        objective_history,
    })
}

/// Softmax gate from the mixed sketch onto the cluster simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub clusters: usize,
    pub inputs: usize,
    /// Row-major `clusters x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GateModel {
    pub fn zeros(clusters: usize, inputs: usize) -> Self {
        Self {
            clusters,
            inputs,
            weights: vec![0.0; clusters * inputs],
            bias: vec![0.0; clusters],
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs.max(1))
            .take(self.clusters)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Cluster probabilities for one input.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(QfanError::mismatch("gate input", self.inputs, x.len()));
        }
        Ok(softmax(&self.logits(x)))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone)]
pub struct GateFit {
    pub gate: GateModel,
    /// Mean cross-entropy before training and after every epoch.
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on the mean multinomial cross-entropy.
pub fn fit_gate(inputs: &DMatrix<f64>, labels: &[usize], clusters: usize, epochs: usize, step: f64) -> Result<GateFit> {
    let (n, m) = inputs.shape();
    if labels.len() != n {
        return Err(QfanError::mismatch("gate labels", n, labels.len()));
    }
    if n == 0 {
        return Err(QfanError::InsufficientData("gate needs at least one sample".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= clusters) {
        return Err(QfanError::LabelOutOfRange { label: l, clusters });
    }
    let mut weights = DMatrix::<f64>::zeros(clusters, m);
    let mut bias = vec![0.0; clusters];
    let mut history = Vec::with_capacity(epochs + 1);
    let inv_n = 1.0 / n as f64;
    for epoch in 0..=epochs {
        let mut g = inputs * weights.transpose();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let logits: Vec<f64> = (0..clusters).map(|c| g[(i, c)] + bias[c]).collect();
            let p = softmax(&logits);
            loss -= p[l].max(f64::MIN_POSITIVE).ln();
            for c in 0..clusters {
                g[(i, c)] = p[c] - if c == l { 1.0 } else { 0.0 };
            }
        }
        history.push(loss * inv_n);
        if epoch == epochs {
            break;
        }
        weights -= g.tr_mul(inputs) * (step * inv_n);
        for (c, b) in bias.iter_mut().enumerate() {
            *b -= step * g.column(c).sum() * inv_n;
        }
    }
    let gate = GateModel {
        clusters,
        inputs: m,
        weights: weights.transpose().as_slice().to_vec(),
        bias,
    };
    Ok(GateFit {
        gate,
        loss_history: history,
    })
}

/// Draw a cluster from the gate, then a uniformly chosen member residual of
/// that cluster. Always consumes exactly two uniforms so coupled rollouts
/// stay in step; an empty cluster yields its centroid.
pub fn sample_residual<R: Rng + ?Sized>(
    bank: &ClusterBank,
    gate: &GateModel,
    mixed: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if gate.clusters != bank.clusters() {
        return Err(QfanError::mismatch("gate clusters", bank.clusters(), gate.clusters));
    }
    let probs = gate.probabilities(mixed)?;
    let u_cluster: f64 = rng.random();
    let u_member: f64 = rng.random();
    let cluster = pick(&probs, u_cluster);
    let members = &bank.members[cluster];
    if members.is_empty() {
        log::warn!("residual cluster {cluster} is empty; using its centroid");
        return Ok(bank.centroids[cluster].clone());
    }
    let idx = ((u_member * members.len() as f64) as usize).min(members.len() - 1);
    Ok(members[idx].clone())
}

/// Inverse-CDF draw from a probability vector.
pub fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

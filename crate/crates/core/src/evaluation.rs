//! Sample-quality metrics, the shot-noise bound check and the analytic
//! resource calculators.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::BlockPartition;
use crate::decoder::{b_max, b_min};
use crate::error::{QfanError, Result};
use crate::generation::{rollout, ModelBundle};
use crate::quantum::{feature_count, ExecutionCounter, Readout};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::training::{median_bandwidth, mmd2};

/// Default two-qubit gate and readout error rates for the fidelity estimate.
pub const DEFAULT_EPS_CZ: f64 = 5e-3;
pub const DEFAULT_EPS_RO: f64 = 1e-2;

/// Exact 1-D Wasserstein-1 distance between two empirical distributions,
/// the integral of `|F_u - F_v|`.
pub fn wasserstein1_1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(QfanError::EmptySamples);
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Pearson correlation matrix of the columns. Correlations involving a
/// constant column are set to 0 off the diagonal and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrMatrix {
    pub c: DMatrix<f64>,
    pub constant: Vec<bool>,
}

pub fn pearson_corr_matrix(y: &DMatrix<f64>) -> Result<CorrMatrix> {
    let (n, d) = y.shape();
    if n == 0 {
        return Err(QfanError::EmptySamples);
    }
    let centred: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col = y.column(j);
            let mean = col.sum() / n as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centred
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let constant: Vec<bool> = norms.iter().map(|&s| s <= 1e-12 * scale * (n as f64).sqrt()).collect();
    let mut c = DMatrix::identity(d, d);
    for i in 0..d {
        for j in i + 1..d {
            let r = if constant[i] || constant[j] {
                0.0
            } else {
                let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            c[(i, j)] = r;
            c[(j, i)] = r;
        }
    }
    Ok(CorrMatrix { c, constant })
}

/// `||C1 - C2||_F / d`.
pub fn corr_error(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    if c1.shape() != c2.shape() {
        return Err(QfanError::mismatch("correlation shape", c1.nrows(), c2.nrows()));
    }
    Ok((c1 - c2).norm() / c1.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetrics {
    /// W1 between the row-sum distributions.
    pub w1: f64,
    pub truth_mean: f64,
    pub gen_mean: f64,
    /// Mean index of the brightest pixel.
    pub truth_peak: f64,
    pub gen_peak: f64,
}

fn row_sums(y: &DMatrix<f64>) -> Vec<f64> {
    y.row_iter().map(|r| r.sum()).collect()
}

fn mean_peak(y: &DMatrix<f64>) -> f64 {
    let total: usize = y
        .row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0
        })
        .sum();
    total as f64 / y.nrows() as f64
}

pub fn energy_metrics(truth: &DMatrix<f64>, gen: &DMatrix<f64>) -> Result<EnergyMetrics> {
    let (et, eg) = (row_sums(truth), row_sums(gen));
    Ok(EnergyMetrics {
        w1: wasserstein1_1d(&et, &eg)?,
        truth_mean: et.iter().sum::<f64>() / et.len() as f64,
        gen_mean: eg.iter().sum::<f64>() / eg.len() as f64,
        truth_peak: mean_peak(truth),
        gen_peak: mean_peak(gen),
    })
}

/// Per block boundary, `|dC|` on the entry coupling the last pixel of one
/// block to the first pixel of the next.
pub fn boundary_error_profile(
    c_truth: &DMatrix<f64>,
    c_gen: &DMatrix<f64>,
    partition: &BlockPartition,
) -> Result<Vec<f64>> {
    if c_truth.shape() != c_gen.shape() || c_truth.nrows() != partition.d() {
        return Err(QfanError::mismatch(
            "boundary profile size",
            partition.d(),
            c_gen.nrows(),
        ));
    }
    Ok((1..partition.count())
        .map(|beta| {
            let (last, first) = (partition.range(beta - 1).end - 1, partition.range(beta).start);
            let a = (c_truth[(last, first)] - c_gen[(last, first)]).abs();
            let b = (c_truth[(first, last)] - c_gen[(first, last)]).abs();
            a.max(b)
        })
        .collect())
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interquartile range of each column.
pub fn column_iqr(y: &DMatrix<f64>) -> Vec<f64> {
    y.column_iter()
        .map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W1Summary {
    pub per_pixel: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl W1Summary {
    pub fn from_values(per_pixel: Vec<f64>) -> Self {
        let mut sorted = per_pixel.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: per_pixel.iter().sum::<f64>() / per_pixel.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            max: *sorted.last().unwrap_or(&0.0),
            per_pixel,
        }
    }
}

pub fn per_pixel_w1(truth: &DMatrix<f64>, gen: &DMatrix<f64>) -> Result<W1Summary> {
    if truth.ncols() != gen.ncols() {
        return Err(QfanError::mismatch("pixel count", truth.ncols(), gen.ncols()));
    }
    let values = (0..truth.ncols())
        .into_par_iter()
        .map(|j| {
            let u: Vec<f64> = truth.column(j).iter().copied().collect();
            let v: Vec<f64> = gen.column(j).iter().copied().collect();
            wasserstein1_1d(&u, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(W1Summary::from_values(values))
}

/// Truth-vs-generated comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_truth: usize,
    pub n_gen: usize,
    pub d: usize,
    pub w1: W1Summary,
    /// Mean truth IQR over pixels, the scale for relative W1.
    pub iqr_scale: f64,
    pub corr_truth: CorrMatrix,
    pub corr_gen: CorrMatrix,
    pub corr_error: f64,
    pub energy: EnergyMetrics,
    /// MMD² between full images, median-heuristic bandwidth on the truth.
    pub mmd2: f64,
    pub boundary_profile: Vec<f64>,
    /// Truth-correlation entries above 0.3 in magnitude whose sign the
    /// generated set reproduces, out of how many.
    pub sign_matches: usize,
    pub sign_checked: usize,
}

/// Rows used for the full-image MMD² (the statistic is quadratic in size).
pub const MMD_ROWS: usize = 1000;

pub fn evaluate(truth: &DMatrix<f64>, gen: &DMatrix<f64>, partition: &BlockPartition) -> Result<MetricsReport> {
    if truth.nrows() == 0 || gen.nrows() == 0 {
        return Err(QfanError::EmptySamples);
    }
    let w1 = per_pixel_w1(truth, gen)?;
    let iqr = column_iqr(truth);
    let corr_truth = pearson_corr_matrix(truth)?;
    let corr_gen = pearson_corr_matrix(gen)?;
    let err = corr_error(&corr_truth.c, &corr_gen.c)?;
    let boundary_profile = boundary_error_profile(&corr_truth.c, &corr_gen.c, partition)?;
    let head = |y: &DMatrix<f64>| y.rows(0, y.nrows().min(MMD_ROWS)).into_owned();
    let (ht, hg) = (head(truth), head(gen));
    let mmd = mmd2(&ht, &hg, median_bandwidth(&ht))?;
    let d = truth.ncols();
    let (mut sign_matches, mut sign_checked) = (0, 0);
    for i in 0..d {
        for j in i + 1..d {
            let r = corr_truth.c[(i, j)];
            if r.abs() > 0.3 {
                sign_checked += 1;
                if r.signum() == corr_gen.c[(i, j)].signum() && corr_gen.c[(i, j)] != 0.0 {
                    sign_matches += 1;
                }
            }
        }
    }
    Ok(MetricsReport {
        n_truth: truth.nrows(),
        n_gen: gen.nrows(),
        d,
        iqr_scale: iqr.iter().sum::<f64>() / d as f64,
        w1,
        energy: energy_metrics(truth, gen)?,
        corr_error: err,
        corr_truth,
        corr_gen,
        mmd2: mmd,
        boundary_profile,
        sign_matches,
        sign_checked,
    })
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Histogram of each pixel on shared bins, one row per (pixel, bin).
pub fn marginals_csv(truth: &DMatrix<f64>, gen: &DMatrix<f64>, bins: usize) -> String {
    let mut out = String::from("pixel,bin_lo,bin_hi,truth_density,gen_density\n");
    for j in 0..truth.ncols() {
        let lo = truth.column(j).min().min(gen.column(j).min());
        let hi = truth.column(j).max().max(gen.column(j).max());
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let hist = |col: Vec<f64>| {
            let mut h = vec![0.0; bins];
            for v in &col {
                h[(((v - lo) / width) as usize).min(bins - 1)] += 1.0;
            }
            h.iter().map(|c| c / (col.len() as f64 * width)).collect::<Vec<_>>()
        };
        let ht = hist(truth.column(j).iter().copied().collect());
        let hg = hist(gen.column(j).iter().copied().collect());
        for k in 0..bins {
            let a = lo + k as f64 * width;
            out.push_str(&format!("{j},{a:?},{:?},{:?},{:?}\n", a + width, ht[k], hg[k]));
        }
    }
    out
}

impl MetricsReport {
    /// CSV files for external plotting, as `(file name, contents)`.
    pub fn csv_artifacts(&self, truth: &DMatrix<f64>, gen: &DMatrix<f64>) -> Vec<(String, String)> {
        let sums = |y: &DMatrix<f64>| row_sums(y).iter().map(|v| format!("{v:?}")).collect::<Vec<_>>();
        let (et, eg) = (sums(truth), sums(gen));
        let mut energy = String::from("sample,truth_energy,gen_energy\n");
        for i in 0..et.len().max(eg.len()) {
            let cell = |v: &Vec<String>| v.get(i).cloned().unwrap_or_default();
            energy.push_str(&format!("{i},{},{}\n", cell(&et), cell(&eg)));
        }
        vec![
            ("marginals.csv".into(), marginals_csv(truth, gen, 30)),
            ("corr_truth.csv".into(), matrix_csv(&self.corr_truth.c)),
            ("corr_gen.csv".into(), matrix_csv(&self.corr_gen.c)),
            (
                "corr_diff.csv".into(),
                matrix_csv(&(&self.corr_gen.c - &self.corr_truth.c)),
            ),
            ("energy.csv".into(), energy),
        ]
    }
}

/// Shot-noise sketch deviation against its bound at one shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub shots: usize,
    /// Max over blocks and sketch coordinates of the mean `|ds_j|`.
    pub empirical: f64,
    pub bound: f64,
    pub gain: f64,
    pub pairs: usize,
}

impl NoiseRow {
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.empirical / self.bound
        } else {
            0.0
        }
    }
}

/// `d * gain * sqrt(p_f / shots)`.
pub fn noise_bound(d: usize, gain: f64, p_f: usize, shots: usize) -> f64 {
    d as f64 * gain * (p_f as f64 / shots as f64).sqrt()
}

/// Couple finite-shot rollouts with exact-expectation rollouts that share
/// residual draws, then compare their sketch states block by block.
pub fn noise_accumulation_check(
    bundle: &ModelBundle,
    shots: &[usize],
    pairs: usize,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    let model = &bundle.model;
    let gain = bundle.gain();
    let counter = ExecutionCounter::new();
    let residual_seed = derive_seed(seed, &[tag::EVAL, 0x5E]);
    let exact: Vec<_> = (0..pairs)
        .into_par_iter()
        .map(|r| {
            let mut res = stream_rng(residual_seed, r as u64);
            let mut unused = stream_rng(0, 0);
            rollout(bundle, Readout::Exact, &mut unused, Some(&mut res), &counter)
        })
        .collect::<Result<_>>()?;
    shots
        .iter()
        .map(|&n_s| {
            if n_s == 0 {
                return Err(QfanError::InvalidShots);
            }
            let shot_seed = derive_seed(seed, &[tag::EVAL, 0x5F, n_s as u64]);
            let noisy: Vec<_> = (0..pairs)
                .into_par_iter()
                .map(|r| {
                    let mut res = stream_rng(residual_seed, r as u64);
                    let mut shot = stream_rng(shot_seed, r as u64);
                    rollout(bundle, Readout::Shots(n_s), &mut shot, Some(&mut res), &counter)
                })
                .collect::<Result<_>>()?;
            let mut empirical: f64 = 0.0;
            for beta in 0..model.blocks().saturating_sub(1) {
                for j in 0..model.conditioner.m() {
                    let mean = exact
                        .iter()
                        .zip(&noisy)
                        .map(|(a, b)| (a.sketches[beta][j] - b.sketches[beta][j]).abs())
                        .sum::<f64>()
                        / pairs.max(1) as f64;
                    empirical = empirical.max(mean);
                }
            }
            Ok(NoiseRow {
                shots: n_s,
                empirical,
                bound: noise_bound(model.d(), gain, model.feature_dim(), n_s),
                gain,
                pairs,
            })
        })
        .collect()
}

/// Sufficient shots for a sketch-noise tolerance:
/// `ceil(d² gain² p_f / (tau² s_inf²))`.
pub fn shot_requirement(d: usize, gain: f64, p_f: usize, tau: f64, s_inf: f64) -> Result<u64> {
    if !(tau > 0.0) || !(s_inf > 0.0) {
        return Err(QfanError::InvalidConfig("tau and s_inf must be positive".into()));
    }
    let v = (d as f64).powi(2) * gain * gain * p_f as f64 / (tau * tau * s_inf * s_inf);
    Ok((v - 1e-9).ceil().max(0.0) as u64)
}

/// Back-of-the-envelope device fidelity `(1-eps_cz)^(2n) (1-eps_ro)^n`.
pub fn fidelity_estimate(n_qubits: usize, eps_cz: f64, eps_ro: f64) -> f64 {
    (1.0 - eps_cz).powi(2 * n_qubits as i32) * (1.0 - eps_ro).powi(n_qubits as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d: usize,
    pub n_qubits: usize,
    pub p_f: usize,
    pub b_max: usize,
    pub b_min: usize,
    pub sketch_dim: usize,
    /// `B_min * N * m` entries of 8 bytes.
    pub cache_bytes: u64,
    pub fidelity: f64,
}

/// One row per `(d, n_q, m)` triple.
pub fn scaling_table(rows: &[(usize, usize, usize)], rho_min: f64, n_samples: usize) -> Vec<ScalingRow> {
    rows.iter()
        .map(|&(d, n, m)| {
            let blocks = b_min(d, n, rho_min);
            ScalingRow {
                d,
                n_qubits: n,
                p_f: feature_count(n),
                b_max: b_max(n, rho_min),
                b_min: blocks,
                sketch_dim: m,
                cache_bytes: (blocks * n_samples * m * 8) as u64,
                fidelity: fidelity_estimate(n, DEFAULT_EPS_CZ, DEFAULT_EPS_RO),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// W1 as the integral of the difference of quantile functions, with
    /// breakpoints at every `k/n` and `l/m`.
    fn quantile_oracle(u: &[f64], v: &[f64]) -> f64 {
        let mut a = u.to_vec();
        let mut b = v.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (n, m) = (a.len(), b.len());
        let mut cuts: Vec<f64> = (0..=n)
            .map(|k| k as f64 / n as f64)
            .chain((0..=m).map(|l| l as f64 / m as f64))
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let qa = a[((mid * n as f64) as usize).min(n - 1)];
                let qb = b[((mid * m as f64) as usize).min(m - 1)];
                (qa - qb).abs() * (w[1] - w[0])
            })
            .sum()
    }

    /// Equal sizes: the transport optimum is a permutation, so brute force.
    fn permutation_oracle(u: &[f64], v: &[f64]) -> f64 {
        fn rec(u: &[f64], v: &mut Vec<f64>, k: usize, acc: f64, best: &mut f64) {
            if k == u.len() {
                *best = best.min(acc);
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                rec(u, v, k + 1, acc + (u[k] - v[k]).abs(), best);
                v.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        rec(u, &mut v.to_vec(), 0, 0.0, &mut best);
        best / u.len() as f64
    }

    #[test]
    fn w1_basic_cases() {
        assert_eq!(wasserstein1_1d(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((wasserstein1_1d(&[0.0], &[1.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(wasserstein1_1d(&[], &[1.0]), Err(QfanError::EmptySamples)));
    }

    #[test]
    fn w1_matches_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u: Vec<f64> = (0..7).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..2.0)).collect();
            assert!((wasserstein1_1d(&u, &v).unwrap() - permutation_oracle(&u, &v)).abs() < 1e-12);
        }
        let u: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..2.0)).collect();
        let (su, sv) = (&u[..50], &v[..50]);
        assert!((wasserstein1_1d(su, sv).unwrap() - quantile_oracle(su, sv)).abs() < 1e-9);
        assert!((wasserstein1_1d(&u, &v).unwrap() - quantile_oracle(&u, &v)).abs() < 1e-9);
        assert!((wasserstein1_1d(&u[..300], &v[..170]).unwrap() - quantile_oracle(&u[..300], &v[..170])).abs() < 1e-9);
    }

    #[test]
    fn corr_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = DMatrix::from_fn(100_000, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = pearson_corr_matrix(&y).unwrap();
        for i in 0..4 {
            assert_eq!(c.c[(i, i)], 1.0);
            for j in 0..4 {
                if i != j {
                    assert!(c.c[(i, j)].abs() < 0.02);
                }
            }
        }
        assert_eq!(corr_error(&c.c, &c.c).unwrap(), 0.0);

        let mut dup = DMatrix::from_fn(50, 3, |_, _| rng.random_range(0.0..1.0));
        for i in 0..50 {
            dup[(i, 2)] = dup[(i, 0)];
            dup[(i, 1)] = 0.5;
        }
        let c = pearson_corr_matrix(&dup).unwrap();
        assert!((c.c[(0, 2)] - 1.0).abs() < 1e-12);
        assert_eq!(c.constant, vec![false, true, false]);
        assert_eq!(c.c[(0, 1)], 0.0);
        assert_eq!(c.c[(1, 1)], 1.0);
    }

    #[test]
    fn energy_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DMatrix::from_fn(40, 12, |_, _| rng.random_range(0.0..1.0));
        assert_eq!(energy_metrics(&y, &y).unwrap().w1, 0.0);
        let point = DMatrix::from_element(10, 12, 0.2);
        let delta = 0.01;
        let shifted = point.add_scalar(delta);
        assert!((energy_metrics(&point, &shifted).unwrap().w1 - 12.0 * delta).abs() < 1e-12);
    }

    #[test]
    fn boundary_cases() {
        let p = BlockPartition::uniform(12, 6).unwrap();
        let c = DMatrix::identity(12, 12);
        assert_eq!(boundary_error_profile(&c, &c, &p).unwrap(), vec![0.0]);
        let mut g = c.clone();
        g[(5, 6)] = 0.3;
        g[(6, 5)] = 0.3;
        g[(4, 7)] = 0.9;
        assert_eq!(boundary_error_profile(&c, &g, &p).unwrap(), vec![0.3]);
        let p5 = BlockPartition::uniform(25, 5).unwrap();
        assert_eq!(
            boundary_error_profile(&DMatrix::identity(25, 25), &DMatrix::identity(25, 25), &p5)
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn shot_requirement_cases() {
        assert_eq!(shot_requirement(12, 1.0, 12, 10.0, 1.0).unwrap(), 18);
        let base = shot_requirement(100, 0.7, 30, 0.5, 2.0).unwrap() as f64;
        let doubled = shot_requirement(200, 0.7, 30, 0.5, 2.0).unwrap() as f64;
        assert!((doubled / base - 4.0).abs() < 1e-3);
        let mut last = u64::MAX;
        for tau in [0.1, 1.0, 10.0] {
            let v = shot_requirement(12, 1.0, 12, tau, 1.0).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(shot_requirement(12, 1.0, 12, 0.0, 1.0).is_err());
    }

    #[test]
    fn fidelity_reference_values() {
        let round2 = |v: f64| (v * 100.0).round() / 100.0;
        for (n, f) in [(3, 0.94), (5, 0.90), (6, 0.89), (8, 0.85), (10, 0.82)] {
            assert_eq!(round2(fidelity_estimate(n, 5e-3, 1e-2)), f);
        }
        assert_eq!(fidelity_estimate(7, 0.0, 0.0), 1.0);
        assert!(fidelity_estimate(3, 0.01, 0.01) < fidelity_estimate(3, 0.005, 0.01));
        assert!(fidelity_estimate(4, 5e-3, 1e-2) < fidelity_estimate(3, 5e-3, 1e-2));
    }

    #[test]
    fn scaling_reference_rows() {
        let rows = scaling_table(
            &[
                (12, 3, 32),
                (368, 5, 64),
                (533, 6, 80),
                (6480, 8, 256),
                (40500, 10, 512),
            ],
            1.5,
            6000,
        );
        let got: Vec<(usize, usize, usize)> = rows.iter().map(|r| (r.p_f, r.b_max, r.b_min)).collect();
        assert_eq!(
            got,
            vec![(12, 8, 2), (30, 20, 19), (42, 28, 20), (72, 48, 135), (110, 73, 553)]
        );
        assert_eq!(rows[0].cache_bytes, 2 * 6000 * 32 * 8);
    }

    #[test]
    fn evaluate_identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = DMatrix::from_fn(200, 12, |_, _| rng.random_range(0.0..1.0));
        let r = evaluate(&y, &y, &BlockPartition::uniform(12, 6).unwrap()).unwrap();
        assert_eq!(r.w1.max, 0.0);
        assert_eq!(r.corr_error, 0.0);
        assert_eq!(r.energy.w1, 0.0);
        assert_eq!(r.mmd2, 0.0);
        assert_eq!(r.boundary_profile, vec![0.0]);
        assert_eq!(r.sign_matches, r.sign_checked);
        assert_eq!(r.csv_artifacts(&y, &y).len(), 5);
    }

    proptest! {
        #[test]
        fn w1_axioms(seed in any::<u64>(), n in 1usize..30, m in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = wasserstein1_1d(&u, &v).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - wasserstein1_1d(&v, &u).unwrap()).abs() < 1e-12);
            prop_assert_eq!(wasserstein1_1d(&u, &u).unwrap(), 0.0);
        }

        #[test]
        fn corr_symmetric_unit_diagonal(seed in any::<u64>(), n in 3usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = DMatrix::from_fn(n, 5, |_, _| rng.random_range(0.0..1.0));
            let c = pearson_corr_matrix(&y).unwrap().c;
            for i in 0..5 {
                prop_assert_eq!(c[(i, i)], 1.0);
                for j in 0..5 {
                    prop_assert_eq!(c[(i, j)], c[(j, i)]);
                    prop_assert!(c[(i, j)].abs() <= 1.0);
                }
            }
        }
    }
}

//! Synthetic calorimeter-style showers and dataset file I/O.
//!
//! Each synthetic row draws a skewed total energy, spreads it along a smooth
//! longitudinal profile peaking mid-image, and perturbs pixels with log-scale
//! noise that is strongly shared within each image half. Renormalizing the
//! perturbed row toward the drawn energy (the budget coupling) makes the two
//! halves compete for energy, which produces positive correlations inside a
//! half and anti-correlations across halves.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QfanError, Result};
use crate::rng::{derive_seed, stream_rng, tag};

const MAGIC: &str = "QFANDS";
const FORMAT_VERSION: u32 = 1;

/// Generator parameters. Energies are in raw units and divided by
/// `reference` at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShowerRecipe {
    pub energy_mean: f64,
    pub energy_spread: f64,
    /// Skewness of the total-energy law (shifted gamma).
    pub energy_skew: f64,
    /// Profile peak as a fraction of the image length.
    pub profile_center: f64,
    /// Profile width as a fraction of the image length.
    pub profile_width: f64,
    /// Log-scale per-pixel fluctuation.
    pub fluctuation: f64,
    /// Share of the fluctuation variance common to a half, in `[0, 1]`.
    pub half_coupling: f64,
    /// How strongly rows are renormalized to the drawn energy, in `[0, 1]`.
    pub budget_coupling: f64,
    pub reference: f64,
}

impl Default for ShowerRecipe {
    fn default() -> Self {
        Self {
            energy_mean: 49.0,
            energy_spread: 6.0,
            energy_skew: 0.8,
            profile_center: 0.5,
            profile_width: 0.25,
            fluctuation: 0.5,
            half_coupling: 0.9,
            budget_coupling: 1.0,
            reference: 20.0,
        }
    }
}

impl ShowerRecipe {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("energy_mean", self.energy_mean),
            ("energy_spread", self.energy_spread),
            ("energy_skew", self.energy_skew),
            ("profile_width", self.profile_width),
            ("reference", self.reference),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QfanError::InvalidConfig(format!("{name} must be > 0 (got {v})")));
            }
        }
        if !(self.fluctuation >= 0.0 && self.fluctuation.is_finite()) {
            return Err(QfanError::InvalidConfig(format!(
                "fluctuation must be >= 0 (got {})",
                self.fluctuation
            )));
        }
        for (name, v) in [
            ("half_coupling", self.half_coupling),
            ("budget_coupling", self.budget_coupling),
            ("profile_center", self.profile_center),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QfanError::InvalidConfig(format!("{name} must lie in [0, 1] (got {v})")));
            }
        }
        Ok(())
    }

    /// Normalized deterministic longitudinal profile over `d` pixels.
    pub fn profile(&self, d: usize) -> Vec<f64> {
        let span = (d.max(2) - 1) as f64;
        let centre = self.profile_center * span;
        let width = self.profile_width * d as f64;
        let w: Vec<f64> = (0..d)
            .map(|j| (-(j as f64 - centre).powi(2) / (2.0 * width * width)).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    fn sample_row<R: Rng>(&self, profile: &[f64], rng: &mut R) -> Vec<f64> {
        let d = profile.len();
        let shape = 4.0 / (self.energy_skew * self.energy_skew);
        let g: f64 = rng.sample(Gamma::new(shape, 1.0).expect("validated shape"));
        let energy = (self.energy_mean + self.energy_spread * (g - shape) / shape.sqrt()).max(1e-3 * self.energy_mean);
        let halves: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let (shared, own) = (self.half_coupling.sqrt(), (1.0 - self.half_coupling).sqrt());
        let f = self.fluctuation;
        let m: Vec<f64> = profile
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let eps: f64 = rng.sample(StandardNormal);
                let eta = shared * halves[usize::from(j >= d / 2)] + own * eps;
                w * (f * eta - 0.5 * f * f).exp()
            })
            .collect();
        let total: f64 = m.iter().sum();
        let norm = self.budget_coupling * total + (1.0 - self.budget_coupling);
        m.into_iter()
            .map(|v| (energy * v / norm / self.reference).max(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub seed: Option<u64>,
    pub recipe: Option<ShowerRecipe>,
}

/// `N x d` matrix of nonnegative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn from_matrix(y: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = y.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(QfanError::Format(format!("intensity {v} is negative or not finite")));
        }
        let meta = DatasetMeta {
            n: y.nrows(),
            d: y.ncols(),
            seed: None,
            recipe: None,
        };
        Ok(Self { y, meta })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    pub fn rows(&self, idx: &[usize]) -> Self {
        let y = DMatrix::from_fn(idx.len(), self.d(), |r, c| self.y[(idx[r], c)]);
        Self {
            meta: DatasetMeta {
                n: idx.len(),
                d: self.d(),
                ..self.meta.clone()
            },
            y,
        }
    }
}

/// Draw `n` synthetic showers of `d` pixels.
pub fn synth_showers(recipe: &ShowerRecipe, d: usize, n: usize, seed: u64) -> Result<Dataset> {
    recipe.validate()?;
    if d == 0 {
        return Err(QfanError::InvalidDimension("d must be >= 1".into()));
    }
    let profile = recipe.profile(d);
    let base = derive_seed(seed, &[tag::DATA]);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| recipe.sample_row(&profile, &mut stream_rng(base, i as u64)))
        .collect();
    let y = DMatrix::from_fn(n, d, |r, c| rows[r][c]);
    Ok(Dataset {
        y,
        meta: DatasetMeta {
            n,
            d,
            seed: Some(seed),
            recipe: Some(recipe.clone()),
        },
    })
}

/// Shuffle rows with `seed`, then take `n_train` then `n_test` disjoint rows.
pub fn split(ds: &Dataset, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train + n_test > ds.n() {
        return Err(QfanError::InsufficientData(format!(
            "split {n_train}+{n_test} exceeds {} rows",
            ds.n()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.shuffle(&mut stream_rng(derive_seed(seed, &[tag::SPLIT]), 0));
    Ok((ds.rows(&idx[..n_train]), ds.rows(&idx[n_train..n_train + n_test])))
}

fn payload_bytes(y: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(y.len() * 8);
    for r in 0..y.nrows() {
        for c in 0..y.ncols() {
            out.extend_from_slice(&y[(r, c)].to_le_bytes());
        }
    }
    out
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Binary form: one text header line
/// `QFANDS <version> <N> <d> f64le <checksum>` followed by row-major
/// little-endian `f64` values.
pub fn encode_binary(ds: &Dataset) -> Vec<u8> {
    let payload = payload_bytes(&ds.y);
    let mut out = format!(
        "{MAGIC} {FORMAT_VERSION} {} {} f64le {:016x}\n",
        ds.n(),
        ds.d(),
        checksum(&payload)
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Dataset> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| QfanError::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| QfanError::Format("header is not UTF-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != MAGIC {
        return Err(QfanError::Format(format!("unrecognized header `{header}`")));
    }
    let version: u32 = fields[1].parse().map_err(|_| QfanError::Format("bad version".into()))?;
    if version != FORMAT_VERSION {
        return Err(QfanError::Format(format!("unsupported version {version}")));
    }
    let n: usize = fields[2]
        .parse()
        .map_err(|_| QfanError::Format("bad row count".into()))?;
    let d: usize = fields[3]
        .parse()
        .map_err(|_| QfanError::Format("bad column count".into()))?;
    if fields[4] != "f64le" {
        return Err(QfanError::Format(format!("unsupported dtype {}", fields[4])));
    }
    let stored = u64::from_str_radix(fields[5], 16).map_err(|_| QfanError::Format("bad checksum field".into()))?;
    let payload = &bytes[nl + 1..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| QfanError::Format("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(QfanError::Format(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let computed = checksum(payload);
    if computed != stored {
        return Err(QfanError::Checksum { stored, computed });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Dataset::from_matrix(DMatrix::from_row_slice(n, d, &values))
}

/// CSV form, one row per image, shortest round-trip decimal for each value.
pub fn encode_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in 0..ds.n() {
        let line: Vec<String> = (0..ds.d()).map(|c| format!("{:?}", ds.y[(r, c)])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parse an `N x d` CSV. A first line that does not parse as numbers is
/// taken as a header and skipped.
pub fn decode_csv(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(QfanError::Format(format!(
                            "line {}: {} columns, expected {}",
                            lineno + 1,
                            row.len(),
                            first.len()
                        )));
                    }
                }
                rows.push(row);
            }
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(e) => return Err(QfanError::Format(format!("line {}: {e}", lineno + 1))),
        }
    }
    if rows.is_empty() {
        return Err(QfanError::Format("no data rows".into()));
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Dataset::from_matrix(DMatrix::from_row_slice(rows.len(), d, &flat))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_binary(ds))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_csv(ds))?;
    Ok(())
}

/// Load either the binary format or a plain CSV, detected by the magic.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC.as_bytes()) {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| QfanError::Format("file is neither binary dataset nor UTF-8 CSV".into()))?;
        decode_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewness(col: &[f64]) -> f64 {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        m3 / m2.powf(1.5)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn recipe_validation() {
        let r = ShowerRecipe {
            energy_spread: 0.0,
            ..Default::default()
        };
        assert!(synth_showers(&r, 12, 10, 0).is_err());
        let r = ShowerRecipe {
            half_coupling: 1.5,
            ..Default::default()
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn zero_fluctuation_rows_follow_profile() {
        let recipe = ShowerRecipe {
            fluctuation: 0.0,
            ..Default::default()
        };
        let ds = synth_showers(&recipe, 12, 50, 3).unwrap();
        let profile = recipe.profile(12);
        for i in 0..50 {
            let row = ds.row(i);
            let ratio = row[0] / profile[0];
            for j in 0..12 {
                assert!((row[j] / profile[j] - ratio).abs() < 1e-12 * ratio);
            }
        }
    }

    #[test]
    fn default_recipe_structure() {
        let ds = synth_showers(&ShowerRecipe::default(), 12, 10_000, 1).unwrap();
        assert!(ds.y.iter().all(|v| *v >= 0.0 && v.is_finite()));
        let cols: Vec<Vec<f64>> = (0..12).map(|c| ds.y.column(c).iter().copied().collect()).collect();
        for c in &cols {
            assert!(skewness(c) > 0.0);
        }
        let mut cross_min: f64 = 1.0;
        for i in 0..6 {
            for j in 6..12 {
                cross_min = cross_min.min(pearson(&cols[i], &cols[j]));
            }
        }
        assert!(cross_min < -0.3, "cross-half min r = {cross_min}");
        for half in [0..6, 6..12] {
            for i in half.clone() {
                for j in half.clone() {
                    if i < j {
                        let r = pearson(&cols[i], &cols[j]);
                        assert!(r > 0.5, "intra-half r({i},{j}) = {r}");
                    }
                }
            }
        }
        let max = ds.y.max();
        assert!(max < 1.5, "max intensity {max}");
    }

    #[test]
    fn generation_is_seeded() {
        let r = ShowerRecipe::default();
        assert_eq!(
            synth_showers(&r, 12, 100, 5).unwrap(),
            synth_showers(&r, 12, 100, 5).unwrap()
        );
        assert_ne!(
            synth_showers(&r, 12, 100, 5).unwrap().y,
            synth_showers(&r, 12, 100, 6).unwrap().y
        );
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let ds = synth_showers(&ShowerRecipe::default(), 12, 40, 2).unwrap();
        let bytes = encode_binary(&ds);
        let back = decode_binary(&bytes).unwrap();
        assert_eq!(back.y, ds.y);

        assert!(matches!(
            decode_binary(&bytes[..bytes.len() - 3]),
            Err(QfanError::Format(_))
        ));
        assert!(matches!(decode_binary(&bytes[..4]), Err(QfanError::Format(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x01;
        assert!(matches!(decode_binary(&flipped), Err(QfanError::Checksum { .. })));
    }

    #[test]
    fn csv_matches_binary() {
        let ds = synth_showers(&ShowerRecipe::default(), 5, 30, 4).unwrap();
        let from_csv = decode_csv(&encode_csv(&ds)).unwrap();
        let from_bin = decode_binary(&encode_binary(&ds)).unwrap();
        for (a, b) in from_csv.y.iter().zip(from_bin.y.iter()) {
            assert!((a - b).abs() <= 1e-16 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn csv_with_header_and_errors() {
        let ds = decode_csv("p0,p1\n0.5,1\n2,3\n").unwrap();
        assert_eq!(ds.n(), 2);
        assert!(decode_csv("1,2\n3\n").is_err());
        assert!(decode_csv("1,-2\n").is_err());
        assert!(decode_csv("").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_showers(&ShowerRecipe::default(), 12, 20, 8).unwrap();
        let bin = dir.path().join("d.bin");
        let csv = dir.path().join("d.csv");
        save_dataset(&ds, &bin).unwrap();
        save_csv(&ds, &csv).unwrap();
        assert_eq!(load_dataset(&bin).unwrap().y, ds.y);
        assert_eq!(load_dataset(&csv).unwrap().y, ds.y);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let mut ds = synth_showers(&ShowerRecipe::default(), 12, 7000, 0).unwrap();
        // Tag each row with its index so disjointness is checkable.
        for i in 0..ds.n() {
            ds.y[(i, 0)] = i as f64;
        }
        let (train, test) = split(&ds, 6000, 1000, 1).unwrap();
        assert_eq!((train.n(), test.n()), (6000, 1000));
        let mut seen: Vec<usize> = train
            .y
            .column(0)
            .iter()
            .chain(test.y.column(0).iter())
            .map(|v| *v as usize)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 7000);
        let (_, empty) = split(&ds, 10, 0, 1).unwrap();
        assert_eq!(empty.n(), 0);
        assert!(split(&ds, 7000, 1, 1).is_err());
    }
}

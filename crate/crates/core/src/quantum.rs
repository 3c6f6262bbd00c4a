//! Dense statevector simulation of the shared re-uploading circuit and
//! extraction of the Z/X Pauli feature family.
//!
//! Layer `l` on qubit `q` applies `RY(pi a[2(l n + q)])`, `RZ(pi a[2(l n + q) + 1])`,
//! then the trainable `RZ(theta[2(l n + q)])`, `RY(theta[2(l n + q) + 1])`, and
//! finishes with a CZ ring `CZ(0,1), CZ(1,2), ..., CZ(n-1,0)`.
//!
//! Qubit `q` is bit `q` of the basis index.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QfanError, Result};

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 12;

/// Tensor-product settings needed for the Z/X family: all-Z and all-X.
pub const MEASUREMENT_GROUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub layers: usize,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, layers: usize) -> Result<Self> {
        if n_qubits == 0 || layers == 0 {
            return Err(QfanError::InvalidDimension(format!(
                "circuit needs n_q >= 1 and L >= 1 (got {n_qubits}, {layers})"
            )));
        }
        if n_qubits > MAX_QUBITS {
            return Err(QfanError::InvalidDimension(format!(
                "n_q = {n_qubits} exceeds the simulator limit of {MAX_QUBITS}"
            )));
        }
        Ok(Self { n_qubits, layers })
    }

    /// Trainable parameters, `2 L n_q`.
    pub fn param_count(&self) -> usize {
        2 * self.layers * self.n_qubits
    }

    /// Encoding angle slots, also `2 L n_q`.
    pub fn angle_count(&self) -> usize {
        2 * self.layers * self.n_qubits
    }

    pub fn feature_count(&self) -> usize {
        feature_count(self.n_qubits)
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }
}

/// `p_f = n_q^2 + n_q`: single-qubit and pairwise Z and X expectations.
pub fn feature_count(n_qubits: usize) -> usize {
    n_qubits * n_qubits + n_qubits
}

/// Always 2 for the Z/X family, whatever the register size.
pub fn measurement_groups(_spec: &CircuitSpec) -> usize {
    MEASUREMENT_GROUPS
}

/// Shared variational parameters in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn zeros(spec: &CircuitSpec) -> Self {
        Theta(vec![0.0; spec.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Feature vector ordered `[Z_i, Z_iZ_j (i<j), X_i, X_iX_j (i<j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero_state(n_qubits: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { n_qubits, amps }
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(QfanError::InvalidDimension(format!(
                "amplitude count {n} is not a power of two"
            )));
        }
        Ok(Self {
            n_qubits: n.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn apply_single(&mut self, q: usize, g: [[Complex64; 2]; 2]) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = g[0][0] * a0 + g[0][1] * a1;
                self.amps[i | bit] = g[1][0] * a0 + g[1][1] * a1;
            }
        }
    }

    pub fn ry(&mut self, q: usize, angle: f64) {
        let (s, c) = (angle / 2.0).sin_cos();
        let (c, s) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
        self.apply_single(q, [[c, -s], [s, c]]);
    }

    pub fn rz(&mut self, q: usize, angle: f64) {
        let bit = 1usize << q;
        let lo = Complex64::from_polar(1.0, -angle / 2.0);
        let hi = Complex64::from_polar(1.0, angle / 2.0);
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & bit == 0 { lo } else { hi };
        }
    }

    pub fn h(&mut self, q: usize) {
        let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
        self.apply_single(q, [[r, r], [r, -r]]);
    }

    pub fn cz(&mut self, a: usize, b: usize) {
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }

    /// Hadamard on every qubit, rotating the X basis onto the Z basis.
    pub fn to_x_basis(&self) -> Self {
        let mut out = self.clone();
        for q in 0..self.n_qubits {
            out.h(q);
        }
        out
    }
}

/// CZ pairs of the entangling ring. One pair for two qubits, none for one.
pub fn cz_ring(n_qubits: usize) -> Vec<(usize, usize)> {
    match n_qubits {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => (0..n).map(|q| (q, (q + 1) % n)).collect(),
    }
}

/// Run `U(a, theta)` on `|0...0>`.
pub fn build_state(spec: &CircuitSpec, angles: &[f64], theta: &Theta) -> Result<StateVector> {
    if angles.len() != spec.angle_count() {
        return Err(QfanError::mismatch("circuit angles", spec.angle_count(), angles.len()));
    }
    if theta.len() != spec.param_count() {
        return Err(QfanError::mismatch(
            "circuit parameters",
            spec.param_count(),
            theta.len(),
        ));
    }
    let n = spec.n_qubits;
    let ring = cz_ring(n);
    let mut psi = StateVector::zero_state(n);
    for layer in 0..spec.layers {
        for q in 0..n {
            let slot = 2 * (layer * n + q);
            psi.ry(q, PI * angles[slot]);
            psi.rz(q, PI * angles[slot + 1]);
            psi.rz(q, theta.0[slot]);
            psi.ry(q, theta.0[slot + 1]);
        }
        for &(a, b) in &ring {
            psi.cz(a, b);
        }
    }
    Ok(psi)
}

fn check_state(spec: &CircuitSpec, state: &StateVector) -> Result<()> {
    if state.n_qubits != spec.n_qubits {
        return Err(QfanError::mismatch("state qubits", spec.n_qubits, state.n_qubits));
    }
    let dev = (state.norm() - 1.0).abs();
    if dev > 1e-6 {
        return Err(QfanError::UnnormalizedState(dev));
    }
    Ok(())
}

/// Parity expectations `[<P_i>, <P_iP_j> (i<j)]` from a probability vector in
/// the measured basis.
fn parity_expectations(n: usize, probs: &[f64], out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + n + n * (n - 1) / 2, 0.0);
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        accumulate_parities(n, x, p, &mut out[start..]);
    }
}

fn accumulate_parities(n: usize, x: usize, weight: f64, out: &mut [f64]) {
    let sign = |q: usize| if (x >> q) & 1 == 0 { 1.0 } else { -1.0 };
    for (q, o) in out[..n].iter_mut().enumerate() {
        *o += weight * sign(q);
    }
    let mut idx = n;
    for i in 0..n {
        for j in i + 1..n {
            out[idx] += weight * sign(i) * sign(j);
            idx += 1;
        }
    }
}

/// Exact Z/X feature expectations of a normalized state.
pub fn exact_features(spec: &CircuitSpec, state: &StateVector) -> Result<FeatureVector> {
    check_state(spec, state)?;
    let n = spec.n_qubits;
    let mut f = Vec::with_capacity(spec.feature_count());
    parity_expectations(n, &state.probabilities(), &mut f);
    parity_expectations(n, &state.to_x_basis().probabilities(), &mut f);
    Ok(FeatureVector(f))
}

/// Draw `shots` basis indices from a probability vector.
fn sample_indices<R: Rng + ?Sized>(probs: &[f64], shots: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let last = probs.len() - 1;
    (0..shots)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

fn sampled_parities<R: Rng + ?Sized>(n: usize, probs: &[f64], shots: usize, rng: &mut R, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + n + n * (n - 1) / 2, 0.0);
    let mut counts = vec![0usize; probs.len()];
    for x in sample_indices(probs, shots, rng) {
        counts[x] += 1;
    }
    let w = 1.0 / shots as f64;
    for (x, &k) in counts.iter().enumerate() {
        if k > 0 {
            accumulate_parities(n, x, k as f64 * w, &mut out[start..]);
        }
    }
}

/// Shot-based estimate: `shots` samples in the Z basis, then `shots` in the
/// X basis. Each estimate is a mean of `+-1` outcomes.
pub fn sampled_features<R: Rng + ?Sized>(
    spec: &CircuitSpec,
    state: &StateVector,
    shots: usize,
    rng: &mut R,
) -> Result<FeatureVector> {
    if shots == 0 {
        return Err(QfanError::InvalidShots);
    }
    check_state(spec, state)?;
    let n = spec.n_qubits;
    let mut f = Vec::with_capacity(spec.feature_count());
    sampled_parities(n, &state.probabilities(), shots, rng, &mut f);
    sampled_parities(n, &state.to_x_basis().probabilities(), shots, rng, &mut f);
    Ok(FeatureVector(f))
}

/// How feature expectations are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// Exact expectations from the amplitudes.
    Exact,
    /// Finite-shot estimates with the given shots per setting.
    Shots(usize),
}

impl Readout {
    pub fn shots(&self) -> Option<usize> {
        match self {
            Readout::Exact => None,
            Readout::Shots(n) => Some(*n),
        }
    }
}

/// Counts circuit executions (one per measurement setting per sample) and
/// shots. Shared across worker threads.
#[derive(Debug, Default)]
pub struct ExecutionCounter {
    circuits: AtomicU64,
    shots: AtomicU64,
}

impl ExecutionCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, circuits: u64, shots: u64) {
        self.circuits.fetch_add(circuits, Ordering::Relaxed);
        self.shots.fetch_add(shots, Ordering::Relaxed);
    }

    pub fn circuits(&self) -> u64 {
        self.circuits.load(Ordering::Relaxed)
    }

    pub fn shots(&self) -> u64 {
        self.shots.load(Ordering::Relaxed)
    }
}

/// Build the state and read the features out, recording one circuit per
/// measurement setting.
pub fn measure<R: Rng + ?Sized>(
    spec: &CircuitSpec,
    angles: &[f64],
    theta: &Theta,
    readout: Readout,
    rng: &mut R,
    counter: &ExecutionCounter,
) -> Result<FeatureVector> {
    let state = build_state(spec, angles, theta)?;
    let f = match readout {
        Readout::Exact => exact_features(spec, &state)?,
        Readout::Shots(n) => sampled_features(spec, &state, n, rng)?,
    };
    let groups = MEASUREMENT_GROUPS as u64;
    counter.record(groups, groups * readout.shots().unwrap_or(0) as u64);
    Ok(f)
}

//! Random Gaussian graphical models and time-varying bias inputs.
//!
//! A model is parameterized by its precision matrix `A`: the joint density
//! is `p(θ) ∝ exp(-½ θᵀAθ + bᵀθ)`, so `A_ii` is the local precision of a
//! variable and `A_ij` the coupling between two variables.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Default coupling magnitude below which an off-diagonal entry counts as absent.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum PgmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("target density {target} unreachable within {rotations} rotations (achieved {achieved:.4})")]
    DensityUnreachable {
        target: f64,
        achieved: f64,
        rotations: usize,
    },
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPgm {
    precision: DMatrix<f64>,
    epsilon: f64,
}

impl GaussianPgm {
    /// Wraps a precision matrix after checking symmetry and positive definiteness.
    pub fn new(precision: DMatrix<f64>, epsilon: f64) -> Result<Self, PgmError> {
        if !precision.is_square() {
            return Err(PgmError::InvalidArgument("precision matrix must be square".into()));
        }
        let n = precision.nrows();
        for i in 0..n {
            for j in 0..i {
                if precision[(i, j)] != precision[(j, i)] {
                    return Err(PgmError::InvalidArgument(format!(
                        "precision matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if precision.iter().any(|v| !v.is_finite()) {
            return Err(PgmError::InvalidArgument("non-finite precision entry".into()));
        }
        if n > 0 && precision.clone().cholesky().is_none() {
            return Err(PgmError::NotPositiveDefinite);
        }
        Ok(Self { precision, epsilon })
    }

    pub fn n(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Local precision `A_ii`.
    pub fn local_precision(&self, i: usize) -> f64 {
        self.precision[(i, i)]
    }

    /// Coupling `A_ij`.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.precision[(i, j)]
    }

    /// Neighbors of `i`: every `j != i` with a nonzero coupling.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&j| j != i && self.precision[(i, j)] != 0.0)
            .collect()
    }

    /// Whether `|A_ij| > ε`, the support used for density and adjacency.
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.precision[(i, j)].abs() > self.epsilon
    }

    pub fn density(&self) -> f64 {
        measure_density(&self.precision, self.epsilon)
    }
}

/// Fraction of off-diagonal entries with `|A_ij| > epsilon`.
pub fn measure_density(a: &DMatrix<f64>, epsilon: f64) -> f64 {
    let n = a.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)].abs() > epsilon {
                count += 1;
            }
        }
    }
    count as f64 / (n * (n - 1)) as f64
}

/// Parameters for [`random_precision_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub n: usize,
    pub density: f64,
    pub rcond: f64,
    pub epsilon: f64,
    /// Maximum number of rotations; `None` means `100 n²`.
    pub max_rotations: Option<usize>,
}

impl PrecisionSpec {
    pub fn new(n: usize, density: f64, rcond: f64) -> Self {
        Self {
            n,
            density,
            rcond,
            epsilon: DEFAULT_EPSILON,
            max_rotations: None,
        }
    }
}

/// Draws the fixed spectrum: uniform on `[rcond, 1]` with both endpoints present,
/// in random order along the diagonal.
pub fn draw_spectrum(n: usize, rcond: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let mut spectrum = Vec::with_capacity(n);
    match n {
        0 => {}
        1 => spectrum.push(1.0),
        _ => {
            spectrum.push(rcond);
            spectrum.push(1.0);
            for _ in 2..n {
                spectrum.push(rng.random_range(rcond..=1.0));
            }
        }
    }
    spectrum.shuffle(rng);
    spectrum
}

/// Applies the rotation `A ← G A Gᵀ` in the plane of `(p, q)`.
fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize, angle: f64) {
    let (s, c) = angle.sin_cos();
    let n = a.nrows();
    // rows
    for k in 0..n {
        let ap = a[(p, k)];
        let aq = a[(q, k)];
        a[(p, k)] = c * ap - s * aq;
        a[(q, k)] = s * ap + c * aq;
    }
    // columns
    for k in 0..n {
        let ap = a[(k, p)];
        let aq = a[(k, q)];
        a[(k, p)] = c * ap - s * aq;
        a[(k, q)] = s * ap + c * aq;
    }
    // restore exact symmetry lost to rounding
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Random symmetric positive-definite precision matrix with a prescribed
/// spectrum, mixed by random plane rotations until the off-diagonal density
/// first meets the target. Returns the model together with the spectrum used.
pub fn random_precision_matrix_with_spectrum(
    spec: &PrecisionSpec,
    seed: u64,
) -> Result<(GaussianPgm, Vec<f64>), PgmError> {
    let PrecisionSpec {
        n,
        density,
        rcond,
        epsilon,
        ..
    } = *spec;
    if n == 0 {
        return Err(PgmError::InvalidArgument("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(PgmError::InvalidArgument(format!("density {density} outside [0, 1]")));
    }
    if !(rcond > 0.0 && rcond <= 1.0) {
        return Err(PgmError::InvalidArgument(format!("rcond {rcond} outside (0, 1]")));
    }
    let budget = spec.max_rotations.unwrap_or(100 * n * n);
    let mut rng = rng::rng(seed);
    let spectrum = draw_spectrum(n, rcond, &mut rng);
    let mut a = DMatrix::from_diagonal(&DVector::from_vec(spectrum.clone()));
    if n > 1 {
        let mut rotations = 0;
        while measure_density(&a, epsilon) < density {
            if rotations == budget {
                return Err(PgmError::DensityUnreachable {
                    target: density,
                    achieved: measure_density(&a, epsilon),
                    rotations,
                });
            }
            let p = rng.random_range(0..n);
            let mut q = rng.random_range(0..n - 1);
            if q >= p {
                q += 1;
            }
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            rotate(&mut a, p, q, angle);
            rotations += 1;
        }
    }
    Ok((GaussianPgm::new(a, epsilon)?, spectrum))
}

pub fn random_precision_matrix(spec: &PrecisionSpec, seed: u64) -> Result<GaussianPgm, PgmError> {
    random_precision_matrix_with_spectrum(spec, seed).map(|(pgm, _)| pgm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSchedule {
    /// Trial duration in steps.
    pub duration: usize,
    /// Expected switches per step.
    pub switch_rate: f64,
    /// Standard deviation of the per-period constant levels.
    pub amplitude_sigma: f64,
    /// Odd smoothing-window length.
    pub window_len: usize,
}

impl Default for BiasSchedule {
    fn default() -> Self {
        Self {
            duration: 100,
            switch_rate: 0.05,
            amplitude_sigma: 1.5,
            window_len: 5,
        }
    }
}

impl BiasSchedule {
    pub fn validate(&self) -> Result<(), PgmError> {
        if self.duration == 0 {
            return Err(PgmError::InvalidArgument("duration must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.switch_rate) {
            return Err(PgmError::InvalidArgument(format!(
                "switch_rate {} outside [0, 1]",
                self.switch_rate
            )));
        }
        if !(self.amplitude_sigma >= 0.0 && self.amplitude_sigma.is_finite()) {
            return Err(PgmError::InvalidArgument("amplitude_sigma must be finite and >= 0".into()));
        }
        if self.window_len.is_multiple_of(2) || self.window_len > self.duration {
            return Err(PgmError::InvalidArgument(format!(
                "window_len {} must be odd and at most the duration {}",
                self.window_len, self.duration
            )));
        }
        Ok(())
    }
}

/// Raw Hamming coefficients `0.54 − 0.46 cos(2πk/(M−1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|k| 0.54 - 0.46 * (std::f64::consts::TAU * k as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Centered convolution with a unit-sum Hamming window, replicate padding.
pub fn smooth(series: &[f64], window_len: usize) -> Vec<f64> {
    let w = hamming(window_len);
    let total: f64 = w.iter().sum();
    let half = window_len / 2;
    let last = series.len() as isize - 1;
    (0..series.len())
        .map(|t| {
            w.iter()
                .enumerate()
                .map(|(k, wk)| {
                    let idx = (t as isize + k as isize - half as isize).clamp(0, last);
                    wk / total * series[idx as usize]
                })
                .sum()
        })
        .collect()
}

/// Bias inputs `b_i^t`, stored vertex-major (`n × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSeries {
    pub values: DMatrix<f64>,
}

impl BiasSeries {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn duration(&self) -> usize {
        self.values.ncols()
    }

    /// Bias vector at step `t`.
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }
}

fn piecewise_levels(schedule: &BiasSchedule, rng: &mut rng::Rng) -> Vec<f64> {
    let level = Normal::new(0.0, schedule.amplitude_sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(schedule.duration);
    if schedule.switch_rate == 0.0 {
        let v = level.sample(rng);
        out.resize(schedule.duration, v);
        return out;
    }
    let period = Geometric::new(schedule.switch_rate).expect("validated rate");
    while out.len() < schedule.duration {
        let len = 1 + period.sample(rng).min(schedule.duration as u64) as usize;
        let v = level.sample(rng);
        let take = len.min(schedule.duration - out.len());
        out.extend(std::iter::repeat_n(v, take));
    }
    out
}

/// Piecewise-constant bias levels with memoryless period lengths, smoothed at
/// the switches. Each vertex draws from its own stream.
pub fn generate_bias_series(
    pgm: &GaussianPgm,
    schedule: &BiasSchedule,
    seed: u64,
) -> Result<BiasSeries, PgmError> {
    generate_bias_series_n(pgm.n(), schedule, seed)
}

pub fn generate_bias_series_n(
    n: usize,
    schedule: &BiasSchedule,
    seed: u64,
) -> Result<BiasSeries, PgmError> {
    schedule.validate()?;
    let mut values = DMatrix::zeros(n, schedule.duration);
    for i in 0..n {
        let mut rng = rng::rng(rng::indexed(seed, "bias-vertex", i as u64));
        let raw = piecewise_levels(schedule, &mut rng);
        for (t, v) in smooth(&raw, schedule.window_len).into_iter().enumerate() {
            values[(i, t)] = v;
        }
    }
    Ok(BiasSeries { values })
}

/// Exact marginal means `μ = A⁻¹ b` by Cholesky solve.
pub fn exact_marginal_means(pgm: &GaussianPgm, b: &DVector<f64>) -> Result<DVector<f64>, PgmError> {
    if b.len() != pgm.n() {
        return Err(PgmError::DimensionMismatch {
            expected: pgm.n(),
            got: b.len(),
        });
    }
    let chol = pgm
        .precision
        .clone()
        .cholesky()
        .ok_or(PgmError::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVariances {
    /// `diag(A⁻¹)`, the true marginal variances.
    pub exact: DVector<f64>,
    /// `1 / A_ii`, the variance of each variable with its couplings removed.
    pub local: DVector<f64>,
}

pub fn exact_marginal_variances(pgm: &GaussianPgm) -> Result<MarginalVariances, PgmError> {
    let chol = pgm
        .precision
        .clone()
        .cholesky()
        .ok_or(PgmError::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(MarginalVariances {
        exact: inv.diagonal(),
        local: pgm.precision.diagonal().map(|a| 1.0 / a),
    })
}

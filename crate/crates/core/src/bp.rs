//! Damped, noisy belief propagation.
//!
//! The Gaussian engine keeps every message in natural parameters: the
//! message from `j` to `i` is `m_ij(θ_i) ∝ exp(-½ P_ij θ_i² + h_ij θ_i)`.
//! The discrete engine runs on finite state spaces in the log domain and is
//! used mainly as a cross-check of the message-passing schedule.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{generate_bias_series, random_precision_matrix, BiasSchedule, GaussianPgm, PgmError, PrecisionSpec};
use crate::rng::{self, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum BpError {
    #[error("belief propagation diverged at step {step}: non-positive cavity precision on edge ({i}, {j})")]
    Divergence { step: usize, i: usize, j: usize },
    #[error("belief propagation diverged at step {step}: non-positive marginal precision at vertex {vertex}")]
    MarginalDivergence { step: usize, vertex: usize },
    #[error("non-finite log potential at vertex {vertex}")]
    NonFinitePotential { vertex: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MessageInit {
    /// `P = h = 0`; the first step then equals the disconnected estimate.
    #[default]
    Vacuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpConfig {
    /// Damping coefficient in `[0, 1)`; `1` freezes the messages.
    pub gamma: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub init: MessageInit,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            noise_sigma: 0.05,
            init: MessageInit::Vacuous,
        }
    }
}

impl BpConfig {
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), BpError> {
        // γ = 1 is accepted for single steps (frozen messages), not for traces.
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(BpError::InvalidConfig(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(BpError::InvalidConfig("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Gaussian messages on every directed edge `(i, j)` with `A_ij != 0`,
/// ordered lexicographically. Edge `(i, j)` carries the message into `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessages {
    edges: Vec<(usize, usize)>,
    reverse: Vec<usize>,
    incoming: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub potential: Vec<f64>,
}

impl GaussianMessages {
    pub fn new(pgm: &GaussianPgm, init: MessageInit) -> Self {
        let n = pgm.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in pgm.neighbors(i) {
                edges.push((i, j));
            }
        }
        let index: BTreeMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(e, &ij)| (ij, e)).collect();
        let reverse = edges.iter().map(|&(i, j)| index[&(j, i)]).collect();
        let mut incoming = vec![Vec::new(); n];
        for (e, &(i, _)) in edges.iter().enumerate() {
            incoming[i].push(e);
        }
        let m = edges.len();
        match init {
            MessageInit::Vacuous => Self {
                edges,
                reverse,
                incoming,
                precision: vec![0.0; m],
                potential: vec![0.0; m],
            },
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Largest absolute change of any natural parameter relative to `other`.
    pub fn max_change(&self, other: &Self) -> f64 {
        self.precision
            .iter()
            .zip(&other.precision)
            .chain(self.potential.iter().zip(&other.potential))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianStep {
    pub messages: GaussianMessages,
    pub means: DVector<f64>,
    pub sigmas: DVector<f64>,
}

/// One synchronous damped update of every message followed by the marginals.
///
/// `step` only labels divergence errors. `noise` must be provided when
/// `config.noise_sigma > 0`.
pub fn gaussian_bp_step(
    pgm: &GaussianPgm,
    messages: &GaussianMessages,
    bias: &DVector<f64>,
    config: &BpConfig,
    step: usize,
    noise: Option<&mut Rng>,
) -> Result<GaussianStep, BpError> {
    let n = pgm.n();
    if bias.len() != n {
        return Err(BpError::DimensionMismatch {
            expected: n,
            got: bias.len(),
        });
    }
    let vertex_totals = |precision: &[f64], potential: &[f64]| {
        let mut tp = vec![0.0; n];
        let mut th = vec![0.0; n];
        for v in 0..n {
            tp[v] = pgm.local_precision(v);
            th[v] = bias[v];
            for &e in &messages.incoming[v] {
                tp[v] += precision[e];
                th[v] += potential[e];
            }
        }
        (tp, th)
    };
    let (total_p, total_h) = vertex_totals(&messages.precision, &messages.potential);

    let gamma = config.gamma;
    let mut noise = if config.noise_sigma > 0.0 {
        let rng = noise.ok_or_else(|| {
            BpError::InvalidConfig("noise_sigma > 0 requires a noise source".into())
        })?;
        Some((rng, Normal::new(0.0, config.noise_sigma).expect("validated sigma")))
    } else {
        None
    };

    let mut next = messages.clone();
    for (e, &(i, j)) in messages.edges.iter().enumerate() {
        let back = messages.reverse[e];
        let cavity_p = total_p[j] - messages.precision[back];
        let cavity_h = total_h[j] - messages.potential[back];
        if cavity_p.is_nan() || cavity_p <= 0.0 {
            return Err(BpError::Divergence { step, i, j });
        }
        let coupling = pgm.coupling(i, j);
        let cand_p = -coupling * coupling / cavity_p;
        let cand_h = -coupling * cavity_h / cavity_p;
        next.precision[e] = gamma * messages.precision[e] + (1.0 - gamma) * cand_p;
        next.potential[e] = gamma * messages.potential[e] + (1.0 - gamma) * cand_h;
        if let Some((rng, dist)) = noise.as_mut() {
            next.potential[e] += dist.sample(*rng);
        }
    }

    let (p, h) = vertex_totals(&next.precision, &next.potential);
    let mut means = DVector::zeros(n);
    let mut sigmas = DVector::zeros(n);
    for v in 0..n {
        if p[v].is_nan() || p[v] <= 0.0 {
            return Err(BpError::MarginalDivergence { step, vertex: v });
        }
        means[v] = h[v] / p[v];
        sigmas[v] = p[v].powf(-0.5);
    }
    Ok(GaussianStep {
        messages: next,
        means,
        sigmas,
    })
}

/// Marginal means and standard deviations over a whole bias series (`n × T` each).
#[derive(Debug, Clone)]
pub struct GaussianTrace {
    pub means: DMatrix<f64>,
    pub sigmas: DMatrix<f64>,
}

pub fn run_gaussian_bp(
    pgm: &GaussianPgm,
    bias: &DMatrix<f64>,
    config: &BpConfig,
    mut noise: Option<&mut Rng>,
) -> Result<GaussianTrace, BpError> {
    config.validate()?;
    let (n, steps) = bias.shape();
    if n != pgm.n() {
        return Err(BpError::DimensionMismatch {
            expected: pgm.n(),
            got: n,
        });
    }
    let mut messages = GaussianMessages::new(pgm, config.init);
    let mut means = DMatrix::zeros(n, steps);
    let mut sigmas = DMatrix::zeros(n, steps);
    for t in 0..steps {
        let b = bias.column(t).into_owned();
        let out = gaussian_bp_step(pgm, &messages, &b, config, t, noise.as_deref_mut())?;
        means.set_column(t, &out.means);
        sigmas.set_column(t, &out.sigmas);
        messages = out.messages;
    }
    Ok(GaussianTrace { means, sigmas })
}

/// Runs the precision half of the recursion for `steps` steps and returns
/// the first divergence. Precisions ignore biases and noise, so a model that
/// passes never diverges within `steps` steps on any trial.
pub fn check_precision_stability(pgm: &GaussianPgm, config: &BpConfig, steps: usize) -> Result<(), BpError> {
    config.validate()?;
    let quiet = config.noiseless();
    let b = DVector::zeros(pgm.n());
    let mut messages = GaussianMessages::new(pgm, config.init);
    for t in 0..steps {
        messages = gaussian_bp_step(pgm, &messages, &b, &quiet, t, None)?.messages;
    }
    Ok(())
}

/// Draws models until one stays stable for `steps` BP steps. Attempt 0 uses
/// `seed`, attempt `k` the `k`-th indexed substream of it. Returns the model
/// and the number of rejected draws.
pub fn sample_stable_pgm(
    spec: &PrecisionSpec,
    config: &BpConfig,
    steps: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<(GaussianPgm, usize), BpError> {
    let mut last = BpError::InvalidConfig("max_attempts must be at least 1".into());
    for k in 0..max_attempts {
        let s = if k == 0 { seed } else { rng::indexed(seed, "resample", k as u64) };
        let pgm = random_precision_matrix(spec, s)?;
        match check_precision_stability(&pgm, config, steps) {
            Ok(()) => return Ok((pgm, k)),
            Err(e @ (BpError::Divergence { .. } | BpError::MarginalDivergence { .. })) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Pairwise model on finite state spaces with strictly positive potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePgm {
    singleton: Vec<Vec<f64>>,
    /// `pairwise[(i, j)]` for `i < j`, indexed `[(x_i, x_j)]`.
    pairwise: BTreeMap<(usize, usize), DMatrix<f64>>,
    neighbors: Vec<Vec<usize>>,
}

impl DiscretePgm {
    pub fn new(
        singleton: Vec<Vec<f64>>,
        pairwise: BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<Self, BpError> {
        let n = singleton.len();
        for (v, phi) in singleton.iter().enumerate() {
            if phi.is_empty() || phi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(BpError::NonFinitePotential { vertex: v });
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for (&(i, j), table) in &pairwise {
            if i >= j || j >= n {
                return Err(BpError::InvalidConfig(format!("bad pairwise key ({i}, {j})")));
            }
            if table.shape() != (singleton[i].len(), singleton[j].len()) {
                return Err(BpError::InvalidConfig(format!("pairwise table ({i}, {j}) has wrong shape")));
            }
            if table.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(BpError::NonFinitePotential { vertex: i });
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            singleton,
            pairwise,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.singleton.len()
    }

    pub fn states(&self, i: usize) -> usize {
        self.singleton[i].len()
    }

    pub fn singleton(&self, i: usize) -> &[f64] {
        &self.singleton[i]
    }

    pub fn set_singleton(&mut self, i: usize, phi: Vec<f64>) -> Result<(), BpError> {
        if phi.len() != self.states(i) || phi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(BpError::NonFinitePotential { vertex: i });
        }
        self.singleton[i] = phi;
        Ok(())
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `ψ_ij(x_i, x_j)`, symmetric in its argument pairs.
    pub fn psi(&self, i: usize, j: usize, xi: usize, xj: usize) -> f64 {
        if i < j {
            self.pairwise[&(i, j)][(xi, xj)]
        } else {
            self.pairwise[&(j, i)][(xj, xi)]
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairwise.keys().copied()
    }
}

/// Normalized log messages `ln m_ij(θ_i)` keyed by directed edge `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMessages {
    pub log: BTreeMap<(usize, usize), Vec<f64>>,
}

impl DiscreteMessages {
    /// Uniform messages on every directed edge.
    pub fn uniform(pgm: &DiscretePgm) -> Self {
        let mut log = BTreeMap::new();
        for i in 0..pgm.n() {
            for &j in pgm.neighbors(i) {
                let k = pgm.states(i);
                log.insert((i, j), vec![-(k as f64).ln(); k]);
            }
        }
        Self { log }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn normalize_log(xs: &mut [f64]) {
    let z = log_sum_exp(xs);
    xs.iter_mut().for_each(|x| *x -= z);
}

/// One damped log-domain update with per-vertex additive log noise, followed
/// by the normalized marginals.
pub fn discrete_bp_step(
    pgm: &DiscretePgm,
    messages: &DiscreteMessages,
    config: &BpConfig,
    noise: Option<&mut Rng>,
) -> Result<(DiscreteMessages, Vec<Vec<f64>>), BpError> {
    let n = pgm.n();
    let vertex_noise: Vec<f64> = if config.noise_sigma > 0.0 {
        let rng = noise.ok_or_else(|| {
            BpError::InvalidConfig("noise_sigma > 0 requires a noise source".into())
        })?;
        let dist = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
        (0..n).map(|_| dist.sample(rng)).collect()
    } else {
        vec![0.0; n]
    };
    let gamma = config.gamma;
    let mut next = BTreeMap::new();
    for (&(i, j), old) in &messages.log {
        let kj = pgm.states(j);
        // ln φ_j + Σ_{k ∈ N(j)\i} ln m_jk, per state of j
        let cavity: Vec<f64> = (0..kj)
            .map(|xj| {
                pgm.singleton(j)[xj].ln()
                    + pgm
                        .neighbors(j)
                        .iter()
                        .filter(|&&k| k != i)
                        .map(|&k| messages.log[&(j, k)][xj])
                        .sum::<f64>()
            })
            .collect();
        let mut updated: Vec<f64> = (0..pgm.states(i))
            .map(|xi| {
                let terms: Vec<f64> = (0..kj)
                    .map(|xj| cavity[xj] + pgm.psi(i, j, xi, xj).ln())
                    .collect();
                let fresh = log_sum_exp(&terms);
                let damped = if gamma == 0.0 {
                    fresh
                } else if gamma == 1.0 {
                    old[xi]
                } else {
                    gamma * old[xi] + (1.0 - gamma) * fresh
                };
                damped + vertex_noise[i]
            })
            .collect();
        if updated.iter().any(|v| !v.is_finite()) {
            return Err(BpError::NonFinitePotential { vertex: j });
        }
        normalize_log(&mut updated);
        next.insert((i, j), updated);
    }
    let next = DiscreteMessages { log: next };
    let marginals = discrete_marginals(pgm, &next);
    Ok((next, marginals))
}

/// `p_i ∝ φ_i ∏_j m_ij`, normalized.
pub fn discrete_marginals(pgm: &DiscretePgm, messages: &DiscreteMessages) -> Vec<Vec<f64>> {
    (0..pgm.n())
        .map(|i| {
            let mut logp: Vec<f64> = (0..pgm.states(i))
                .map(|xi| {
                    pgm.singleton(i)[xi].ln()
                        + pgm
                            .neighbors(i)
                            .iter()
                            .map(|&j| messages.log[&(i, j)][xi])
                            .sum::<f64>()
                })
                .collect();
            normalize_log(&mut logp);
            logp.into_iter().map(f64::exp).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Fractions of trials assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.9,
            val: 0.05,
            test: 0.05,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), BpError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(BpError::InvalidConfig(format!(
                "split fractions {all:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Seeded per-trial assignment; counts are rounded, train takes the remainder.
    pub fn assign(&self, trials: usize, seed: u64) -> Vec<Split> {
        let n_test = ((trials as f64) * self.test).round() as usize;
        let n_val = (((trials as f64) * self.val).round() as usize).min(trials - n_test.min(trials));
        let mut order: Vec<usize> = (0..trials).collect();
        order.shuffle(&mut rng::rng(seed));
        let mut out = vec![Split::Train; trials];
        for (rank, &trial) in order.iter().enumerate() {
            if rank < n_test {
                out[trial] = Split::Test;
            } else if rank < n_test + n_val {
                out[trial] = Split::Val;
            }
        }
        out
    }
}

/// Bias inputs and noisy BP marginal means for many trials on one model.
/// Arrays are `(trial, vertex, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    pub pgm_id: usize,
    pub inputs: Array3<f64>,
    pub targets: Array3<f64>,
    /// Same runs without processing noise.
    pub reference: Array3<f64>,
    pub splits: Vec<Split>,
}

impl TraceDataset {
    pub fn trials(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn duration(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn trials_in(&self, split: Split) -> Vec<usize> {
        (0..self.trials()).filter(|&r| self.splits[r] == split).collect()
    }

    pub fn validate(&self) -> Result<(), BpError> {
        let shape = self.inputs.shape();
        if self.targets.shape() != shape || self.reference.shape() != shape {
            return Err(BpError::InvalidConfig("trace arrays have inconsistent shapes".into()));
        }
        if self.splits.len() != shape[0] {
            return Err(BpError::InvalidConfig("split assignment length differs from trial count".into()));
        }
        if self.inputs.iter().chain(&self.targets).chain(&self.reference).any(|v| !v.is_finite()) {
            return Err(BpError::InvalidConfig("non-finite trace value".into()));
        }
        Ok(())
    }
}

/// Runs `trials` independent BP trials with fresh bias series, recording the
/// noisy and noiseless marginal means.
pub fn generate_traces(
    pgm_id: usize,
    pgm: &GaussianPgm,
    schedule: &BiasSchedule,
    config: &BpConfig,
    trials: usize,
    split: &SplitFractions,
    seed: u64,
) -> Result<TraceDataset, BpError> {
    if trials == 0 {
        return Err(BpError::InvalidConfig("trials must be at least 1".into()));
    }
    if config.gamma >= 1.0 {
        return Err(BpError::InvalidConfig("gamma must be below 1 for traces".into()));
    }
    config.validate()?;
    split.validate()?;
    let n = pgm.n();
    let steps = schedule.duration;
    let mut inputs = Array3::zeros((trials, n, steps));
    let mut targets = Array3::zeros((trials, n, steps));
    let mut reference = Array3::zeros((trials, n, steps));
    for r in 0..trials {
        let bias = generate_bias_series(pgm, schedule, rng::indexed(seed, "bias", r as u64))?;
        let mut noise = rng::rng(rng::indexed(seed, "noise", r as u64));
        let noisy = run_gaussian_bp(pgm, &bias.values, config, Some(&mut noise))?;
        let clean = run_gaussian_bp(pgm, &bias.values, &config.noiseless(), None)?;
        for i in 0..n {
            for t in 0..steps {
                inputs[(r, i, t)] = bias.values[(i, t)];
                targets[(r, i, t)] = noisy.means[(i, t)];
                reference[(r, i, t)] = clean.means[(i, t)];
            }
        }
    }
    Ok(TraceDataset {
        pgm_id,
        inputs,
        targets,
        reference,
        splits: split.assign(trials, rng::substream(seed, "split")),
    })
}

//! Multi-graph training: one shared set of dynamical parameters, one set of
//! structural parameters per graph, squared-error loss summed over
//! post-burn-in points, L2 penalty on the structure.

use std::time::Instant;

use ndarray::{s, ArrayView3, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{Split, TraceDataset};
use crate::diffnn::{InitScheme, Tape, Var};
use crate::gnn::{forward_batch, Architecture, DynamicalParams, GnnError, GnnModel, StructuralParams};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset problem: {0}")]
    Dataset(String),
    #[error("non-finite objective at step {step}")]
    Divergence { step: usize },
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphSampling {
    #[default]
    Uniform,
    /// Probability proportional to the number of training points.
    SizeWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub lambda_reg: f64,
    pub burn_in: usize,
    pub sampling: GraphSampling,
    pub init: InitScheme,
    /// Scale the initial readout by the training-target standard deviation
    /// and start its bias at the target mean.
    pub readout_from_data: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_steps: 20_000,
            eval_every: 200,
            patience: 20,
            lambda_reg: 1e-4,
            burn_in: 10,
            sampling: GraphSampling::Uniform,
            init: InitScheme::default(),
            readout_from_data: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad("lambda_reg must be non-negative");
        }
        Ok(())
    }
}

/// `Σ (o − y)²` over masked-in points.
pub fn loss(outputs: &[f64], targets: &[f64], mask: &[bool]) -> f64 {
    outputs
        .iter()
        .zip(targets)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((o, y), _)| (o - y) * (o - y))
        .sum()
}

pub fn regularized_objective(loss_value: f64, structural: &StructuralParams, lambda_reg: f64) -> f64 {
    loss_value + lambda_reg * structural.squared_norm()
}

/// `1 − SS_res / SS_tot` over masked-in points.
pub fn r_squared(outputs: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64, TrainError> {
    let mut acc = FitAccumulator::default();
    for ((o, y), &m) in outputs.iter().zip(targets).zip(mask) {
        if m {
            acc.push(*o, *y);
        }
    }
    if acc.count < 2 || acc.ss_tot() <= 0.0 {
        return Err(TrainError::ZeroVariance);
    }
    Ok(acc.r2())
}

/// Mask over a `(trial, vertex, time)` array that drops the first `burn_in` steps.
pub fn burn_in_mask(shape: (usize, usize, usize), burn_in: usize) -> Vec<bool> {
    let (a, b, t) = shape;
    (0..a * b * t).map(|k| k % t >= burn_in).collect()
}

/// Running sums for MSE and R².
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitAccumulator {
    pub sse: f64,
    pub sum_y: f64,
    pub sum_y2: f64,
    pub count: usize,
}

impl FitAccumulator {
    pub fn push(&mut self, output: f64, target: f64) {
        self.sse += (output - target).powi(2);
        self.sum_y += target;
        self.sum_y2 += target * target;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &FitAccumulator) {
        self.sse += other.sse;
        self.sum_y += other.sum_y;
        self.sum_y2 += other.sum_y2;
        self.count += other.count;
    }

    pub fn mse(&self) -> f64 {
        self.sse / self.count as f64
    }

    fn ss_tot(&self) -> f64 {
        self.sum_y2 - self.sum_y * self.sum_y / self.count as f64
    }

    pub fn r2(&self) -> f64 {
        1.0 - self.sse / self.ss_tot()
    }

    pub fn metrics(&self) -> FitMetrics {
        FitMetrics {
            mse: self.mse(),
            r2: self.r2(),
            points: self.count,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: FitMetrics,
    pub val: FitMetrics,
    pub test: FitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub pgm_id: usize,
    pub metrics: SplitMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub per_graph: Vec<GraphMetrics>,
    pub pooled: SplitMetrics,
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub graph_id: usize,
    pub objective: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub arch: Architecture,
    pub dynamical: DynamicalParams,
    pub structural: Vec<StructuralParams>,
    pub pgm_ids: Vec<usize>,
    pub metrics: EnsembleMetrics,
    pub curve: Vec<LogRecord>,
    /// Optimizer steps taken when the returned parameters were recorded.
    pub best_step: usize,
    pub steps_run: usize,
    pub seconds: f64,
}

impl TrainedEnsemble {
    pub fn model(&self, graph: usize) -> GnnModel {
        GnnModel {
            arch: self.arch.clone(),
            dynamical: self.dynamical.clone(),
            structural: self.structural[graph].clone(),
        }
    }
}

/// Adaptive first-order optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn trial_views<'a>(inputs: &'a ndarray::Array3<f64>, trials: &[usize]) -> Vec<ArrayView3<'a, f64>> {
    trials
        .iter()
        .map(|&r| inputs.slice(s![r, .., ..]).insert_axis(Axis(2)))
        .collect()
}

fn check_scalar_io(arch: &Architecture) -> Result<(), TrainError> {
    if arch.d_x != 1 || arch.d_o != 1 {
        return Err(TrainError::InvalidConfig("trace training needs d_x = d_o = 1".into()));
    }
    Ok(())
}

/// Builds the masked loss on the tape and returns its node.
fn tape_loss(
    tape: &mut Tape,
    outputs: &[Var],
    dataset: &TraceDataset,
    trials: &[usize],
    burn_in: usize,
) -> Option<Var> {
    let n = dataset.n();
    let mut total = None;
    for (t, &o) in outputs.iter().enumerate().skip(burn_in) {
        let mut y = ndarray::Array2::zeros((trials.len() * n, 1));
        for (b, &r) in trials.iter().enumerate() {
            for i in 0..n {
                y[(b * n + i, 0)] = dataset.targets[(r, i, t)];
            }
        }
        let y = tape.leaf(y);
        let d = tape.sub(o, y);
        let sq = tape.square(d);
        let sum = tape.sum(sq);
        total = Some(match total {
            None => sum,
            Some(acc) => tape.add(acc, sum),
        });
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub objective: f64,
    pub loss: f64,
    /// Layout of [`DynamicalParams::flatten`].
    pub dynamical: Vec<f64>,
    /// Layout of [`StructuralParams::flatten`].
    pub structural: Vec<f64>,
}

/// Regularized objective on `trials` of one graph and its exact gradient.
pub fn batch_gradient(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    dataset: &TraceDataset,
    trials: &[usize],
    burn_in: usize,
    lambda_reg: f64,
) -> Result<BatchGradient, TrainError> {
    check_scalar_io(arch)?;
    let mut tape = Tape::new();
    let dv = dynamical.register(&mut tape);
    let sv = structural.register(&mut tape);
    let views = trial_views(&dataset.inputs, trials);
    let fwd = forward_batch(&mut tape, arch, &dv, sv, &views, false)?;
    let reg = lambda_reg * structural.squared_norm();
    let mut structural_grad: Vec<f64> = structural.flatten().iter().map(|v| 2.0 * lambda_reg * v).collect();
    let Some(total) = tape_loss(&mut tape, &fwd.outputs, dataset, trials, burn_in) else {
        return Ok(BatchGradient {
            objective: reg,
            loss: 0.0,
            dynamical: vec![0.0; dynamical.param_count()],
            structural: structural_grad,
        });
    };
    let loss_value = tape.scalar(total);
    let grads = tape.backward(total).expect("scalar loss");
    let from_loss = grads
        .wrt(&tape, sv.vertex)
        .iter()
        .chain(grads.wrt(&tape, sv.edge).iter())
        .copied()
        .collect::<Vec<_>>();
    for (g, l) in structural_grad.iter_mut().zip(from_loss) {
        *g += l;
    }
    Ok(BatchGradient {
        objective: loss_value + reg,
        loss: loss_value,
        dynamical: dv.flatten_grad(&tape, &grads),
        structural: structural_grad,
    })
}

/// Model outputs `(trials, n, T)` for the given trials, computed in chunks.
pub fn predict_trials(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    dataset: &TraceDataset,
    trials: &[usize],
) -> Result<ndarray::Array3<f64>, TrainError> {
    check_scalar_io(arch)?;
    let (n, duration) = (dataset.n(), dataset.duration());
    let mut out = ndarray::Array3::zeros((trials.len(), n, duration));
    for (c, chunk) in trials.chunks(16).enumerate() {
        let mut tape = Tape::new();
        let dv = dynamical.register(&mut tape);
        let sv = structural.register(&mut tape);
        let views = trial_views(&dataset.inputs, chunk);
        let fwd = forward_batch(&mut tape, arch, &dv, sv, &views, false)?;
        for (t, &o) in fwd.outputs.iter().enumerate() {
            let o = tape.value(o);
            for b in 0..chunk.len() {
                for i in 0..n {
                    out[(c * 16 + b, i, t)] = o[(b * n + i, 0)];
                }
            }
        }
    }
    Ok(out)
}

/// Fit statistics of a model on one split of one dataset.
pub fn evaluate_split(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    dataset: &TraceDataset,
    split: Split,
    burn_in: usize,
) -> Result<FitAccumulator, TrainError> {
    let trials = dataset.trials_in(split);
    let pred = predict_trials(arch, dynamical, structural, dataset, &trials)?;
    let mut acc = FitAccumulator::default();
    for (b, &r) in trials.iter().enumerate() {
        for i in 0..dataset.n() {
            for t in burn_in..dataset.duration() {
                acc.push(pred[(b, i, t)], dataset.targets[(r, i, t)]);
            }
        }
    }
    Ok(acc)
}

pub fn ensemble_metrics(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &[StructuralParams],
    datasets: &[TraceDataset],
    burn_in: usize,
) -> Result<EnsembleMetrics, TrainError> {
    let mut pooled = [FitAccumulator::default(); 3];
    let mut per_graph = Vec::with_capacity(datasets.len());
    for (ds, st) in datasets.iter().zip(structural) {
        let mut accs = [FitAccumulator::default(); 3];
        for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
            accs[k] = evaluate_split(arch, dynamical, st, ds, split, burn_in)?;
            pooled[k].merge(&accs[k]);
        }
        per_graph.push(GraphMetrics {
            pgm_id: ds.pgm_id,
            metrics: SplitMetrics {
                train: accs[0].metrics(),
                val: accs[1].metrics(),
                test: accs[2].metrics(),
            },
        });
    }
    Ok(EnsembleMetrics {
        per_graph,
        pooled: SplitMetrics {
            train: pooled[0].metrics(),
            val: pooled[1].metrics(),
            test: pooled[2].metrics(),
        },
    })
}

/// Median over graphs of the test MSE obtained by predicting the noisy
/// targets with the noiseless BP means.
pub fn baseline_mse(datasets: &[TraceDataset], burn_in: usize) -> f64 {
    let mut per_graph: Vec<f64> = datasets
        .iter()
        .map(|ds| {
            let mut acc = FitAccumulator::default();
            for r in ds.trials_in(Split::Test) {
                for i in 0..ds.n() {
                    for t in burn_in..ds.duration() {
                        acc.push(ds.reference[(r, i, t)], ds.targets[(r, i, t)]);
                    }
                }
            }
            acc.mse()
        })
        .collect();
    per_graph.sort_by(f64::total_cmp);
    let k = per_graph.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        per_graph[k / 2]
    } else {
        0.5 * (per_graph[k / 2 - 1] + per_graph[k / 2])
    }
}

fn pooled_val_mse(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &[StructuralParams],
    datasets: &[TraceDataset],
    burn_in: usize,
) -> Result<f64, TrainError> {
    let mut acc = FitAccumulator::default();
    for (ds, st) in datasets.iter().zip(structural) {
        acc.merge(&evaluate_split(arch, dynamical, st, ds, Split::Val, burn_in)?);
    }
    Ok(acc.mse())
}

/// Mean and standard deviation of all training-split targets.
pub fn training_target_moments(datasets: &[TraceDataset]) -> (f64, f64) {
    let mut acc = FitAccumulator::default();
    for ds in datasets {
        for r in ds.trials_in(Split::Train) {
            for &y in ds.targets.slice(s![r, .., ..]).iter() {
                acc.push(y, y);
            }
        }
    }
    let mean = acc.sum_y / acc.count as f64;
    let var = (acc.ss_tot() / acc.count as f64).max(0.0);
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

fn check_datasets(datasets: &[TraceDataset], config: &TrainConfig) -> Result<(), TrainError> {
    if datasets.is_empty() {
        return Err(TrainError::Dataset("no datasets".into()));
    }
    for ds in datasets {
        ds.validate().map_err(|e| TrainError::Dataset(e.to_string()))?;
        if ds.trials() == 0 {
            return Err(TrainError::Dataset(format!("dataset {} has zero trials", ds.pgm_id)));
        }
        if ds.trials_in(Split::Train).is_empty() {
            return Err(TrainError::Dataset(format!("dataset {} has no training trials", ds.pgm_id)));
        }
        if config.burn_in >= ds.duration() {
            return Err(TrainError::InvalidConfig(format!(
                "burn_in {} must be below trial duration {}",
                config.burn_in,
                ds.duration()
            )));
        }
    }
    if datasets.iter().map(|d| d.trials_in(Split::Val).len()).sum::<usize>() == 0 {
        return Err(TrainError::Dataset("no validation trials for early stopping".into()));
    }
    Ok(())
}

/// Trains one shared set of dynamics and per-graph structure on all datasets.
///
/// Each step picks a graph, draws a batch of its training trials and takes
/// one optimizer step on the shared parameters and on that graph's
/// structure. Every `eval_every` steps the pooled validation MSE is checked;
/// the best parameters seen (including the initial ones) are returned.
pub fn train_multi(
    datasets: &[TraceDataset],
    arch: &Architecture,
    config: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainedEnsemble, TrainError> {
    arch.validate()?;
    check_scalar_io(arch)?;
    config.validate()?;
    check_datasets(datasets, config)?;
    let started = Instant::now();

    let mut dynamical = DynamicalParams::init(arch, config.init, rng::substream(config.seed, "init"));
    if config.readout_from_data {
        let (mean, std) = training_target_moments(datasets);
        dynamical.readout_w *= std;
        dynamical.readout_b.fill(mean);
    }
    let mut structural: Vec<StructuralParams> = datasets
        .iter()
        .enumerate()
        .map(|(g, ds)| StructuralParams::init(arch, ds.n(), rng::indexed(config.seed, "structure", g as u64)))
        .collect();
    let mut flat_d = dynamical.flatten();
    let mut flat_s: Vec<Vec<f64>> = structural.iter().map(StructuralParams::flatten).collect();
    let mut adam_d = Adam::new(flat_d.len(), config.learning_rate);
    let mut adam_s: Vec<Adam> = flat_s.iter().map(|f| Adam::new(f.len(), config.learning_rate)).collect();

    let train_trials: Vec<Vec<usize>> = datasets.iter().map(|d| d.trials_in(Split::Train)).collect();
    let weights: Vec<f64> = match config.sampling {
        GraphSampling::Uniform => vec![1.0; datasets.len()],
        GraphSampling::SizeWeighted => datasets
            .iter()
            .zip(&train_trials)
            .map(|(d, t)| (t.len() * d.n() * d.duration()) as f64)
            .collect(),
    };
    let total_weight: f64 = weights.iter().sum();
    let mut batch_rng = rng::rng(rng::substream(config.seed, "batch"));

    let mut best_val = pooled_val_mse(arch, &dynamical, &structural, datasets, config.burn_in)?;
    let mut best = (dynamical.clone(), structural.clone(), 0usize);
    let mut stale = 0;
    let mut curve = Vec::new();
    let mut steps_run = 0;

    for step in 0..config.max_steps {
        let mut u = batch_rng.random::<f64>() * total_weight;
        let mut g = datasets.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                g = k;
                break;
            }
            u -= w;
        }
        let pool = &train_trials[g];
        let take = config.batch_size.min(pool.len());
        let trials: Vec<usize> = sample(&mut batch_rng, pool.len(), take).into_iter().map(|k| pool[k]).collect();

        let grad = batch_gradient(
            arch,
            &dynamical,
            &structural[g],
            &datasets[g],
            &trials,
            config.burn_in,
            config.lambda_reg,
        )?;
        if !grad.objective.is_finite() {
            return Err(TrainError::Divergence { step });
        }
        adam_d.step(&mut flat_d, &grad.dynamical);
        adam_s[g].step(&mut flat_s[g], &grad.structural);
        dynamical.assign_flat(&flat_d);
        structural[g].assign_flat(&flat_s[g]);
        steps_run = step + 1;

        let mut val_mse = None;
        if steps_run % config.eval_every == 0 {
            let v = pooled_val_mse(arch, &dynamical, &structural, datasets, config.burn_in)?;
            if !v.is_finite() {
                return Err(TrainError::Divergence { step });
            }
            val_mse = Some(v);
            if v < best_val {
                best_val = v;
                best = (dynamical.clone(), structural.clone(), steps_run);
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let record = LogRecord {
            step,
            graph_id: datasets[g].pgm_id,
            objective: grad.objective,
            val_mse,
        };
        on_record(&record);
        curve.push(record);
        if stale >= config.patience && config.patience > 0 {
            break;
        }
    }

    let (dynamical, structural, best_step) = best;
    let metrics = ensemble_metrics(arch, &dynamical, &structural, datasets, config.burn_in)?;
    Ok(TrainedEnsemble {
        arch: arch.clone(),
        dynamical,
        structural,
        pgm_ids: datasets.iter().map(|d| d.pgm_id).collect(),
        metrics,
        curve,
        best_step,
        steps_run,
        seconds: started.elapsed().as_secs_f64(),
    })
}

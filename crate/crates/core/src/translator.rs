//! Graph translators: regressions between GNN structural parameters and
//! precision-matrix entries, in both directions.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{Split, TraceDataset};
use crate::diffnn::{init_params, meta_terms, mmlp_forward, mmlp_forward_tape, InitScheme, MmlpParams, MmlpSpec, Tape};
use crate::gnn::{pairs, Architecture, Connectivity, DynamicalParams, GnnError, GnnModel, StructuralParams};
use crate::pgm::GaussianPgm;
use crate::rng;
use crate::train::{predict_trials, Adam, FitAccumulator, FitMetrics, TrainError};

#[derive(Debug, Error, PartialEq)]
pub enum TranslatorError {
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{what} {value} outside the training range [{min}, {max}] widened by 20%")]
    Extrapolation { what: &'static str, value: f64, min: f64, max: f64 },
    #[error("missing {0} translator")]
    MissingRegressor(&'static str),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `v_i → A_ii`
    VertexForward,
    /// `A_ii → v_i`
    VertexInverse,
    /// `e_ij → A_ij`
    EdgeForward,
    /// `A_ij → e_ij`
    EdgeInverse,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::VertexForward,
        Direction::VertexInverse,
        Direction::EdgeForward,
        Direction::EdgeInverse,
    ];

    pub fn is_vertex(self) -> bool {
        matches!(self, Direction::VertexForward | Direction::VertexInverse)
    }

    pub fn is_forward(self) -> bool {
        matches!(self, Direction::VertexForward | Direction::EdgeForward)
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::VertexForward => "vertex_forward",
            Direction::VertexInverse => "vertex_inverse",
            Direction::EdgeForward => "edge_forward",
            Direction::EdgeInverse => "edge_inverse",
        }
    }
}

/// Graph-level partition plus the fraction of vertices or edges sampled
/// from each training graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub fraction: f64,
}

impl TranslatorSplit {
    /// Seeded shuffle of `0..graphs` into sets of the given sizes.
    pub fn assign(graphs: usize, sizes: (usize, usize, usize), fraction: f64, seed: u64) -> Result<Self, TranslatorError> {
        if sizes.0 + sizes.1 + sizes.2 != graphs {
            return Err(TranslatorError::InvalidSplit(format!(
                "sizes {sizes:?} do not cover {graphs} graphs"
            )));
        }
        let mut order: Vec<usize> = (0..graphs).collect();
        order.shuffle(&mut rng::rng(seed));
        let split = Self {
            train: order[..sizes.0].to_vec(),
            val: order[sizes.0..sizes.0 + sizes.1].to_vec(),
            test: order[sizes.0 + sizes.1..].to_vec(),
            fraction,
        };
        split.validate(graphs)?;
        Ok(split)
    }

    pub fn validate(&self, graphs: usize) -> Result<(), TranslatorError> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(TranslatorError::InvalidSplit("fraction must lie in (0, 1]".into()));
        }
        let mut all: Vec<usize> = self.train.iter().chain(&self.val).chain(&self.test).copied().collect();
        all.sort_unstable();
        if all != (0..graphs).collect::<Vec<_>>() {
            return Err(TranslatorError::InvalidSplit("sets must be disjoint and cover every graph".into()));
        }
        if self.train.is_empty() {
            return Err(TranslatorError::InvalidSplit("no training graphs".into()));
        }
        Ok(())
    }
}

/// A trained graph with its generating model. Translator fitting takes
/// these only for training and validation graphs.
#[derive(Debug, Clone, Copy)]
pub struct GraphSample<'a> {
    pub structural: &'a StructuralParams,
    pub pgm: &'a GaussianPgm,
}

/// `(parameter vector, attribute)` pairs of one graph.
pub fn graph_pairs(sample: &GraphSample, vertex: bool) -> Vec<(Vec<f64>, f64)> {
    let a = sample.pgm.precision();
    if vertex {
        (0..sample.pgm.n())
            .map(|i| (sample.structural.vertex.row(i).to_vec(), a[(i, i)]))
            .collect()
    } else {
        pairs(sample.pgm.n())
            .into_iter()
            .enumerate()
            .filter(|&(k, _)| k < sample.structural.edge.nrows())
            .map(|(k, (i, j))| (sample.structural.edge.row(k).to_vec(), a[(i, j)]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            learning_rate: 3e-3,
            max_epochs: 3000,
            eval_every: 10,
            patience: 30,
        }
    }
}

/// MLP on z-scored inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub spec: MmlpSpec,
    pub params: MmlpParams,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn moments(rows: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = rows.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let std = rows
        .std_axis(Axis(0), 0.0)
        .iter()
        .map(|&s| if s > 1e-12 { s } else { 1.0 })
        .collect();
    (mean, std)
}

fn standardize(rows: &Array2<f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
    let mut out = rows.clone();
    for mut r in out.outer_iter_mut() {
        for (k, v) in r.iter_mut().enumerate() {
            *v = (*v - mean[k]) / std[k];
        }
    }
    out
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, TranslatorError> {
        if x.len() != self.spec.input_dim {
            return Err(TranslatorError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let z: Vec<f64> = x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| (v - m) / s).collect();
        let out = mmlp_forward(&z, &[], &self.params, &self.spec).expect("checked dims");
        Ok(out.iter().zip(&self.y_mean).zip(&self.y_std).map(|((v, m), s)| v * s + m).collect())
    }

    fn sse(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        x.outer_iter()
            .zip(y.outer_iter())
            .map(|(xr, yr)| {
                let p = self.predict(xr.as_slice().expect("row-major")).expect("dims");
                p.iter().zip(yr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }

    /// Full-batch fit with early stopping on `(x_val, y_val)` when given.
    pub fn fit(
        x: &Array2<f64>,
        y: &Array2<f64>,
        validation: Option<(&Array2<f64>, &Array2<f64>)>,
        config: &RegressorConfig,
        seed: u64,
    ) -> Result<Self, TranslatorError> {
        if x.nrows() == 0 {
            return Err(TranslatorError::EmptyTrainingSet);
        }
        let (x_mean, x_std) = moments(x);
        let (y_mean, y_std) = moments(y);
        let xs = standardize(x, &x_mean, &x_std);
        let ys = standardize(y, &y_mean, &y_std);
        let spec = MmlpSpec::new(x.ncols(), 0, &config.hidden, y.ncols());
        let mut model = Self {
            params: init_params(&spec, InitScheme::default(), seed),
            spec,
            x_mean,
            x_std,
            y_mean,
            y_std,
        };
        let mut flat = Vec::new();
        model.params.flatten_into(&mut flat);
        let mut adam = Adam::new(flat.len(), config.learning_rate);
        let score = |m: &Regressor| match validation {
            Some((xv, yv)) if xv.nrows() > 0 => m.sse(xv, yv),
            _ => m.sse(x, y),
        };
        let mut best = (score(&model), model.params.clone());
        let mut stale = 0;
        let scale = 1.0 / x.nrows() as f64;
        for epoch in 0..config.max_epochs {
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let xv = tape.leaf(xs.clone());
            let zeta = tape.leaf(Array2::zeros((xs.nrows(), 0)));
            let meta = meta_terms(&mut tape, &vars, &model.spec, zeta);
            let out = mmlp_forward_tape(&mut tape, &vars, &model.spec, xv, &meta);
            let yv = tape.leaf(ys.clone());
            let d = tape.sub(out, yv);
            let sq = tape.square(d);
            let sum = tape.sum(sq);
            let loss = tape.scale(sum, scale);
            let grads = tape.backward(loss).expect("scalar");
            let mut g = Vec::with_capacity(flat.len());
            vars.flatten_grad_into(&tape, &grads, &mut g);
            adam.step(&mut flat, &g);
            model.params.assign_flat(&flat);
            if (epoch + 1) % config.eval_every == 0 {
                let s = score(&model);
                if s < best.0 {
                    best = (s, model.params.clone());
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
            }
        }
        model.params = best.1;
        Ok(model)
    }
}

fn stack(pairs: &[(Vec<f64>, f64)], forward: bool) -> (Array2<f64>, Array2<f64>) {
    let dim = pairs.first().map_or(0, |p| p.0.len());
    let params = Array2::from_shape_fn((pairs.len(), dim), |(r, c)| pairs[r].0[c]);
    let attrs = Array2::from_shape_fn((pairs.len(), 1), |(r, _)| pairs[r].1);
    if forward {
        (params, attrs)
    } else {
        (attrs, params)
    }
}

/// Fits one direction on a sampled `fraction` of the training graphs'
/// vertices or edges; validation graphs only drive early stopping.
pub fn fit_translator(
    train: &[GraphSample],
    val: &[GraphSample],
    direction: Direction,
    fraction: f64,
    config: &RegressorConfig,
    seed: u64,
) -> Result<Regressor, TranslatorError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TranslatorError::InvalidSplit("fraction must lie in (0, 1]".into()));
    }
    let vertex = direction.is_vertex();
    let mut sampler = rng::rng(rng::substream(seed, direction.name()));
    let mut chosen = Vec::new();
    for g in train {
        let mut p = graph_pairs(g, vertex);
        p.shuffle(&mut sampler);
        let keep = ((p.len() as f64) * fraction).round().max(1.0) as usize;
        chosen.extend(p.into_iter().take(keep));
    }
    if chosen.is_empty() || chosen[0].0.is_empty() {
        return Err(TranslatorError::EmptyTrainingSet);
    }
    let val_pairs: Vec<_> = val.iter().flat_map(|g| graph_pairs(g, vertex)).collect();
    let (x, y) = stack(&chosen, direction.is_forward());
    let validation = (!val_pairs.is_empty()).then(|| stack(&val_pairs, direction.is_forward()));
    Regressor::fit(
        &x,
        &y,
        validation.as_ref().map(|(a, b)| (a, b)),
        config,
        rng::substream(seed, &format!("{}-init", direction.name())),
    )
}

/// R² of a regressor over the pairs of the given graphs (pooled over outputs).
pub fn regressor_r2(reg: &Regressor, graphs: &[GraphSample], direction: Direction) -> Result<FitMetrics, TranslatorError> {
    let pairs: Vec<_> = graphs.iter().flat_map(|g| graph_pairs(g, direction.is_vertex())).collect();
    let (x, y) = stack(&pairs, direction.is_forward());
    // R² per output column, then pooled as 1 − Σ SSE / Σ SS_tot.
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut count = 0;
    for c in 0..y.ncols() {
        let mut acc = FitAccumulator::default();
        for (xr, yr) in x.outer_iter().zip(y.outer_iter()) {
            let p = reg.predict(&xr.to_vec())?;
            acc.push(p[c], yr[c]);
        }
        sse += acc.sse;
        sst += acc.sse / (1.0 - acc.r2());
        count += acc.count;
    }
    Ok(FitMetrics {
        mse: sse / count as f64,
        r2: 1.0 - sse / sst,
        points: count,
    })
}

/// Maps structural parameters to precision-matrix entries.
pub trait AttributeMap {
    fn diagonal(&self, v: &[f64]) -> Result<f64, TranslatorError>;
    fn off_diagonal(&self, e: &[f64]) -> Result<f64, TranslatorError>;
}

/// Returns the first parameter component unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl AttributeMap for IdentityMap {
    fn diagonal(&self, v: &[f64]) -> Result<f64, TranslatorError> {
        v.first().copied().ok_or(TranslatorError::DimensionMismatch { expected: 1, got: 0 })
    }

    fn off_diagonal(&self, e: &[f64]) -> Result<f64, TranslatorError> {
        e.first().copied().ok_or(TranslatorError::DimensionMismatch { expected: 1, got: 0 })
    }
}

/// The four regressors plus the attribute ranges seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTranslator {
    pub vertex_forward: Option<Regressor>,
    pub vertex_inverse: Option<Regressor>,
    pub edge_forward: Option<Regressor>,
    pub edge_inverse: Option<Regressor>,
    pub diagonal_range: (f64, f64),
    pub off_diagonal_range: (f64, f64),
}

impl GraphTranslator {
    pub fn fit(
        train: &[GraphSample],
        val: &[GraphSample],
        fraction: f64,
        config: &RegressorConfig,
        seed: u64,
    ) -> Result<Self, TranslatorError> {
        let range = |vertex: bool| {
            train
                .iter()
                .flat_map(|g| graph_pairs(g, vertex))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, a)| (lo.min(a), hi.max(a)))
        };
        let has = |vertex: bool| train.iter().any(|g| graph_pairs(g, vertex).first().is_some_and(|p| !p.0.is_empty()));
        let fit = |d: Direction| -> Result<Option<Regressor>, TranslatorError> {
            if has(d.is_vertex()) {
                fit_translator(train, val, d, fraction, config, seed).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            vertex_forward: fit(Direction::VertexForward)?,
            vertex_inverse: fit(Direction::VertexInverse)?,
            edge_forward: fit(Direction::EdgeForward)?,
            edge_inverse: fit(Direction::EdgeInverse)?,
            diagonal_range: range(true),
            off_diagonal_range: range(false),
        })
    }

    pub fn regressor(&self, d: Direction) -> Option<&Regressor> {
        match d {
            Direction::VertexForward => self.vertex_forward.as_ref(),
            Direction::VertexInverse => self.vertex_inverse.as_ref(),
            Direction::EdgeForward => self.edge_forward.as_ref(),
            Direction::EdgeInverse => self.edge_inverse.as_ref(),
        }
    }
}

impl AttributeMap for GraphTranslator {
    fn diagonal(&self, v: &[f64]) -> Result<f64, TranslatorError> {
        let r = self.vertex_forward.as_ref().ok_or(TranslatorError::MissingRegressor("vertex forward"))?;
        Ok(r.predict(v)?[0])
    }

    fn off_diagonal(&self, e: &[f64]) -> Result<f64, TranslatorError> {
        let r = self.edge_forward.as_ref().ok_or(TranslatorError::MissingRegressor("edge forward"))?;
        Ok(r.predict(e)?[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredPrecision {
    /// Translated entries; `raw[(i, j)]` comes from `e_ij`.
    pub raw: Array2<f64>,
    /// `(raw + rawᵀ) / 2`
    pub symmetrized: Array2<f64>,
    /// `|symmetrized_ij| > threshold` off the diagonal.
    pub adjacency: Array2<bool>,
    pub threshold: f64,
}

impl RecoveredPrecision {
    pub fn diagonal(&self) -> Array1<f64> {
        self.raw.diag().to_owned()
    }
}

pub fn recover_precision_matrix(
    structural: &StructuralParams,
    map: &dyn AttributeMap,
    threshold: f64,
) -> Result<RecoveredPrecision, TranslatorError> {
    let n = structural.n();
    let mut raw = Array2::zeros((n, n));
    for i in 0..n {
        raw[(i, i)] = map.diagonal(&structural.vertex.row(i).to_vec())?;
    }
    if structural.edge.nrows() == n * n.saturating_sub(1) {
        for (k, (i, j)) in pairs(n).into_iter().enumerate() {
            raw[(i, j)] = map.off_diagonal(&structural.edge.row(k).to_vec())?;
        }
    }
    let symmetrized = (&raw + &raw.t()) * 0.5;
    let adjacency = Array2::from_shape_fn((n, n), |(i, j)| i != j && symmetrized[(i, j)].abs() > threshold);
    Ok(RecoveredPrecision {
        raw,
        symmetrized,
        adjacency,
        threshold,
    })
}

/// Precision, recall and F1 of recovered support against `|A_ij| > ε`, over unordered pairs.
pub fn support_f1(recovered: &RecoveredPrecision, truth: &GaussianPgm) -> (f64, f64, f64) {
    let n = truth.n();
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (recovered.adjacency[(i, j)], truth.is_edge(i, j)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

fn guard(what: &'static str, value: f64, range: (f64, f64)) -> Result<(), TranslatorError> {
    let pad = 0.2 * (range.1 - range.0);
    if value < range.0 - pad || value > range.1 + pad {
        return Err(TranslatorError::Extrapolation {
            what,
            value,
            min: range.0,
            max: range.1,
        });
    }
    Ok(())
}

/// A GNN for an unseen model: shared dynamics plus translated structure.
/// Colorless architectures need no translator.
pub fn construct_gnn(
    pgm: &GaussianPgm,
    arch: &Architecture,
    dynamical: &DynamicalParams,
    translator: Option<&GraphTranslator>,
    allow_extrapolation: bool,
) -> Result<GnnModel, TranslatorError> {
    let n = pgm.n();
    let a = pgm.precision();
    let mut structural = StructuralParams::zeros(arch, n);
    if arch.d_v > 0 {
        let t = translator.ok_or(TranslatorError::MissingRegressor("vertex inverse"))?;
        let reg = t.vertex_inverse.as_ref().ok_or(TranslatorError::MissingRegressor("vertex inverse"))?;
        for i in 0..n {
            if !allow_extrapolation {
                guard("A_ii", a[(i, i)], t.diagonal_range)?;
            }
            let v = reg.predict(&[a[(i, i)]])?;
            structural.vertex.row_mut(i).assign(&Array1::from(v));
        }
    }
    if arch.d_e > 0 && arch.connectivity == Connectivity::Full {
        let t = translator.ok_or(TranslatorError::MissingRegressor("edge inverse"))?;
        let reg = t.edge_inverse.as_ref().ok_or(TranslatorError::MissingRegressor("edge inverse"))?;
        for (k, (i, j)) in pairs(n).into_iter().enumerate() {
            if !allow_extrapolation {
                guard("A_ij", a[(i, j)], t.off_diagonal_range)?;
            }
            let e = reg.predict(&[a[(i, j)]])?;
            structural.edge.row_mut(k).assign(&Array1::from(e));
        }
    }
    Ok(GnnModel {
        arch: arch.clone(),
        dynamical: dynamical.clone(),
        structural,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub graph_id: usize,
    pub variant: String,
    pub mse: f64,
    pub r2: f64,
}

/// One example trial: inputs, targets and each variant's outputs, `(n, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTrace {
    pub graph_id: usize,
    pub trial: usize,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub outputs: Vec<(String, Array2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    pub rows: Vec<ComparisonRow>,
    pub examples: Vec<ExampleTrace>,
}

impl GeneralizationReport {
    /// Test MSE pooled over graphs for one variant.
    pub fn pooled_mse(&self, variant: &str) -> f64 {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.variant == variant).collect();
        rows.iter().map(|r| r.mse).sum::<f64>() / rows.len() as f64
    }
}

/// Test-split metrics of every model variant on every test graph. Every
/// rollout must stay finite over the full trials.
pub fn evaluate_generalization(
    datasets: &[&TraceDataset],
    variants: &[(String, Vec<GnnModel>)],
    burn_in: usize,
) -> Result<GeneralizationReport, TranslatorError> {
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    for (g, ds) in datasets.iter().enumerate() {
        let trials = ds.trials_in(Split::Test);
        let mut example_outputs = Vec::new();
        for (name, models) in variants {
            let m = &models[g];
            let pred: Array3<f64> = predict_trials(&m.arch, &m.dynamical, &m.structural, ds, &trials)?;
            if pred.iter().any(|v| !v.is_finite()) {
                return Err(TranslatorError::Gnn(GnnError::Divergence { step: 0 }));
            }
            let mut acc = FitAccumulator::default();
            for (b, &r) in trials.iter().enumerate() {
                for i in 0..ds.n() {
                    for t in burn_in..ds.duration() {
                        acc.push(pred[(b, i, t)], ds.targets[(r, i, t)]);
                    }
                }
            }
            rows.push(ComparisonRow {
                graph_id: ds.pgm_id,
                variant: name.clone(),
                mse: acc.mse(),
                r2: acc.r2(),
            });
            if !trials.is_empty() {
                example_outputs.push((name.clone(), pred.index_axis(Axis(0), 0).to_owned()));
            }
        }
        if let Some(&r) = trials.first() {
            examples.push(ExampleTrace {
                graph_id: ds.pgm_id,
                trial: r,
                inputs: ds.inputs.index_axis(Axis(0), r).to_owned(),
                targets: ds.targets.index_axis(Axis(0), r).to_owned(),
                outputs: example_outputs,
            });
        }
    }
    Ok(GeneralizationReport { rows, examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::{random_precision_matrix, PrecisionSpec};

    #[test]
    fn split_assignment_covers_graphs() {
        let s = TranslatorSplit::assign(6, (4, 1, 1), 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4, 1, 1));
        assert!(TranslatorSplit::assign(6, (4, 1, 2), 0.8, 3).is_err());
        let bad = TranslatorSplit { fraction: 0.0, ..s };
        assert!(bad.validate(6).is_err());
    }

    #[test]
    fn identity_stub_returns_raw_parameters() {
        let arch = Architecture {
            d_v: 1,
            d_e: 1,
            ..Architecture::default()
        };
        let st = StructuralParams::init(&arch, 4, 5);
        let rec = recover_precision_matrix(&st, &IdentityMap, 0.0).unwrap();
        for i in 0..4 {
            assert_eq!(rec.raw[(i, i)], st.vertex[(i, 0)]);
        }
        for (k, (i, j)) in pairs(4).into_iter().enumerate() {
            assert_eq!(rec.raw[(i, j)], st.edge[(k, 0)]);
        }
        assert_eq!(rec.symmetrized, rec.symmetrized.t());
        let big = recover_precision_matrix(&st, &IdentityMap, 1e9).unwrap();
        assert!(big.adjacency.iter().all(|&b| !b));
    }

    #[test]
    fn realizable_linear_relation_is_learned() {
        // A = 0.7·v[0] exactly.
        let arch = Architecture {
            d_v: 2,
            ..Architecture::default()
        };
        let mut samples = Vec::new();
        let mut structs = Vec::new();
        let mut pgms = Vec::new();
        for g in 0..4u64 {
            let p = random_precision_matrix(&PrecisionSpec::new(8, 0.6, 0.2), 10 + g).unwrap();
            let mut st = StructuralParams::init(&arch, 8, g);
            for i in 0..8 {
                st.vertex[(i, 0)] = p.precision()[(i, i)] / 0.7;
            }
            structs.push(st);
            pgms.push(p);
        }
        for (st, p) in structs.iter().zip(&pgms) {
            samples.push(GraphSample { structural: st, pgm: p });
        }
        let reg = fit_translator(&samples[..3], &samples[3..], Direction::VertexForward, 1.0, &RegressorConfig::default(), 0).unwrap();
        let m = regressor_r2(&reg, &samples[3..], Direction::VertexForward).unwrap();
        assert!(m.r2 >= 0.98, "r2 {}", m.r2);
    }

    #[test]
    fn colorless_construction_needs_no_translator() {
        let arch = Architecture::default().colorless();
        let pgm = random_precision_matrix(&PrecisionSpec::new(5, 0.6, 0.2), 2).unwrap();
        let d = DynamicalParams::init(&arch, InitScheme::default(), 0);
        let m = construct_gnn(&pgm, &arch, &d, None, false).unwrap();
        assert_eq!(m.structural.vertex.dim(), (5, 0));
        assert_eq!(m.structural.edge.dim(), (20, 0));
        let colored = Architecture::default();
        let d = DynamicalParams::init(&colored, InitScheme::default(), 0);
        assert!(construct_gnn(&pgm, &colored, &d, None, false).is_err());
    }

    #[test]
    fn empty_training_pairs_rejected() {
        assert_eq!(
            fit_translator(&[], &[], Direction::EdgeForward, 0.8, &RegressorConfig::default(), 0).unwrap_err(),
            TranslatorError::EmptyTrainingSet
        );
    }
}

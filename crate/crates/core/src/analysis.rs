//! Principal components, effective dimension and one-dimensional proxies
//! of GNN states, messages and structural parameters.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{message, pairs, update, Architecture, Connectivity, DynamicalParams, GnnError, RolloutResult, StructuralParams};
use crate::pgm::GaussianPgm;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("spectrum is all zero")]
    ZeroSpectrum,
    #[error("negative or non-finite variance {0}")]
    InvalidSpectrum(f64),
    #[error("missing intermediates: {0}")]
    MissingIntermediates(String),
    #[error("proxy range [{lo}, {hi}] leaves the observed range [{min}, {max}] extended by 20%")]
    Extrapolation { lo: f64, hi: f64, min: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, one per row, by descending variance.
    pub components: Array2<f64>,
    pub variances: Vec<f64>,
    pub effective_dimension: f64,
}

impl PcaResult {
    /// Coordinates of `point` along the first `k` components.
    pub fn project(&self, point: ArrayView1<f64>, k: usize) -> Vec<f64> {
        let centered: Vec<f64> = point.iter().zip(&self.mean).map(|(p, m)| p - m).collect();
        (0..k)
            .map(|c| self.components.row(c).iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Inverse of [`project`](Self::project) restricted to the given coordinates.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in coords.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.components.row(c)) {
                *o += w * v;
            }
        }
        out
    }
}

/// `(Σλ)² / Σλ²`.
pub fn effective_dimension(variances: &[f64]) -> Result<f64, AnalysisError> {
    if let Some(&bad) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(AnalysisError::InvalidSpectrum(bad));
    }
    let sum: f64 = variances.iter().sum();
    let sq: f64 = variances.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(AnalysisError::ZeroSpectrum);
    }
    Ok(sum * sum / sq)
}

/// PCA of the rows of `points` via the sample covariance (divisor `N − 1`).
/// Each component's largest-magnitude entry is made positive.
pub fn pca(points: ArrayView2<f64>) -> Result<PcaResult, AnalysisError> {
    let (count, dim) = points.dim();
    if count < 2 {
        return Err(AnalysisError::TooFewPoints { needed: 2, got: count });
    }
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let centered = &points - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (count as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(dim, dim, |i, j| cov[(i, j)]));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Array2::zeros((dim, dim));
    let mut variances = Vec::with_capacity(dim);
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..dim {
            components[(row, c)] = sign * v[c];
        }
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    let effective_dimension = effective_dimension(&variances)?;
    Ok(PcaResult {
        mean: mean.to_vec(),
        components,
        variances,
        effective_dimension,
    })
}

/// At most `cap` rows, chosen without replacement in original order.
pub fn subsample(points: ArrayView2<f64>, cap: usize, seed: u64) -> Array2<f64> {
    let count = points.nrows();
    if count <= cap {
        return points.to_owned();
    }
    let mut idx = sample(&mut rng::rng(seed), count, cap).into_vec();
    idx.sort_unstable();
    points.select(Axis(0), &idx)
}

/// One group's leading direction and the scalar proxies of its points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProxy {
    pub mean: Vec<f64>,
    pub pc1: Vec<f64>,
    pub proxies: Vec<f64>,
}

impl GroupProxy {
    pub fn fit(points: ArrayView2<f64>) -> Result<Self, AnalysisError> {
        let p = pca(points)?;
        let pc1 = p.components.row(0).to_vec();
        let proxies = points.outer_iter().map(|row| p.project(row, 1)[0]).collect();
        Ok(Self {
            mean: p.mean,
            pc1,
            proxies,
        })
    }

    /// `(point − mean)·pc1`.
    pub fn project(&self, point: &[f64]) -> f64 {
        point.iter().zip(&self.mean).zip(&self.pc1).map(|((p, m), c)| (p - m) * c).sum()
    }

    /// `mean + proxy·pc1`.
    pub fn reconstruct(&self, proxy: f64) -> Vec<f64> {
        self.mean.iter().zip(&self.pc1).map(|(m, c)| m + proxy * c).collect()
    }

    pub fn range(&self) -> (f64, f64) {
        self.proxies
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }

    /// Errors when `[lo, hi]` leaves the observed range widened by 20% of its span on each side.
    pub fn check_range(&self, lo: f64, hi: f64) -> Result<(), AnalysisError> {
        let (min, max) = self.range();
        let pad = 0.2 * (max - min);
        if lo < min - pad || hi > max + pad {
            return Err(AnalysisError::Extrapolation { lo, hi, min, max });
        }
        Ok(())
    }
}

/// Rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut e = k;
            while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
                e += 1;
            }
            let avg = (k + e) as f64 / 2.0;
            for &i in &idx[k..=e] {
                r[i] = avg;
            }
            k = e + 1;
        }
        r
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// A cloud's spectrum and its projection on the first two components,
/// with one colour key per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSummary {
    pub pca: PcaResult,
    /// `(pc1, pc2, colour key)`
    pub projection: Vec<[f64; 3]>,
}

fn summarize(points: Array2<f64>, keys: Vec<f64>, cap: usize, seed: u64) -> Result<CloudSummary, AnalysisError> {
    let mut with_key = points;
    with_key.push_column(ndarray::Array1::from(keys).view()).expect("key column");
    let picked = subsample(with_key.view(), cap, seed);
    let dim = picked.ncols() - 1;
    let cloud = picked.slice(s![.., ..dim]);
    let p = pca(cloud)?;
    let k = dim.min(2);
    let projection = picked
        .outer_iter()
        .map(|row| {
            let c = p.project(row.slice(s![..dim]), k);
            [c[0], c.get(1).copied().unwrap_or(0.0), row[dim]]
        })
        .collect();
    Ok(CloudSummary { pca: p, projection })
}

/// One trained graph: its generating model, structure and recorded rollouts.
#[derive(Debug, Clone, Copy)]
pub struct GraphRecord<'a> {
    pub pgm: &'a GaussianPgm,
    pub structural: &'a StructuralParams,
    pub rollouts: &'a [RolloutResult],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    /// Coloured by `A_ii`.
    pub states: CloudSummary,
    /// Coloured by `A_ij`; absent without pairwise messages.
    pub messages: Option<CloudSummary>,
    /// Coloured by `A_ii`; absent without pairwise messages.
    pub aggregated: Option<CloudSummary>,
    /// Coloured by `A_ii`; absent when `D_v = 0`.
    pub vertex_params: Option<CloudSummary>,
    /// Coloured by `A_ij`; absent when `D_e = 0` or without edges.
    pub edge_params: Option<CloudSummary>,
}

/// Pooled rows of a `(group, T, D)` array with one key per group.
fn pool(records: &[(ArrayView2<f64>, f64)], width: usize) -> (Array2<f64>, Vec<f64>) {
    let rows: usize = records.iter().map(|(a, _)| a.nrows()).sum();
    let mut out = Array2::zeros((rows, width));
    let mut keys = Vec::with_capacity(rows);
    let mut k = 0;
    for (a, key) in records {
        out.slice_mut(s![k..k + a.nrows(), ..]).assign(a);
        keys.extend(std::iter::repeat_n(*key, a.nrows()));
        k += a.nrows();
    }
    (out, keys)
}

pub fn manifold_report(
    arch: &Architecture,
    graphs: &[GraphRecord],
    cap: usize,
    seed: u64,
) -> Result<ManifoldReport, AnalysisError> {
    if graphs.iter().all(|g| g.rollouts.is_empty()) {
        return Err(AnalysisError::MissingIntermediates("no rollouts recorded".into()));
    }
    let full = arch.connectivity == Connectivity::Full;
    let mut state_rows = Vec::new();
    let mut msg_rows = Vec::new();
    let mut agg_rows = Vec::new();
    let mut vertex_rows = Vec::new();
    let mut edge_rows = Vec::new();
    for g in graphs {
        let n = g.pgm.n();
        let a = g.pgm.precision();
        let pair_list = pairs(n);
        for r in g.rollouts {
            if r.states.dim().0 != n || (full && r.messages.dim().0 != pair_list.len()) {
                return Err(AnalysisError::MissingIntermediates("rollout does not match its graph".into()));
            }
            for i in 0..n {
                state_rows.push((r.states.index_axis(Axis(0), i), a[(i, i)]));
                agg_rows.push((r.aggregated.index_axis(Axis(0), i), a[(i, i)]));
            }
            if full {
                for (k, &(i, j)) in pair_list.iter().enumerate() {
                    msg_rows.push((r.messages.index_axis(Axis(0), k), a[(i, j)]));
                }
            }
        }
        for i in 0..n {
            vertex_rows.push((g.structural.vertex.slice(s![i..i + 1, ..]), a[(i, i)]));
        }
        if full {
            for (k, &(i, j)) in pair_list.iter().enumerate() {
                edge_rows.push((g.structural.edge.slice(s![k..k + 1, ..]), a[(i, j)]));
            }
        }
    }
    let (states, keys) = pool(&state_rows, arch.d_s);
    let states = summarize(states, keys, cap, rng::substream(seed, "states"))?;
    let cloud = |rows: &[(ArrayView2<f64>, f64)], width: usize, label: &str| -> Result<Option<CloudSummary>, AnalysisError> {
        if rows.is_empty() || width == 0 {
            return Ok(None);
        }
        let (p, k) = pool(rows, width);
        summarize(p, k, cap, rng::substream(seed, label)).map(Some)
    };
    Ok(ManifoldReport {
        states,
        messages: if full { cloud(&msg_rows, arch.d_m, "messages")? } else { None },
        aggregated: if full { cloud(&agg_rows, arch.d_m, "aggregated")? } else { None },
        vertex_params: cloud(&vertex_rows, arch.d_v, "vertex")?,
        edge_params: cloud(&edge_rows, arch.d_e, "edge")?,
    })
}

/// Heat-map samples `(u, v, value)`, `v` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub u_label: String,
    pub v_label: String,
    pub value_label: String,
    pub rows: Vec<[f64; 3]>,
}

impl GridTable {
    pub fn value_at(&self, u_index: usize, v_index: usize, v_count: usize) -> f64 {
        self.rows[u_index * v_count + v_index][2]
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
    }
}

/// Per-vertex and per-edge proxies of one graph's recorded dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyProjection {
    pub states: Vec<GroupProxy>,
    pub aggregated: Vec<GroupProxy>,
    /// In [`pairs`] order; empty without pairwise messages.
    pub messages: Vec<GroupProxy>,
    /// Observed range of the scalar input `x` per vertex.
    pub input_range: Vec<(f64, f64)>,
}

/// Groups states and aggregated messages per vertex and messages per edge.
/// `inputs[r]` is the `(n, T)` input of `rollouts[r]`.
pub fn proxy_projection(rollouts: &[RolloutResult], inputs: &[ArrayView2<f64>]) -> Result<ProxyProjection, AnalysisError> {
    let first = rollouts
        .first()
        .ok_or_else(|| AnalysisError::MissingIntermediates("no rollouts".into()))?;
    let n = first.states.dim().0;
    let group = |get: &dyn Fn(&RolloutResult) -> ArrayView2<f64>| -> Result<GroupProxy, AnalysisError> {
        let views: Vec<ArrayView2<f64>> = rollouts.iter().map(get).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).expect("consistent widths");
        GroupProxy::fit(stacked.view())
    };
    let mut states = Vec::with_capacity(n);
    let mut aggregated = Vec::with_capacity(n);
    for i in 0..n {
        states.push(group(&|r| r.states.index_axis(Axis(0), i))?);
        aggregated.push(group(&|r| r.aggregated.index_axis(Axis(0), i))?);
    }
    let mut messages = Vec::new();
    for k in 0..first.messages.dim().0 {
        messages.push(group(&|r| r.messages.index_axis(Axis(0), k))?);
    }
    let input_range = (0..n)
        .map(|i| {
            inputs.iter().flat_map(|x| x.row(i).to_vec()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        })
        .collect();
    Ok(ProxyProjection {
        states,
        aggregated,
        messages,
        input_range,
    })
}

/// State-change proxy `Δs̃` of vertex `i` over a grid of aggregated-message
/// proxy `m̃` (rows) and scalar input `x` (columns). The current state is
/// held at the vertex's mean state, i.e. state proxy zero.
#[allow(clippy::too_many_arguments)]
pub fn update_grid(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    proxies: &ProxyProjection,
    vertex: usize,
    m_range: (f64, f64),
    x_range: (f64, f64),
    sizes: (usize, usize),
) -> Result<GridTable, AnalysisError> {
    let sp = &proxies.states[vertex];
    let mp = &proxies.aggregated[vertex];
    mp.check_range(m_range.0, m_range.1)?;
    let (xmin, xmax) = proxies.input_range[vertex];
    let pad = 0.2 * (xmax - xmin);
    if x_range.0 < xmin - pad || x_range.1 > xmax + pad {
        return Err(AnalysisError::Extrapolation {
            lo: x_range.0,
            hi: x_range.1,
            min: xmin,
            max: xmax,
        });
    }
    let s = sp.reconstruct(0.0);
    let v = structural.vertex.row(vertex).to_vec();
    let mut rows = Vec::with_capacity(sizes.0 * sizes.1);
    for mt in linspace(m_range.0, m_range.1, sizes.0) {
        let m = mp.reconstruct(mt);
        for x in linspace(x_range.0, x_range.1, sizes.1) {
            let next = update(&s, &[x], &m, &v, dynamical, arch)?.state;
            rows.push([mt, x, sp.project(&next) - sp.project(&s)]);
        }
    }
    Ok(GridTable {
        u_label: "m_proxy".into(),
        v_label: "x".into(),
        value_label: "delta_s_proxy".into(),
        rows,
    })
}

/// Message proxy `m̃_ij` over a grid of target-state proxy `s̃_i` (rows) and
/// source-state proxy `s̃_j` (columns).
#[allow(clippy::too_many_arguments)]
pub fn message_grid(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    proxies: &ProxyProjection,
    edge: (usize, usize),
    si_range: (f64, f64),
    sj_range: (f64, f64),
    sizes: (usize, usize),
) -> Result<GridTable, AnalysisError> {
    let (i, j) = edge;
    let n = proxies.states.len();
    let k = crate::gnn::pair_index(n, i, j);
    let mp = proxies
        .messages
        .get(k)
        .ok_or_else(|| AnalysisError::MissingIntermediates("no pairwise messages recorded".into()))?;
    let (pi, pj) = (&proxies.states[i], &proxies.states[j]);
    pi.check_range(si_range.0, si_range.1)?;
    pj.check_range(sj_range.0, sj_range.1)?;
    let e = structural.edge.row(k).to_vec();
    let mut rows = Vec::with_capacity(sizes.0 * sizes.1);
    for a in linspace(si_range.0, si_range.1, sizes.0) {
        let s_i = pi.reconstruct(a);
        for b in linspace(sj_range.0, sj_range.1, sizes.1) {
            let m = message(&s_i, &pj.reconstruct(b), &e, &dynamical.message, arch)?;
            rows.push([a, b, mp.project(&m)]);
        }
    }
    Ok(GridTable {
        u_label: "s_i_proxy".into(),
        v_label: "s_j_proxy".into(),
        value_label: "m_ij_proxy".into(),
        rows,
    })
}

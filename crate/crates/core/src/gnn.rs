//! Graph neural network with meta-MLP canonical functions.
//!
//! Per step, for every ordered pair `(i, j)` with `i ≠ j` (full
//! connectivity) a message `m_ij = mMLP([s_i; s_j], e_ij)` travels from `j`
//! to `i`. Messages are summed on `i`, and the meta-GRU update
//!
//! ```text
//! z  = σ(mMLP_z([x; m; s], v_i))
//! s' = (1 − z)∘s + z∘tanh(mMLP_s([x; m; s], v_i))
//! ```
//!
//! produces the next state, read out linearly. The reset gate
//! `r = σ(mMLP_r(·))` exists as a parameter set and is reported by
//! [`update`], but the state equation does not consume it.

use std::rc::Rc;

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffnn::{
    init_params, logistic, meta_terms, mmlp_forward, mmlp_forward_tape, DiffError, Gradients, InitScheme,
    MmlpParams, MmlpSpec, MmlpVars, Tape, Var,
};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite state at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Null,
    Full,
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Connectivity::Null => "null",
            Connectivity::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub connectivity: Connectivity,
    pub d_v: usize,
    pub d_e: usize,
    pub d_s: usize,
    pub d_m: usize,
    pub d_x: usize,
    pub d_o: usize,
    pub message_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Full,
            d_v: 2,
            d_e: 2,
            d_s: 8,
            d_m: 8,
            d_x: 1,
            d_o: 1,
            message_hidden: vec![16],
            gate_hidden: vec![16],
        }
    }
}

impl Architecture {
    /// Same architecture without structural parameters.
    pub fn colorless(&self) -> Self {
        Self {
            d_v: 0,
            d_e: 0,
            ..self.clone()
        }
    }

    pub fn with_connectivity(&self, connectivity: Connectivity) -> Self {
        Self {
            connectivity,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.d_s == 0 {
            return Err(GnnError::InvalidArchitecture("d_s must be at least 1".into()));
        }
        if self.connectivity == Connectivity::Full && self.d_m == 0 {
            return Err(GnnError::InvalidArchitecture(
                "d_m must be at least 1 under full connectivity".into(),
            ));
        }
        if self.message_hidden.iter().chain(&self.gate_hidden).any(|&w| w == 0) {
            return Err(GnnError::InvalidArchitecture("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn message_spec(&self) -> MmlpSpec {
        MmlpSpec::new(2 * self.d_s, self.d_e, &self.message_hidden, self.d_m)
    }

    /// Shared by the three gate networks; input is `[x; m; s]`.
    pub fn gate_spec(&self) -> MmlpSpec {
        MmlpSpec::new(self.d_x + self.d_m + self.d_s, self.d_v, &self.gate_hidden, self.d_s)
    }

    /// Number of edge parameter vectors for an `n`-vertex graph.
    pub fn edge_count(&self, n: usize) -> usize {
        match self.connectivity {
            Connectivity::Full => n * n.saturating_sub(1),
            Connectivity::Null => 0,
        }
    }
}

/// Ordered pairs `(i, j)`, `i ≠ j`, in lexicographic order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Position of `(i, j)` in [`pairs`].
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicalParams {
    pub message: MmlpParams,
    pub gate_z: MmlpParams,
    pub gate_r: MmlpParams,
    pub gate_s: MmlpParams,
    pub readout_w: Array2<f64>,
    pub readout_b: Array1<f64>,
}

impl DynamicalParams {
    pub fn init(arch: &Architecture, scheme: InitScheme, seed: u64) -> Self {
        let gate = arch.gate_spec();
        let readout = init_params(&MmlpSpec::new(arch.d_s, 0, &[], arch.d_o), scheme, rng::substream(seed, "readout"));
        let layer = readout.layers.into_iter().next().expect("one readout layer");
        Self {
            message: init_params(&arch.message_spec(), scheme, rng::substream(seed, "message")),
            gate_z: init_params(&gate, scheme, rng::substream(seed, "gate_z")),
            gate_r: init_params(&gate, scheme, rng::substream(seed, "gate_r")),
            gate_s: init_params(&gate, scheme, rng::substream(seed, "gate_s")),
            readout_w: layer.weight,
            readout_b: layer.bias,
        }
    }

    pub fn check(&self, arch: &Architecture) -> Result<(), GnnError> {
        self.message.check(&arch.message_spec())?;
        let gate = arch.gate_spec();
        self.gate_z.check(&gate)?;
        self.gate_r.check(&gate)?;
        self.gate_s.check(&gate)?;
        if self.readout_w.dim() != (arch.d_o, arch.d_s) || self.readout_b.len() != arch.d_o {
            return Err(GnnError::DimensionMismatch {
                context: "readout",
                expected: arch.d_o * arch.d_s,
                got: self.readout_w.len(),
            });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.message.param_count()
            + self.gate_z.param_count()
            + self.gate_r.param_count()
            + self.gate_s.param_count()
            + self.readout_w.len()
            + self.readout_b.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.message.flatten_into(&mut out);
        self.gate_z.flatten_into(&mut out);
        self.gate_r.flatten_into(&mut out);
        self.gate_s.flatten_into(&mut out);
        out.extend(self.readout_w.iter());
        out.extend(self.readout_b.iter());
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat dynamical parameter length");
        let mut k = self.message.assign_flat(flat);
        k += self.gate_z.assign_flat(&flat[k..]);
        k += self.gate_r.assign_flat(&flat[k..]);
        k += self.gate_s.assign_flat(&flat[k..]);
        for w in self.readout_w.iter_mut().chain(self.readout_b.iter_mut()) {
            *w = flat[k];
            k += 1;
        }
    }

    pub fn register(&self, tape: &mut Tape) -> DynamicalVars {
        DynamicalVars {
            message: self.message.register(tape),
            gate_z: self.gate_z.register(tape),
            gate_r: self.gate_r.register(tape),
            gate_s: self.gate_s.register(tape),
            readout_w: tape.leaf(self.readout_w.clone()),
            readout_b: tape.leaf(self.readout_b.clone().insert_axis(Axis(0))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicalVars {
    pub message: MmlpVars,
    pub gate_z: MmlpVars,
    pub gate_r: MmlpVars,
    pub gate_s: MmlpVars,
    pub readout_w: Var,
    pub readout_b: Var,
}

impl DynamicalVars {
    /// Gradient in the layout of [`DynamicalParams::flatten`].
    pub fn flatten_grad(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        self.message.flatten_grad_into(tape, grads, &mut out);
        self.gate_z.flatten_grad_into(tape, grads, &mut out);
        self.gate_r.flatten_grad_into(tape, grads, &mut out);
        self.gate_s.flatten_grad_into(tape, grads, &mut out);
        out.extend(grads.wrt(tape, self.readout_w).iter());
        out.extend(grads.wrt(tape, self.readout_b).iter());
        out
    }
}

/// Per-graph vertex parameters `v_i` (rows) and edge parameters `e_ij`
/// (rows in [`pairs`] order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub vertex: Array2<f64>,
    pub edge: Array2<f64>,
}

impl StructuralParams {
    pub fn zeros(arch: &Architecture, n: usize) -> Self {
        Self {
            vertex: Array2::zeros((n, arch.d_v)),
            edge: Array2::zeros((arch.edge_count(n), arch.d_e)),
        }
    }

    /// Entries drawn from `Normal(0, 0.1²)`.
    pub fn init(arch: &Architecture, n: usize, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut draw = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng));
        let vertex = draw((n, arch.d_v));
        let edge = draw((arch.edge_count(n), arch.d_e));
        Self { vertex, edge }
    }

    pub fn n(&self) -> usize {
        self.vertex.nrows()
    }

    pub fn check(&self, arch: &Architecture, n: usize) -> Result<(), GnnError> {
        if self.vertex.dim() != (n, arch.d_v) {
            return Err(GnnError::DimensionMismatch {
                context: "vertex parameters",
                expected: n * arch.d_v,
                got: self.vertex.len(),
            });
        }
        if self.edge.dim() != (arch.edge_count(n), arch.d_e) {
            return Err(GnnError::DimensionMismatch {
                context: "edge parameters",
                expected: arch.edge_count(n) * arch.d_e,
                got: self.edge.len(),
            });
        }
        if self.vertex.iter().chain(self.edge.iter()).any(|v| !v.is_finite()) {
            return Err(GnnError::InvalidArchitecture("non-finite structural parameter".into()));
        }
        Ok(())
    }

    /// `Σ‖v_i‖² + Σ‖e_ij‖²`.
    pub fn squared_norm(&self) -> f64 {
        self.vertex.iter().chain(self.edge.iter()).map(|v| v * v).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.vertex.iter().chain(self.edge.iter()).copied().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.vertex.len() + self.edge.len(), "flat structural parameter length");
        for (w, v) in self.vertex.iter_mut().chain(self.edge.iter_mut()).zip(flat) {
            *w = *v;
        }
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<(), GnnError> {
    if expected == got {
        Ok(())
    } else {
        Err(GnnError::DimensionMismatch { context, expected, got })
    }
}

/// Message from `j` to `i`.
pub fn message(s_i: &[f64], s_j: &[f64], e_ij: &[f64], theta: &MmlpParams, arch: &Architecture) -> Result<Vec<f64>, GnnError> {
    check_len("message source state", arch.d_s, s_j.len())?;
    check_len("message target state", arch.d_s, s_i.len())?;
    let input: Vec<f64> = s_i.iter().chain(s_j).copied().collect();
    Ok(mmlp_forward(&input, e_ij, theta, &arch.message_spec())?)
}

/// Elementwise sum; the empty set gives the zero vector.
pub fn aggregate(messages: &[Vec<f64>], d_m: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_m];
    for m in messages {
        for (o, v) in out.iter_mut().zip(m) {
            *o += v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub state: Vec<f64>,
}

pub fn update(
    s: &[f64],
    x: &[f64],
    m: &[f64],
    v: &[f64],
    theta: &DynamicalParams,
    arch: &Architecture,
) -> Result<UpdateOutput, GnnError> {
    check_len("update state", arch.d_s, s.len())?;
    check_len("update input", arch.d_x, x.len())?;
    check_len("update message", arch.d_m, m.len())?;
    let spec = arch.gate_spec();
    let input: Vec<f64> = x.iter().chain(m).chain(s).copied().collect();
    let z: Vec<f64> = mmlp_forward(&input, v, &theta.gate_z, &spec)?.into_iter().map(logistic).collect();
    let r: Vec<f64> = mmlp_forward(&input, v, &theta.gate_r, &spec)?.into_iter().map(logistic).collect();
    let cand = mmlp_forward(&input, v, &theta.gate_s, &spec)?;
    let state = s
        .iter()
        .zip(&z)
        .zip(&cand)
        .map(|((s, z), c)| (1.0 - z) * s + z * c.tanh())
        .collect();
    Ok(UpdateOutput { z, r, state })
}

pub fn readout(s: &[f64], theta: &DynamicalParams) -> Vec<f64> {
    theta
        .readout_w
        .outer_iter()
        .zip(&theta.readout_b)
        .map(|(row, b)| row.iter().zip(s).map(|(w, s)| w * s).sum::<f64>() + b)
        .collect()
}

/// Full record of one trajectory. `states[.., t, ..]` is `s^{t+1}`, the
/// state after step `t`; messages and aggregates at step `t` are computed
/// from `s^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `(n, T, D_s)`
    pub states: Array3<f64>,
    /// `(pairs, T, D_m)`, pairs in [`pairs`] order; zero pairs under null connectivity.
    pub messages: Array3<f64>,
    /// `(n, T, D_m)`
    pub aggregated: Array3<f64>,
    /// `(n, T, D_o)`
    pub outputs: Array3<f64>,
}

/// Tape handles for one graph's structural parameters.
#[derive(Debug, Clone, Copy)]
pub struct StructuralVars {
    pub vertex: Var,
    pub edge: Var,
}

impl StructuralParams {
    pub fn register(&self, tape: &mut Tape) -> StructuralVars {
        StructuralVars {
            vertex: tape.leaf(self.vertex.clone()),
            edge: tape.leaf(self.edge.clone()),
        }
    }
}

/// Per-step nodes of a batched rollout. Rows are `trial·n + vertex` for
/// vertex quantities and `trial·P + pair` for messages.
#[derive(Debug)]
pub struct BatchForward {
    pub outputs: Vec<Var>,
    pub states: Vec<Var>,
    pub aggregated: Vec<Var>,
    /// Empty unless per-pair messages were requested.
    pub messages: Vec<Var>,
}

/// Rolls out `inputs.len()` trials of one graph on the tape.
///
/// Each input is `(n, T, D_x)`. When `record_messages` is false the last
/// (affine) message layer is applied after summation, which saves a factor
/// of `n − 1` on that layer without changing the result.
pub fn forward_batch(
    tape: &mut Tape,
    arch: &Architecture,
    dynamical: &DynamicalVars,
    structural: StructuralVars,
    inputs: &[ArrayView3<f64>],
    record_messages: bool,
) -> Result<BatchForward, GnnError> {
    let n = tape.value(structural.vertex).nrows();
    let batch = inputs.len();
    let duration = inputs.first().map_or(0, |x| x.dim().1);
    for x in inputs {
        if x.dim() != (n, duration, arch.d_x) {
            return Err(GnnError::DimensionMismatch {
                context: "rollout inputs",
                expected: n * duration * arch.d_x,
                got: x.len(),
            });
        }
    }
    let rows = batch * n;
    let full = arch.connectivity == Connectivity::Full && n > 1;
    let pair_list = pairs(n);
    let p = pair_list.len();

    let vert_rows: Rc<[usize]> = (0..rows).map(|r| r % n).collect();
    let vg = tape.gather(structural.vertex, vert_rows);
    let gate = arch.gate_spec();
    let meta_z = meta_terms(tape, &dynamical.gate_z, &gate, vg);
    let meta_s = meta_terms(tape, &dynamical.gate_s, &gate, vg);

    let msg_spec = arch.message_spec();
    let msg_layers = &dynamical.message.layers;
    let last = msg_layers.len() - 1;
    let (src_i, src_j, msg_meta, agg_meta_last) = if full {
        let src_i: Rc<[usize]> = (0..batch).flat_map(|b| pair_list.iter().map(move |&(i, _)| b * n + i)).collect();
        let src_j: Rc<[usize]> = (0..batch).flat_map(|b| pair_list.iter().map(move |&(_, j)| b * n + j)).collect();
        let edge_rows: Rc<[usize]> = (0..batch * p).map(|k| k % p).collect();
        let eg = tape.gather(structural.edge, edge_rows);
        let meta = meta_terms(tape, &dynamical.message, &msg_spec, eg);
        let agg_last = (!record_messages && last > 0).then(|| tape.scatter_add(meta[last], src_i.clone(), rows));
        (src_i, src_j, meta, agg_last)
    } else {
        (Rc::from(vec![]), Rc::from(vec![]), vec![], None)
    };
    let zero_agg = (!full).then(|| tape.leaf(Array2::zeros((rows, arch.d_m))));

    let mut state = tape.leaf(Array2::zeros((rows, arch.d_s)));
    let mut out = BatchForward {
        outputs: Vec::with_capacity(duration),
        states: Vec::with_capacity(duration),
        aggregated: Vec::with_capacity(duration),
        messages: Vec::new(),
    };
    let ds = arch.d_s;
    for t in 0..duration {
        let mut xt = Array2::zeros((rows, arch.d_x));
        for (b, x) in inputs.iter().enumerate() {
            xt.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&x.slice(s![.., t, ..]));
        }
        let xt = tape.leaf(xt);

        let agg = if let Some(z) = zero_agg {
            z
        } else {
            let (w0, _) = msg_layers[0];
            let a = tape.linear(state, w0, 0..ds, None);
            let bm = tape.linear(state, w0, ds..2 * ds, None);
            let ga = tape.gather(a, src_i.clone());
            let gb = tape.gather(bm, src_j.clone());
            let sum = tape.add(ga, gb);
            let mut act = tape.add(sum, msg_meta[0]);
            if last == 0 {
                if record_messages {
                    out.messages.push(act);
                }
                tape.scatter_add(act, src_i.clone(), rows)
            } else {
                let dims = msg_spec.layer_dims();
                act = tape.elu(act);
                for (l, &(w, _)) in msg_layers.iter().enumerate().take(last).skip(1) {
                    let lin = tape.linear(act, w, 0..dims[l].0, None);
                    let pre = tape.add(lin, msg_meta[l]);
                    act = tape.elu(pre);
                }
                let (wl, _) = msg_layers[last];
                let width = dims[last].0;
                if let Some(meta_sum) = agg_meta_last {
                    let pooled = tape.scatter_add(act, src_i.clone(), rows);
                    let lin = tape.linear(pooled, wl, 0..width, None);
                    tape.add(lin, meta_sum)
                } else {
                    let lin = tape.linear(act, wl, 0..width, None);
                    let msg = tape.add(lin, msg_meta[last]);
                    out.messages.push(msg);
                    tape.scatter_add(msg, src_i.clone(), rows)
                }
            }
        };

        let u = tape.hcat(&[xt, agg, state]);
        let zpre = mmlp_forward_tape(tape, &dynamical.gate_z, &gate, u, &meta_z);
        let z = tape.sigmoid(zpre);
        let cpre = mmlp_forward_tape(tape, &dynamical.gate_s, &gate, u, &meta_s);
        let cand = tape.tanh(cpre);
        let diff = tape.sub(cand, state);
        let step = tape.mul(z, diff);
        state = tape.add(state, step);
        if tape.value(state).iter().any(|v| !v.is_finite()) {
            return Err(GnnError::Divergence { step: t });
        }
        let o = tape.linear(state, dynamical.readout_w, 0..ds, Some(dynamical.readout_b));
        out.outputs.push(o);
        out.states.push(state);
        out.aggregated.push(agg);
    }
    Ok(out)
}

fn collect(tape: &Tape, nodes: &[Var], groups: usize, width: usize) -> Array3<f64> {
    let mut out = Array3::zeros((groups, nodes.len(), width));
    for (t, &v) in nodes.iter().enumerate() {
        out.slice_mut(s![.., t, ..]).assign(tape.value(v));
    }
    out
}

/// Single-trial rollout from `s⁰ = 0`, recording every intermediate.
/// `inputs` is `(n, T, D_x)`.
pub fn rollout(
    arch: &Architecture,
    dynamical: &DynamicalParams,
    structural: &StructuralParams,
    inputs: ArrayView3<f64>,
) -> Result<RolloutResult, GnnError> {
    arch.validate()?;
    dynamical.check(arch)?;
    let n = inputs.dim().0;
    structural.check(arch, n)?;
    let mut tape = Tape::new();
    let dv = dynamical.register(&mut tape);
    let sv = structural.register(&mut tape);
    let fwd = forward_batch(&mut tape, arch, &dv, sv, &[inputs], true)?;
    let p = arch.edge_count(n);
    let messages = if fwd.messages.is_empty() {
        Array3::zeros((p, inputs.dim().1, arch.d_m))
    } else {
        collect(&tape, &fwd.messages, p, arch.d_m)
    };
    Ok(RolloutResult {
        states: collect(&tape, &fwd.states, n, arch.d_s),
        messages,
        aggregated: collect(&tape, &fwd.aggregated, n, arch.d_m),
        outputs: collect(&tape, &fwd.outputs, n, arch.d_o),
    })
}

/// A GNN for one graph: shared dynamics plus that graph's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub arch: Architecture,
    pub dynamical: DynamicalParams,
    pub structural: StructuralParams,
}

impl GnnModel {
    pub fn rollout(&self, inputs: ArrayView3<f64>) -> Result<RolloutResult, GnnError> {
        rollout(&self.arch, &self.dynamical, &self.structural, inputs)
    }

    /// Outputs `(trials, n, T)` for scalar-input, scalar-output models;
    /// `inputs` is `(trials, n, T)`.
    pub fn predict(&self, inputs: ArrayView3<f64>) -> Result<Array3<f64>, GnnError> {
        if self.arch.d_x != 1 || self.arch.d_o != 1 {
            return Err(GnnError::InvalidArchitecture("predict needs d_x = d_o = 1".into()));
        }
        let (trials, n, t) = inputs.dim();
        let mut out = Array3::zeros((trials, n, t));
        for r in 0..trials {
            let x = inputs.slice(s![r, .., ..]).insert_axis(Axis(2));
            let res = self.rollout(x)?;
            out.slice_mut(s![r, .., ..]).assign(&res.outputs.index_axis(Axis(2), 0));
        }
        Ok(out)
    }
}

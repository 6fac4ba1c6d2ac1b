//! Reverse-mode differentiation over matrix-valued nodes, and meta-MLPs.
//!
//! Every node on a [`Tape`] holds a 2-D array whose rows are independent
//! samples (trials, vertices or edges). Operations are recorded in
//! evaluation order and [`Tape::backward`] walks them in reverse.
//!
//! A meta-MLP is an MLP whose every layer sees a fixed meta vector `ζ`
//! appended to its input: `x^{l+1} = f^l(W^l [x^l; ζ] + b^l)`. Hidden layers
//! use ELU, the last layer is the identity.

use std::ops::Range;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use ndarray::linalg::general_mat_mul;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("backward requires a scalar output, got shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

pub fn elu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

pub fn elu_derivative(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        z.exp()
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x · W[:, cols]ᵀ + bias`
    Linear {
        x: Var,
        w: Var,
        cols: Range<usize>,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    HCat(Vec<Var>),
    Gather { x: Var, rows: Rc<[usize]> },
    ScatterAdd { x: Var, rows: Rc<[usize]> },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn map(a: &Array2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    a.mapv(f)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Input, parameter or constant.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Row-vector leaf from a slice.
    pub fn row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.leaf(a)
    }

    /// `x · W[:, cols]ᵀ (+ bias)`, where `bias` is a `1×out` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, cols: Range<usize>, bias: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ncols(), cols.len(), "linear: input width vs weight columns");
        let mut out = Array2::zeros((xv.nrows(), wv.nrows()));
        if !cols.is_empty() {
            general_mat_mul(1.0, xv, &wv.slice(s![.., cols.clone()]).t(), 0.0, &mut out);
        }
        if let Some(b) = bias {
            out += self.value(b);
        }
        self.push(out, Op::Linear { x, w, cols, bias })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), elu);
        self.push(v, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), logistic);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("hcat: row counts differ");
        self.push(v, Op::HCat(parts.to_vec()))
    }

    /// Output row `k` is input row `rows[k]`.
    pub fn gather(&mut self, x: Var, rows: Rc<[usize]>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((rows.len(), xv.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&xv.row(r));
        }
        self.push(out, Op::Gather { x, rows })
    }

    /// Input row `k` is added into output row `rows[k]`.
    pub fn scatter_add(&mut self, x: Var, rows: Rc<[usize]>, out_rows: usize) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((out_rows, xv.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = out.row_mut(r);
            dst += &xv.row(k);
        }
        self.push(out, Op::ScatterAdd { x, rows })
    }

    /// Reverse sweep from a `1×1` node. Gradients are retained for leaves only.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        let shape = self.value(output).dim();
        if shape != (1, 1) {
            return Err(DiffError::NonScalarOutput {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Linear { x, w, cols, bias } => {
                    let wv = self.value(*w);
                    if !cols.is_empty() {
                        let gx = self.acc(&mut grads, *x);
                        general_mat_mul(1.0, &g, &wv.slice(s![.., cols.clone()]), 1.0, gx);
                        let xv = self.value(*x);
                        let gw = self.acc(&mut grads, *w);
                        let mut gw_cols = gw.slice_mut(s![.., cols.clone()]);
                        general_mat_mul(1.0, &g.t(), xv, 1.0, &mut gw_cols);
                    }
                    if let Some(b) = bias {
                        let gb = self.acc(&mut grads, *b);
                        *gb += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                }
                Op::Add(a, b) => {
                    *self.acc(&mut grads, *a) += &g;
                    *self.acc(&mut grads, *b) += &g;
                }
                Op::Sub(a, b) => {
                    *self.acc(&mut grads, *a) += &g;
                    *self.acc(&mut grads, *b) -= &g;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    Zip::from(self.acc(&mut grads, *a)).and(&g).and(bv).for_each(|d, &g, &b| *d += g * b);
                    Zip::from(self.acc(&mut grads, *b)).and(&g).and(av).for_each(|d, &g, &a| *d += g * a);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    Zip::from(self.acc(&mut grads, *a)).and(&g).for_each(|d, &g| *d += c * g);
                }
                Op::Elu(a) => {
                    let zv = self.value(*a);
                    Zip::from(self.acc(&mut grads, *a))
                        .and(&g)
                        .and(zv)
                        .and(&node.value)
                        .for_each(|d, &g, &z, &y| *d += g * if z >= 0.0 { 1.0 } else { y + 1.0 });
                }
                Op::Sigmoid(a) => {
                    Zip::from(self.acc(&mut grads, *a))
                        .and(&g)
                        .and(&node.value)
                        .for_each(|d, &g, &y| *d += g * y * (1.0 - y));
                }
                Op::Tanh(a) => {
                    Zip::from(self.acc(&mut grads, *a))
                        .and(&g)
                        .and(&node.value)
                        .for_each(|d, &g, &y| *d += g * (1.0 - y * y));
                }
                Op::Square(a) => {
                    let xv = self.value(*a);
                    Zip::from(self.acc(&mut grads, *a)).and(&g).and(xv).for_each(|d, &g, &x| *d += 2.0 * g * x);
                }
                Op::Sum(a) => {
                    let g0 = g[(0, 0)];
                    self.acc(&mut grads, *a).mapv_inplace(|d| d + g0);
                }
                Op::HCat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let width = self.value(p).ncols();
                        let gp = self.acc(&mut grads, p);
                        *gp += &g.slice(s![.., col..col + width]);
                        col += width;
                    }
                }
                Op::Gather { x, rows } => {
                    let gx = self.acc(&mut grads, *x);
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(r);
                        dst += &g.row(k);
                    }
                }
                Op::ScatterAdd { x, rows } => {
                    let gx = self.acc(&mut grads, *x);
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(k);
                        dst += &g.row(r);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Array2<f64>>], v: Var) -> &'g mut Array2<f64> {
        grads[v.0].get_or_insert_with(|| Array2::zeros(self.nodes[v.0].value.dim()))
    }
}

/// Leaf gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf with zeros filled in for unused leaves.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
    }
}

/// Evaluates `f` at `point` and returns the scalar value and the gradient
/// with respect to every input array.
pub fn grad<F>(point: &[Array2<f64>], f: F) -> Result<(f64, Vec<Array2<f64>>), DiffError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let inputs: Vec<Var> = point.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &inputs);
    let grads = tape.backward(out)?;
    let value = tape.scalar(out);
    Ok((value, inputs.iter().map(|&v| grads.wrt(&tape, v)).collect()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmlpSpec {
    pub input_dim: usize,
    pub meta_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MmlpSpec {
    pub fn new(input_dim: usize, meta_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            meta_dim,
            hidden: hidden.to_vec(),
            output_dim,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(input width excluding ζ, output width)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Weight shapes `(width_l, width_{l-1} + D_ζ)`.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_dims()
            .into_iter()
            .map(|(i, o)| (o, i + self.meta_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmlpParams {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// Weights uniform in `±gain/√fan_in`, biases zero.
    FanInUniform { gain: f64 },
    Zero,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::FanInUniform { gain: 1.0 }
    }
}

pub fn init_params(spec: &MmlpSpec, scheme: InitScheme, seed: u64) -> MmlpParams {
    let mut rng = rng::rng(seed);
    let layers = spec
        .weight_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let weight = match scheme {
                InitScheme::Zero => Array2::zeros((rows, cols)),
                InitScheme::FanInUniform { gain } => {
                    let bound = if cols == 0 { 0.0 } else { gain / (cols as f64).sqrt() };
                    Array2::from_shape_simple_fn((rows, cols), || {
                        if bound == 0.0 {
                            0.0
                        } else {
                            rng.random_range(-bound..=bound)
                        }
                    })
                }
            };
            DenseLayer {
                weight,
                bias: Array1::zeros(rows),
            }
        })
        .collect();
    MmlpParams { layers }
}

impl MmlpParams {
    pub fn check(&self, spec: &MmlpSpec) -> Result<(), DiffError> {
        let shapes = spec.weight_shapes();
        if shapes.len() != self.layers.len() {
            return Err(DiffError::DimensionMismatch {
                context: "mmlp layer count",
                expected: shapes.len(),
                got: self.layers.len(),
            });
        }
        for (layer, (rows, cols)) in self.layers.iter().zip(shapes) {
            if layer.weight.dim() != (rows, cols) || layer.bias.len() != rows {
                return Err(DiffError::DimensionMismatch {
                    context: "mmlp weight shape",
                    expected: rows * cols,
                    got: layer.weight.len(),
                });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Appends weights then biases of each layer, row-major.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); returns the number of values consumed.
    pub fn assign_flat(&mut self, flat: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        k
    }

    pub fn register(&self, tape: &mut Tape) -> MmlpVars {
        MmlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let w = tape.leaf(l.weight.clone());
                    let b = tape.leaf(l.bias.clone().insert_axis(Axis(0)));
                    (w, b)
                })
                .collect(),
        }
    }
}

/// Tape handles for the weights and biases of one meta-MLP.
#[derive(Debug, Clone)]
pub struct MmlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MmlpVars {
    /// Gradient in the layout of [`MmlpParams::flatten_into`].
    pub fn flatten_grad_into(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        for &(w, b) in &self.layers {
            out.extend(grads.wrt(tape, w).iter());
            out.extend(grads.wrt(tape, b).iter());
        }
    }
}

/// Plain forward pass for one input vector.
pub fn mmlp_forward(x: &[f64], zeta: &[f64], params: &MmlpParams, spec: &MmlpSpec) -> Result<Vec<f64>, DiffError> {
    params.check(spec)?;
    if x.len() != spec.input_dim {
        return Err(DiffError::DimensionMismatch {
            context: "mmlp input",
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    if zeta.len() != spec.meta_dim {
        return Err(DiffError::DimensionMismatch {
            context: "mmlp meta",
            expected: spec.meta_dim,
            got: zeta.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut act = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let input: Vec<f64> = act.iter().chain(zeta).copied().collect();
        act = layer
            .weight
            .outer_iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + b;
                if l < last {
                    elu(z)
                } else {
                    z
                }
            })
            .collect();
    }
    Ok(act)
}

/// Per-layer `ζ W^l[:, meta]ᵀ + b^l`, one row per row of `zeta`. These terms
/// do not depend on the layer input and can be reused across time steps.
pub fn meta_terms(tape: &mut Tape, vars: &MmlpVars, spec: &MmlpSpec, zeta: Var) -> Vec<Var> {
    spec.layer_dims()
        .iter()
        .zip(&vars.layers)
        .map(|(&(input, _), &(w, b))| tape.linear(zeta, w, input..input + spec.meta_dim, Some(b)))
        .collect()
}

/// Batched forward pass given precomputed [`meta_terms`].
pub fn mmlp_forward_tape(tape: &mut Tape, vars: &MmlpVars, spec: &MmlpSpec, x: Var, meta: &[Var]) -> Var {
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut act = x;
    for (l, (&(input, _), &(w, _))) in dims.iter().zip(&vars.layers).enumerate() {
        let lin = tape.linear(act, w, 0..input, None);
        let pre = tape.add(lin, meta[l]);
        act = if l < last { tape.elu(pre) } else { pre };
    }
    act
}

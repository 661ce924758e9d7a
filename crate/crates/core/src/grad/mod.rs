//! Reverse-mode automatic differentiation over a small fixed set of dense
//! primitives.
//!
//! A [`Tape`] is recorded once (inputs declared with their shapes, then
//! operations appended in topological order) and can afterwards be evaluated
//! any number of times with [`Tape::forward`]. [`Tape::backward`] propagates
//! the gradient of the last recorded node, which must be a scalar, back to
//! every declared input.
//!
//! Primitives: affine transform, `exp`, `log`, `square`, negation, leaky
//! rectifier, log-sum-exp, sum and mean (over everything or one axis), and
//! broadcasting linear combinations. Everything else is composed from these.

mod finite_diff;

pub use finite_diff::{finite_difference_gradient, relative_error};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(usize),
    Const(Vec<f64>),
    /// `x · wᵀ + b`
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Exp(usize),
    Log(usize),
    Square(usize),
    Neg(usize),
    LeakyRelu(usize, f64),
    LogSumExp(usize, Option<usize>),
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    LinComb(Vec<(usize, f64)>, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "constant",
            Op::Affine { .. } => "affine",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Neg(_) => "neg",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::LogSumExp(..) => "logsumexp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::LinComb(..) => "lincomb",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Recorded computation with cached values and gradient slots.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: Vec<usize>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    evaluated: bool,
}

/// Splits `shape` around `axis` into (outer, reduced, inner) extents.
fn reduction_layout(shape: &[usize], axis: Option<usize>) -> (usize, usize, usize) {
    match axis {
        None => (1, shape.iter().product(), 1),
        Some(a) => (
            shape[..a].iter().product(),
            shape[a],
            shape[a + 1..].iter().product(),
        ),
    }
}

/// Pads a rank ≤ 2 shape to (rows, cols).
fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1]),
    }
}

fn broadcast_shapes(shapes: &[&[usize]]) -> Option<Vec<usize>> {
    let rank = shapes.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = vec![1usize; rank];
    for shape in shapes {
        let offset = rank - shape.len();
        for (k, &dim) in shape.iter().enumerate() {
            let slot = &mut out[offset + k];
            if *slot == 1 {
                *slot = dim;
            } else if dim != 1 && dim != *slot {
                return None;
            }
        }
    }
    Some(out)
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

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.inputs.iter().map(|&i| self.nodes[i].shape.clone()).collect()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> Var {
        let n: usize = shape.iter().product();
        self.nodes.push(Node { op, shape });
        self.values.push(vec![0.0; n]);
        self.grads.push(Vec::new());
        self.evaluated = false;
        Var(self.nodes.len() - 1)
    }

    /// Declares the next input (or parameter) slot.
    pub fn input(&mut self, shape: &[usize]) -> Var {
        assert!(shape.len() <= 2, "tensors are limited to rank 2");
        let slot = self.inputs.len();
        let v = self.push(Op::Input(slot), shape.to_vec());
        self.inputs.push(v.0);
        v
    }

    /// Records a fixed leaf; it receives no entry in the gradient list.
    pub fn constant(&mut self, value: Tensor) -> Var {
        assert!(value.rank() <= 2, "tensors are limited to rank 2");
        let shape = value.shape().to_vec();
        self.push(Op::Const(value.into_data()), shape)
    }

    /// `x · wᵀ + b` with `x: n×k`, `w: o×k` and optional `b` of length `o`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                context: "affine x·wᵀ".into(),
                expected: vec![xs.first().copied().unwrap_or(0), ws.get(1).copied().unwrap_or(0)],
                actual: xs,
            });
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.iter().product::<usize>() != ws[0] || bs.last() != Some(&ws[0]) {
                return Err(Error::ShapeMismatch {
                    context: "affine bias".into(),
                    expected: vec![ws[0]],
                    actual: bs.to_vec(),
                });
            }
        }
        Ok(self.push(
            Op::Affine {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            vec![xs[0], ws[0]],
        ))
    }

    fn unary(&mut self, op: Op, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        self.push(op, shape)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a.0), a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log(a.0), a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a.0), a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg(a.0), a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(a.0, slope), a)
    }

    fn reduced_shape(&self, a: Var, axis: Option<usize>) -> Result<Vec<usize>> {
        let shape = self.shape(a);
        match axis {
            None => Ok(Vec::new()),
            Some(k) if k < shape.len() => {
                let mut s = shape.to_vec();
                s[k] = 1;
                Ok(s)
            }
            Some(k) => Err(Error::InvalidArgument(format!(
                "axis {k} out of range for shape {shape:?}"
            ))),
        }
    }

    /// Overflow-safe `log Σ exp`, over all entries (`None`) or one axis
    /// (kept with extent 1).
    pub fn logsumexp(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.reduced_shape(a, axis)?;
        Ok(self.push(Op::LogSumExp(a.0, axis), shape))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.reduced_shape(a, axis)?;
        Ok(self.push(Op::Sum(a.0, axis), shape))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.reduced_shape(a, axis)?;
        Ok(self.push(Op::Mean(a.0, axis), shape))
    }

    /// `offset + Σ cₖ·termₖ` with numpy-style broadcasting (rank ≤ 2).
    pub fn lincomb(&mut self, terms: &[(Var, f64)], offset: f64) -> Result<Var> {
        let shapes: Vec<&[usize]> = terms.iter().map(|(v, _)| self.shape(*v)).collect();
        let shape = broadcast_shapes(&shapes).ok_or_else(|| Error::ShapeMismatch {
            context: "lincomb broadcast".into(),
            expected: shapes.first().map(|s| s.to_vec()).unwrap_or_default(),
            actual: shapes.last().map(|s| s.to_vec()).unwrap_or_default(),
        })?;
        let terms = terms.iter().map(|(v, c)| (v.0, *c)).collect();
        Ok(self.push(Op::LinComb(terms, offset), shape))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(a, 1.0), (b, 1.0)], 0.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(a, 1.0), (b, -1.0)], 0.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a).to_vec();
        self.push(Op::LinComb(vec![(a.0, c)], 0.0), shape)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a).to_vec();
        self.push(Op::LinComb(vec![(a.0, 1.0)], c), shape)
    }

    /// Cached value of a node from the most recent forward pass.
    pub fn value(&self, v: Var) -> Result<Tensor> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        Tensor::new(self.nodes[v.0].shape.clone(), self.values[v.0].clone())
    }

    pub fn value_slice(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    /// Evaluates every node; returns the value of the last recorded node.
    pub fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::ShapeMismatch {
                context: "number of tape inputs".into(),
                expected: vec![self.inputs.len()],
                actual: vec![inputs.len()],
            });
        }
        for (slot, (&node, t)) in self.inputs.iter().zip(inputs).enumerate() {
            if self.nodes[node].shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("tape input {slot}"),
                    expected: self.nodes[node].shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        self.evaluated = false;
        for id in 0..self.nodes.len() {
            self.eval_node(id, inputs);
            if !self.values[id].iter().all(|v| v.is_finite()) {
                return Err(Error::NumericOverflow {
                    node: id,
                    op: self.nodes[id].op.name(),
                });
            }
        }
        self.evaluated = true;
        let last = self.nodes.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidArgument("forward on an empty tape".into())
        })?;
        Tensor::new(self.nodes[last].shape.clone(), self.values[last].clone())
    }

    fn eval_node(&mut self, id: usize, inputs: &[&Tensor]) {
        let (before, rest) = self.values.split_at_mut(id);
        let out = &mut rest[0];
        let node = &self.nodes[id];
        match &node.op {
            Op::Input(slot) => out.copy_from_slice(inputs[*slot].data()),
            Op::Const(v) => out.copy_from_slice(v),
            Op::Affine { x, w, b } => {
                let (n, k) = as_matrix(&self.nodes[*x].shape);
                let o = self.nodes[*w].shape[0];
                match b {
                    Some(b) => {
                        for row in out.chunks_exact_mut(o) {
                            row.copy_from_slice(&before[*b]);
                        }
                    }
                    None => out.fill(0.0),
                }
                gemm(n, k, o, &before[*x], (k, 1), &before[*w], (1, k), 1.0, out, (o, 1));
            }
            Op::Exp(a) => elementwise(out, &before[*a], f64::exp),
            Op::Log(a) => elementwise(out, &before[*a], f64::ln),
            Op::Square(a) => elementwise(out, &before[*a], |v| v * v),
            Op::Neg(a) => elementwise(out, &before[*a], |v| -v),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                elementwise(out, &before[*a], |v| if v > 0.0 { v } else { s * v })
            }
            Op::LogSumExp(a, axis) => {
                let (outer, red, inner) = reduction_layout(&self.nodes[*a].shape, *axis);
                let src = &before[*a];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |r: usize| src[(o * red + r) * inner + i];
                        let max = (0..red).map(at).fold(f64::NEG_INFINITY, f64::max);
                        out[o * inner + i] = if max == f64::INFINITY || max == f64::NEG_INFINITY {
                            max
                        } else {
                            max + (0..red).map(|r| (at(r) - max).exp()).sum::<f64>().ln()
                        };
                    }
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (outer, red, inner) = reduction_layout(&self.nodes[*a].shape, *axis);
                let scale = if matches!(node.op, Op::Mean(..)) {
                    1.0 / red as f64
                } else {
                    1.0
                };
                let src = &before[*a];
                for o in 0..outer {
                    for i in 0..inner {
                        let s: f64 = (0..red).map(|r| src[(o * red + r) * inner + i]).sum();
                        out[o * inner + i] = s * scale;
                    }
                }
            }
            Op::LinComb(terms, offset) => {
                out.fill(*offset);
                let (rows, cols) = as_matrix(&node.shape);
                for &(t, c) in terms {
                    let (rs, cs) = broadcast_strides(&self.nodes[t].shape, rows, cols);
                    let src = &before[t];
                    for i in 0..rows {
                        for j in 0..cols {
                            out[i * cols + j] += c * src[i * rs + j * cs];
                        }
                    }
                }
            }
        }
    }

    /// Gradient of the (scalar) last node with respect to every input.
    pub fn backward(&mut self) -> Result<Vec<Tensor>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let last = self.nodes.len() - 1;
        if self.values[last].len() != 1 {
            return Err(Error::NonScalarOutput(self.nodes[last].shape.clone()));
        }
        for (g, v) in self.grads.iter_mut().zip(&self.values) {
            g.clear();
            g.resize(v.len(), 0.0);
        }
        self.grads[last][0] = 1.0;
        for id in (0..=last).rev() {
            self.backprop_node(id);
        }
        self.inputs
            .iter()
            .map(|&i| Tensor::new(self.nodes[i].shape.clone(), self.grads[i].clone()))
            .collect()
    }

    fn backprop_node(&mut self, id: usize) {
        // Operands always precede their consumer, so splitting at `id` gives
        // disjoint borrows of the output gradient and the operand gradients.
        let (grads_before, grads_rest) = self.grads.split_at_mut(id);
        let g = &grads_rest[0];
        let values = &self.values;
        let out = &values[id];
        let node = &self.nodes[id];
        match &node.op {
            Op::Input(_) | Op::Const(_) => {}
            Op::Affine { x, w, b } => {
                let (n, k) = as_matrix(&self.nodes[*x].shape);
                let o = self.nodes[*w].shape[0];
                // dX += dY · W
                gemm(n, o, k, g, (o, 1), &values[*w], (k, 1), 1.0, &mut grads_before[*x], (k, 1));
                // dW += dYᵀ · X
                gemm(o, n, k, g, (1, o), &values[*x], (k, 1), 1.0, &mut grads_before[*w], (k, 1));
                if let Some(b) = b {
                    let gb = &mut grads_before[*b];
                    for row in g.chunks_exact(o) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                for ((acc, gy), y) in grads_before[*a].iter_mut().zip(g).zip(out) {
                    *acc += gy * y;
                }
            }
            Op::Log(a) => {
                for ((acc, gy), x) in grads_before[*a].iter_mut().zip(g).zip(&values[*a]) {
                    *acc += gy / x;
                }
            }
            Op::Square(a) => {
                for ((acc, gy), x) in grads_before[*a].iter_mut().zip(g).zip(&values[*a]) {
                    *acc += 2.0 * gy * x;
                }
            }
            Op::Neg(a) => {
                for (acc, gy) in grads_before[*a].iter_mut().zip(g) {
                    *acc -= gy;
                }
            }
            Op::LeakyRelu(a, slope) => {
                for ((acc, gy), x) in grads_before[*a].iter_mut().zip(g).zip(&values[*a]) {
                    *acc += if *x > 0.0 { *gy } else { slope * gy };
                }
            }
            Op::LogSumExp(a, axis) => {
                let (outer, red, inner) = reduction_layout(&self.nodes[*a].shape, *axis);
                let src = &values[*a];
                let acc = &mut grads_before[*a];
                for o in 0..outer {
                    for i in 0..inner {
                        let (gy, y) = (g[o * inner + i], out[o * inner + i]);
                        for r in 0..red {
                            let k = (o * red + r) * inner + i;
                            acc[k] += gy * (src[k] - y).exp();
                        }
                    }
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (outer, red, inner) = reduction_layout(&self.nodes[*a].shape, *axis);
                let scale = if matches!(node.op, Op::Mean(..)) {
                    1.0 / red as f64
                } else {
                    1.0
                };
                let acc = &mut grads_before[*a];
                for o in 0..outer {
                    for i in 0..inner {
                        let gy = g[o * inner + i] * scale;
                        for r in 0..red {
                            acc[(o * red + r) * inner + i] += gy;
                        }
                    }
                }
            }
            Op::LinComb(terms, _) => {
                let (rows, cols) = as_matrix(&node.shape);
                for &(t, c) in terms {
                    let (rs, cs) = broadcast_strides(&self.nodes[t].shape, rows, cols);
                    let acc = &mut grads_before[t];
                    for i in 0..rows {
                        for j in 0..cols {
                            acc[i * rs + j * cs] += c * g[i * cols + j];
                        }
                    }
                }
            }
        }
    }
}

fn elementwise(out: &mut [f64], src: &[f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(src) {
        *o = f(x);
    }
}

/// Row/column strides that read an operand of `shape` broadcast to rows×cols.
fn broadcast_strides(shape: &[usize], rows: usize, cols: usize) -> (usize, usize) {
    let (r, c) = as_matrix(shape);
    let rs = if r == 1 && rows != 1 { 0 } else { c };
    let cs = if c == 1 && cols != 1 { 0 } else { 1 };
    (rs, cs)
}

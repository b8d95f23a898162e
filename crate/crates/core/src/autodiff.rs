//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive as it is evaluated. Values are
//! computed eagerly, so building a graph and running it are the same step.
//! [`Tape::gradient_as_nodes`] emits the backward pass as ordinary tape
//! nodes, which is what makes second-order quantities such as gradient
//! penalties differentiable: differentiate once to put the inner gradient on
//! the tape, build a scalar from it, then differentiate again.
//!
//! ```
//! use ckgan::autodiff::Tape;
//! use ckgan::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.variable("x", Tensor::scalar(2.0));
//! let x2 = tape.square(x).unwrap();
//! let x3 = tape.mul(x2, x).unwrap();
//! let dx = tape.gradient_as_nodes(x3, &[x]).unwrap()[0];
//! let grads = tape.gradient(dx, &[x]).unwrap();
//! assert_eq!(grads[x].item().unwrap(), 12.0);
//! ```

use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Offset that keeps Euclidean distance differentiable at coincident points.
///
/// `l2 = sqrt(sq + EPS^2) - EPS`, which is exactly zero (to rounding) when
/// the points coincide and has a zero derivative there.
pub const DISTANCE_EPS: f64 = 1e-6;
const DISTANCE_EPS_SQ: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Relu(Var),
    Step(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Sign(Var),
    Square(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Broadcast { x: Var, shape: Vec<usize> },
    BroadcastCols { x: Var, cols: usize },
    Softmax(Var),
    Select(Var, usize),
    Embed { x: Var, index: usize, len: usize },
    Column(Var, usize),
    EmbedColumn { x: Var, col: usize, cols: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul { .. } => "matmul",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sqrt(_) => "sqrt",
            Op::Abs(_) => "abs",
            Op::Sign(_) => "sign",
            Op::Square(_) => "square",
            Op::SumAll(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::Broadcast { .. } => "broadcast",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::Softmax(_) => "softmax",
            Op::Select(..) => "select",
            Op::Embed { .. } => "embed",
            Op::Column(..) => "column",
            Op::EmbedColumn { .. } => "embed_column",
        }
    }

    fn inputs(&self) -> Inputs {
        match *self {
            Op::Leaf => Inputs::None,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => Inputs::Two(a, b),
            Op::MatMul { a, b, .. } => Inputs::Two(a, b),
            Op::Scale(x, _)
            | Op::Shift(x, _)
            | Op::Relu(x)
            | Op::Step(x)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Ln(x)
            | Op::Sqrt(x)
            | Op::Abs(x)
            | Op::Sign(x)
            | Op::Square(x)
            | Op::SumAll(x)
            | Op::SumRows(x)
            | Op::SumCols(x)
            | Op::Broadcast { x, .. }
            | Op::BroadcastCols { x, .. }
            | Op::Softmax(x)
            | Op::Select(x, _)
            | Op::Embed { x, .. }
            | Op::Column(x, _)
            | Op::EmbedColumn { x, .. } => Inputs::One(x),
        }
    }
}

enum Inputs {
    None,
    One(Var),
    Two(Var, Var),
}

impl Inputs {
    fn any(&self, mut f: impl FnMut(Var) -> bool) -> bool {
        match *self {
            Inputs::None => false,
            Inputs::One(a) => f(a),
            Inputs::Two(a, b) => f(a) || f(b),
        }
    }
}

struct Node {
    op: Op,
    name: Option<String>,
    value: Tensor,
}

/// A recorded computation.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Values of every node from a [`Tape::evaluate`] replay.
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn get(&self, var: Var) -> &Tensor {
        &self.values[var.0]
    }
}

impl Index<Var> for Evaluation {
    type Output = Tensor;
    fn index(&self, var: Var) -> &Tensor {
        self.get(var)
    }
}

/// Gradients keyed by the variable they were taken with respect to.
#[derive(Debug, Default)]
pub struct GradMap {
    grads: HashMap<Var, Tensor>,
}

impl GradMap {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Index<Var> for GradMap {
    type Output = Tensor;
    fn index(&self, var: Var) -> &Tensor {
        &self.grads[&var]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a named free variable. Replays must bind it by name.
    pub fn variable(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            name: Some(name.into()),
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an unnamed leaf whose value is fixed on replay.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            name: None,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn item(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let node = self.nodes.len();
        let value = compute(&op, |v| &self.nodes[v.0].value).map_err(|message| {
            Error::NodeShape {
                node,
                op: op.name(),
                message,
            }
        })?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            name: None,
            value,
        });
        Ok(Var(node))
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(var.0))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product. Either operand may be a scalar, or a row vector
    /// `[n]` broadcast against a `[r, n]` matrix; the same holds for
    /// [`add`](Self::add), [`sub`](Self::sub), and [`div`](Self::div).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Shift(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.push(Op::MatMul { a, b, ta, tb })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    /// Heaviside step with `step(0) = 0`. Its derivative is zero.
    pub fn step(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Step(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Abs(x))
    }

    /// Sign with `sign(0) = 0`. Its derivative is zero.
    pub fn sign(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sign(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Square(x))
    }

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `[r, n] -> [n]`: sum over the batch axis.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumRows(x))
    }

    /// `[r, n] -> [n]`: mean over the batch axis.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rows();
        let s = self.sum_rows(x)?;
        self.scale(s, 1.0 / r as f64)
    }

    /// `[r, n] -> [r]`: sum within each row.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumCols(x))
    }

    /// Expands a scalar to any shape, or a row vector `[n]` to `[r, n]`.
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Broadcast {
            x,
            shape: shape.to_vec(),
        })
    }

    /// `[r] -> [r, cols]`, repeating each entry across its row.
    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        self.push(Op::BroadcastCols { x, cols })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softmax(x))
    }

    /// Element `index` of a vector, as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        self.push(Op::Select(x, index))
    }

    /// A length-`len` vector that is zero except for `x` at `index`.
    pub fn embed(&mut self, x: Var, index: usize, len: usize) -> Result<Var> {
        self.push(Op::Embed { x, index, len })
    }

    /// Column `col` of a matrix, as a vector.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        self.push(Op::Column(x, col))
    }

    pub fn embed_column(&mut self, x: Var, col: usize, cols: usize) -> Result<Var> {
        self.push(Op::EmbedColumn { x, col, cols })
    }

    fn reduce_last(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() >= 2 {
            self.sum_cols(x)
        } else {
            self.sum(x)
        }
    }

    /// Squared Euclidean distance. Vectors give a scalar; `[r, m]` matrices
    /// give one distance per row.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.reduce_last(sq)
    }

    /// Euclidean distance, smoothed at zero (see [`DISTANCE_EPS`]).
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let sq = self.squared_distance(a, b)?;
        self.smooth_sqrt(sq)
    }

    /// `sqrt(x + EPS^2) - EPS`, for non-negative `x`.
    pub fn smooth_sqrt(&mut self, x: Var) -> Result<Var> {
        let shifted = self.shift(x, DISTANCE_EPS_SQ)?;
        let root = self.sqrt(shifted)?;
        self.shift(root, -DISTANCE_EPS)
    }

    /// Manhattan distance, per row for matrices.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let abs = self.abs(d)?;
        self.reduce_last(abs)
    }

    /// Errors if any recorded value is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }

    /// Replays the tape with new values for its named variables.
    ///
    /// Every named leaf must be bound. Unnamed constants keep their recorded
    /// values. Replaying with the recorded inputs reproduces the recorded
    /// values bit for bit.
    pub fn evaluate(&self, inputs: &[(&str, Tensor)]) -> Result<Evaluation> {
        let bound: HashMap<&str, &Tensor> = inputs.iter().map(|(k, v)| (*k, v)).collect();
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match (&node.op, &node.name) {
                (Op::Leaf, Some(name)) => (*bound
                    .get(name.as_str())
                    .ok_or_else(|| Error::Unbound(name.clone()))?)
                .clone(),
                (Op::Leaf, None) => node.value.clone(),
                (op, _) => compute(op, |v| &values[v.0]).map_err(|message| Error::NodeShape {
                    node: i,
                    op: op.name(),
                    message,
                })?,
            };
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            values.push(value);
        }
        Ok(Evaluation { values })
    }

    /// Numeric gradients of a scalar node.
    ///
    /// Implemented on top of [`gradient_as_nodes`](Self::gradient_as_nodes),
    /// so the two always agree exactly.
    pub fn gradient(&mut self, output: Var, wrt: &[Var]) -> Result<GradMap> {
        let nodes = self.gradient_as_nodes(output, wrt)?;
        let grads = wrt
            .iter()
            .zip(nodes)
            .map(|(&w, g)| (w, self.value(g).clone()))
            .collect();
        Ok(GradMap { grads })
    }

    /// Emits the backward pass of `output` as new nodes and returns, for
    /// each entry of `wrt`, the node holding its gradient.
    ///
    /// `wrt` may name any node, not only leaves; the gradient then treats
    /// that node as an independent input. Only nodes downstream of some
    /// `wrt` entry take part in the backward sweep.
    pub fn gradient_as_nodes(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        if !self.value(output).is_scalar() {
            return Err(Error::NotScalar {
                node: output.0,
                shape: self.shape(output).to_vec(),
            });
        }

        let end = output.0 + 1;
        let start = wrt.iter().map(|w| w.0).min().unwrap_or(end);
        let mut active = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                active[w.0] = true;
            }
        }
        for i in start..end {
            if !active[i] {
                active[i] = self.nodes[i]
                    .op
                    .inputs()
                    .any(|v| v.0 >= start && active[v.0]);
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; end];
        if active[output.0] {
            let ones = Tensor::ones(self.shape(output));
            adjoint[output.0] = Some(self.constant(ones));
        }

        for i in (start..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !active[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let y = Var(i);
            let is_active = |v: Var| v.0 >= start && active[v.0];
            let mut contributions: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Leaf | Op::Step(_) | Op::Sign(_) => {}
                Op::Add(a, b) => {
                    if is_active(a) {
                        contributions.push((a, self.reduce_to(g, a)?));
                    }
                    if is_active(b) {
                        contributions.push((b, self.reduce_to(g, b)?));
                    }
                }
                Op::Sub(a, b) => {
                    if is_active(a) {
                        contributions.push((a, self.reduce_to(g, a)?));
                    }
                    if is_active(b) {
                        let n = self.neg(g)?;
                        contributions.push((b, self.reduce_to(n, b)?));
                    }
                }
                Op::Mul(a, b) => {
                    if is_active(a) {
                        let t = self.mul(g, b)?;
                        contributions.push((a, self.reduce_to(t, a)?));
                    }
                    if is_active(b) {
                        let t = self.mul(g, a)?;
                        contributions.push((b, self.reduce_to(t, b)?));
                    }
                }
                Op::Div(a, b) => {
                    if is_active(a) {
                        let t = self.div(g, b)?;
                        contributions.push((a, self.reduce_to(t, a)?));
                    }
                    if is_active(b) {
                        // d(a/b)/db = -(a/b)/b
                        let q = self.div(y, b)?;
                        let t = self.mul(g, q)?;
                        let t = self.neg(t)?;
                        contributions.push((b, self.reduce_to(t, b)?));
                    }
                }
                Op::Scale(x, c) => contributions.push((x, self.scale(g, c)?)),
                Op::Shift(x, _) => contributions.push((x, g)),
                Op::MatMul { a, b, ta, tb } => {
                    if is_active(a) {
                        let da = if ta {
                            self.matmul_t(b, g, tb, true)?
                        } else {
                            self.matmul_t(g, b, false, !tb)?
                        };
                        contributions.push((a, da));
                    }
                    if is_active(b) {
                        let db = if tb {
                            self.matmul_t(g, a, true, ta)?
                        } else {
                            self.matmul_t(a, g, !ta, false)?
                        };
                        contributions.push((b, db));
                    }
                }
                Op::Relu(x) => {
                    let mask = self.step(x)?;
                    contributions.push((x, self.mul(g, mask)?));
                }
                Op::Tanh(x) => {
                    let y2 = self.square(y)?;
                    let one_minus = self.neg(y2)?;
                    let one_minus = self.shift(one_minus, 1.0)?;
                    contributions.push((x, self.mul(g, one_minus)?));
                }
                Op::Exp(x) => contributions.push((x, self.mul(g, y)?)),
                Op::Ln(x) => contributions.push((x, self.div(g, x)?)),
                Op::Sqrt(x) => {
                    let half = self.scale(g, 0.5)?;
                    contributions.push((x, self.div(half, y)?));
                }
                Op::Abs(x) => {
                    let s = self.sign(x)?;
                    contributions.push((x, self.mul(g, s)?));
                }
                Op::Square(x) => {
                    let two_x = self.scale(x, 2.0)?;
                    contributions.push((x, self.mul(g, two_x)?));
                }
                Op::SumAll(x) => {
                    let shape = self.shape(x).to_vec();
                    contributions.push((x, self.broadcast(g, &shape)?));
                }
                Op::SumRows(x) => {
                    let shape = self.shape(x).to_vec();
                    contributions.push((x, self.broadcast(g, &shape)?));
                }
                Op::SumCols(x) => {
                    let cols = self.value(x).cols();
                    contributions.push((x, self.broadcast_cols(g, cols)?));
                }
                Op::Broadcast { x, .. } => contributions.push((x, self.reduce_to(g, x)?)),
                Op::BroadcastCols { x, .. } => contributions.push((x, self.sum_cols(g)?)),
                Op::Softmax(x) => {
                    let gy = self.mul(g, y)?;
                    let s = self.sum(gy)?;
                    let centered = self.sub(g, s)?;
                    contributions.push((x, self.mul(y, centered)?));
                }
                Op::Select(x, index) => {
                    let len = self.value(x).len();
                    contributions.push((x, self.embed(g, index, len)?));
                }
                Op::Embed { x, index, .. } => contributions.push((x, self.select(g, index)?)),
                Op::Column(x, col) => {
                    let cols = self.value(x).cols();
                    contributions.push((x, self.embed_column(g, col, cols)?));
                }
                Op::EmbedColumn { x, col, .. } => contributions.push((x, self.column(g, col)?)),
            }
            for (target, contribution) in contributions {
                if !is_active(target) {
                    continue;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    None => contribution,
                    Some(prev) => self.add(prev, contribution)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w));
                    Ok(self.constant(zeros))
                }
            })
            .collect()
    }

    /// Sums a broadcast gradient back down to the shape of `target`.
    fn reduce_to(&mut self, g: Var, target: Var) -> Result<Var> {
        let gs = self.shape(g).to_vec();
        let ts = self.shape(target).to_vec();
        if gs == ts {
            return Ok(g);
        }
        if self.value(target).len() == 1 {
            let s = self.sum(g)?;
            return if ts.is_empty() {
                Ok(s)
            } else {
                self.broadcast(s, &ts)
            };
        }
        if gs.len() == 2 && ts.len() == 1 && gs[1] == ts[0] {
            return self.sum_rows(g);
        }
        Err(Error::Shape(format!("cannot reduce {gs:?} to {ts:?}")))
    }
}

/// Shape of `a op b` under the tape's broadcasting rules.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    fn fits(small: &[usize], big: &[usize]) -> bool {
        small == big
            || small.iter().product::<usize>() == 1 && small.len() <= 1
            || small.len() == 1 && big.len() == 2 && small[0] == big[1]
    }
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if na >= nb && fits(b, a) {
        Some(a.to_vec())
    } else if fits(a, b) {
        Some(b.to_vec())
    } else {
        None
    }
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, String> {
    let shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| format!("incompatible shapes {:?} and {:?}", a.shape(), b.shape()))?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = if ad.len() == n && bd.len() == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let (la, lb) = (ad.len(), bd.len());
        (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect()
    };
    Ok(Tensor::from_parts(shape, data))
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize), String> {
    if t.rank() != 2 {
        return Err(format!("{what} must be a matrix, found shape {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn compute<'a>(op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Result<Tensor, String> {
    let t = match *op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::Add(a, b) => binary(get(a), get(b), |x, y| x + y)?,
        Op::Sub(a, b) => binary(get(a), get(b), |x, y| x - y)?,
        Op::Mul(a, b) => binary(get(a), get(b), |x, y| x * y)?,
        Op::Div(a, b) => binary(get(a), get(b), |x, y| x / y)?,
        Op::Scale(x, c) => get(x).map(|v| v * c),
        Op::Shift(x, c) => get(x).map(|v| v + c),
        Op::MatMul { a, b, ta, tb } => matmul(get(a), get(b), ta, tb)?,
        Op::Relu(x) => get(x).map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::Step(x) => get(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        Op::Tanh(x) => get(x).map(f64::tanh),
        Op::Exp(x) => get(x).map(f64::exp),
        Op::Ln(x) => get(x).map(f64::ln),
        Op::Sqrt(x) => get(x).map(f64::sqrt),
        Op::Abs(x) => get(x).map(f64::abs),
        Op::Sign(x) => get(x).map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Square(x) => get(x).map(|v| v * v),
        Op::SumAll(x) => Tensor::scalar(get(x).data().iter().sum()),
        Op::SumRows(x) => {
            let t = get(x);
            let (r, c) = require_matrix(t, "sum_rows input")?;
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            Tensor::from_parts(vec![c], out)
        }
        Op::SumCols(x) => {
            let t = get(x);
            let (r, _) = require_matrix(t, "sum_cols input")?;
            Tensor::from_parts(vec![r], (0..r).map(|i| t.row(i).iter().sum()).collect())
        }
        Op::Broadcast { x, ref shape } => {
            let t = get(x);
            let n: usize = shape.iter().product();
            if t.len() == 1 && t.rank() <= 1 {
                Tensor::full(shape, t.data()[0])
            } else if t.rank() == 1 && shape.len() == 2 && shape[1] == t.len() {
                let mut data = Vec::with_capacity(n);
                for _ in 0..shape[0] {
                    data.extend_from_slice(t.data());
                }
                Tensor::from_parts(shape.clone(), data)
            } else {
                return Err(format!("cannot broadcast {:?} to {:?}", t.shape(), shape));
            }
        }
        Op::BroadcastCols { x, cols } => {
            let t = get(x);
            if t.rank() != 1 {
                return Err(format!("broadcast_cols needs a vector, found {:?}", t.shape()));
            }
            let mut data = Vec::with_capacity(t.len() * cols);
            for &v in t.data() {
                data.extend(std::iter::repeat_n(v, cols));
            }
            Tensor::from_parts(vec![t.len(), cols], data)
        }
        Op::Softmax(x) => {
            let t = get(x);
            if t.rank() > 1 || t.is_empty() {
                return Err(format!("softmax needs a non-empty vector, found {:?}", t.shape()));
            }
            let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            Tensor::from_parts(t.shape().to_vec(), e.into_iter().map(|v| v / total).collect())
        }
        Op::Select(x, index) => {
            let t = get(x);
            if t.rank() != 1 || index >= t.len() {
                return Err(format!("select {index} from shape {:?}", t.shape()));
            }
            Tensor::scalar(t.data()[index])
        }
        Op::Embed { x, index, len } => {
            let t = get(x);
            if !t.is_scalar() || index >= len {
                return Err(format!("embed {:?} at {index} of {len}", t.shape()));
            }
            let mut data = vec![0.0; len];
            data[index] = t.data()[0];
            Tensor::from_parts(vec![len], data)
        }
        Op::Column(x, col) => {
            let t = get(x);
            let (r, c) = require_matrix(t, "column input")?;
            if col >= c {
                return Err(format!("column {col} of {c}"));
            }
            Tensor::from_parts(vec![r], (0..r).map(|i| t.data()[i * c + col]).collect())
        }
        Op::EmbedColumn { x, col, cols } => {
            let t = get(x);
            if t.rank() != 1 || col >= cols {
                return Err(format!("embed_column {:?} at {col} of {cols}", t.shape()));
            }
            let r = t.len();
            let mut data = vec![0.0; r * cols];
            for (i, &v) in t.data().iter().enumerate() {
                data[i * cols + col] = v;
            }
            Tensor::from_parts(vec![r, cols], data)
        }
    };
    Ok(t)
}

fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor, String> {
    let (ar, ac) = require_matrix(a, "matmul lhs")?;
    let (br, bc) = require_matrix(b, "matmul rhs")?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(format!(
            "inner dimensions differ: {:?}{} x {:?}{}",
            a.shape(),
            if ta { "^T" } else { "" },
            b.shape(),
            if tb { "^T" } else { "" }
        ));
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        // SAFETY: strides and extents describe exactly the buffers of `a`,
        // `b`, and `out`, which do not alias.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_its_derivative() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        assert_eq!(tape.item(y).unwrap(), 9.0);
        let g = tape.gradient(y, &[x]).unwrap();
        assert_eq!(g[x].item().unwrap(), 6.0);
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(0.0));
        let y = tape.tanh(x).unwrap();
        let g = tape.gradient(y, &[x]).unwrap();
        assert_eq!(g[x].item().unwrap(), 1.0);
    }

    #[test]
    fn subgradients_at_zero_are_zero() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::vector(vec![0.0, 0.0]));
        let r = tape.relu(x).unwrap();
        let a = tape.abs(x).unwrap();
        let s = tape.add(r, a).unwrap();
        let s = tape.sum(s).unwrap();
        let g = tape.gradient(s, &[x]).unwrap();
        assert_eq!(g[x].data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_derivative_of_cube() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(2.0));
        let x2 = tape.square(x).unwrap();
        let x3 = tape.mul(x2, x).unwrap();
        let dx = tape.gradient_as_nodes(x3, &[x]).unwrap()[0];
        assert_eq!(tape.item(dx).unwrap(), 12.0);
        let g = tape.gradient(dx, &[x]).unwrap();
        assert_eq!(g[x].item().unwrap(), 12.0);
    }

    #[test]
    fn penalty_of_linear_map() {
        // d/dw ||d/dx (w x)||^2 = d/dw w^2 = 2w
        let mut tape = Tape::new();
        let w = tape.variable("w", Tensor::scalar(3.0));
        let x = tape.variable("x", Tensor::scalar(2.0));
        let wx = tape.mul(w, x).unwrap();
        let dx = tape.gradient_as_nodes(wx, &[x]).unwrap()[0];
        let pen = tape.square(dx).unwrap();
        let g = tape.gradient(pen, &[w]).unwrap();
        assert_eq!(g[w].item().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::vector(vec![1.0, 2.0]));
        let y = tape.square(x).unwrap();
        assert!(matches!(
            tape.gradient(y, &[x]),
            Err(Error::NotScalar { .. })
        ));
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(1.0));
        let y = tape.square(x).unwrap();
        assert!(matches!(
            tape.gradient(y, &[Var(99)]),
            Err(Error::UnknownNode(99))
        ));
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut tape = Tape::new();
        let a = tape.variable("a", Tensor::zeros(&[2, 3]));
        let b = tape.variable("b", Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::NodeShape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("expected a shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(0.0));
        assert!(matches!(tape.ln(x), Err(Error::NonFinite { node: 1, .. })));
    }

    #[test]
    fn replay_rebinds_and_reports_unbound() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(1.0));
        let y = tape.square(x).unwrap();
        let y = tape.add(y, c).unwrap();
        let out = tape.evaluate(&[("x", Tensor::scalar(4.0))]).unwrap();
        assert_eq!(out[y].item().unwrap(), 17.0);
        assert!(matches!(tape.evaluate(&[]), Err(Error::Unbound(_))));
        let bad = tape.evaluate(&[("x", Tensor::scalar(f64::NAN))]);
        assert!(matches!(bad, Err(Error::NonFinite { node: 0, .. })));
    }

    #[test]
    fn replay_reports_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.variable("a", Tensor::zeros(&[2, 3]));
        let b = tape.variable("b", Tensor::zeros(&[3, 1]));
        tape.matmul(a, b).unwrap();
        let res = tape.evaluate(&[("a", Tensor::zeros(&[2, 2])), ("b", Tensor::zeros(&[3, 1]))]);
        assert!(matches!(res, Err(Error::NodeShape { node: 2, .. })));
    }

    #[test]
    fn gradient_of_unreachable_variable_is_zero() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::vector(vec![1.0, 2.0]));
        let z = tape.variable("z", Tensor::scalar(5.0));
        let y = tape.square(z).unwrap();
        let g = tape.gradient(y, &[x, z]).unwrap();
        assert_eq!(g[x].data(), &[0.0, 0.0]);
        assert_eq!(g[z].item().unwrap(), 10.0);
    }

    #[test]
    fn gradient_with_respect_to_an_intermediate() {
        let mut tape = Tape::new();
        let x = tape.variable("x", Tensor::scalar(1.5));
        let h = tape.scale(x, 4.0).unwrap();
        let y = tape.square(h).unwrap();
        let g = tape.gradient(y, &[h]).unwrap();
        assert_eq!(g[h].item().unwrap(), 12.0);
    }

    #[test]
    fn distance_is_zero_at_coincident_points() {
        let mut tape = Tape::new();
        let a = tape.variable("a", Tensor::vector(vec![0.3, -1.2]));
        let d = tape.l2_distance(a, a).unwrap();
        assert!(tape.item(d).unwrap().abs() < 1e-15);
        let g = tape.gradient(d, &[a]).unwrap();
        assert_eq!(g[a].data(), &[0.0, 0.0]);
    }
}

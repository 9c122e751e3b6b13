//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! Every forward computation is recorded on a [`Tape`] as an append-only list
//! of nodes. A [`Var`] is a handle into that list. Calling [`Tape::backward`]
//! on a scalar node walks the tape in reverse and accumulates
//! `d output / d node` into every reachable node.
//!
//! Storage is row-major. There is no broadcasting: every binary operation
//! requires operands of identical shape, and vectors are `n x 1` columns.
//!
//! ```
//! use artree::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x)[0], 6.0);
//! ```

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: expected a vector, got {shape}")]
    NotAVector { op: &'static str, shape: Shape },
    #[error("{op}: value {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward requires a scalar output, got {0}")]
    NonScalar(Shape),
    #[error("{op}: index {index} out of range for length {len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("variable belongs to a different tape")]
    ForeignVar,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Two-dimensional shape. Vectors are `n x 1`, scalars `1 x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub const fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub const fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// A dense row-major array that is not (yet) recorded on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` does not match the shape.
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data does not fill shape {shape}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(Shape::scalar(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::new(Shape::vector(data.len()), data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(Shape::new(rows, cols), data)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape,
            data: (0..shape.len()).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.shape.cols..(r + 1) * self.shape.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    /// Position of the node on its tape.
    pub fn tape_index(&self) -> usize {
        self.id
    }
}

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    Log,
    Exp,
    Sqrt,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
}

impl ElementwiseOp {
    fn arity(self) -> usize {
        match self {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul | ElementwiseOp::Div => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Sigmoid => "sigmoid",
            ElementwiseOp::Tanh => "tanh",
            ElementwiseOp::Relu => "relu",
            ElementwiseOp::Abs => "abs",
            ElementwiseOp::Log => "log",
            ElementwiseOp::Exp => "exp",
            ElementwiseOp::Sqrt => "sqrt",
            ElementwiseOp::Neg => "neg",
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Div => "div",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Unary(ElementwiseOp, usize),
    Binary(ElementwiseOp, usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    LogSoftmax(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Row { table: usize, row: usize },
    Sum(usize),
    LinComb(Vec<(usize, f64)>),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Shape,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Append-only record of one forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of a plain slice.
pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.id)
    }

    fn push(&mut self, shape: Shape, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            op,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    /// Records an input node.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let Tensor { shape, data } = tensor;
        self.push(shape, data, Op::Leaf)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.leaf(Tensor::vector(data))
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        self.leaf(Tensor::zeros(shape))
    }

    /// Records a leaf holding a copy of `v`'s value, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.check(v)?;
        let node = &self.nodes[i];
        let t = Tensor::new(node.shape, node.value.clone());
        Ok(self.leaf(t))
    }

    /// Panics if `v` is not from this tape.
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.check(v).expect("foreign var")].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[self.check(v).expect("foreign var")].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec())
    }

    /// Accumulated gradient, or zeros if `v` was not reached by `backward`.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let node = &self.nodes[self.check(v).expect("foreign var")];
        node.grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.shape.len()])
    }

    pub fn has_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("foreign var")].grad.is_some()
    }

    /// Smallest `|x|` over the inputs of recorded `relu` and `abs` nodes, or
    /// infinity when there are none. Finite differences with a step larger
    /// than this straddle a point where the tape is not differentiable.
    pub fn kink_distance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Unary(ElementwiseOp::Relu | ElementwiseOp::Abs, src) => Some(src),
                _ => None,
            })
            .flat_map(|src| self.nodes[src].value.iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].shape, self.nodes[ib].shape);
        if sa.cols != sb.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa.rows, sa.cols, sb.cols);
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let arow = &av[r * k..(r + 1) * k];
            let orow = &mut out[r * n..(r + 1) * n];
            for (p, &a_rp) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a_rp * b;
                }
            }
        }
        Ok(self.push(Shape::new(m, n), out, Op::MatMul(ia, ib)))
    }

    /// Applies `op` to one or two equally shaped operands.
    pub fn elementwise(&mut self, op: ElementwiseOp, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(AutodiffError::Empty(op.name()));
        }
        if op.arity() == 1 {
            let i = self.check(operands[0])?;
            let x = &self.nodes[i].value;
            let shape = self.nodes[i].shape;
            let out: Vec<f64> = match op {
                ElementwiseOp::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
                ElementwiseOp::Tanh => x.iter().map(|v| v.tanh()).collect(),
                ElementwiseOp::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                ElementwiseOp::Abs => x.iter().map(|v| v.abs()).collect(),
                ElementwiseOp::Exp => x.iter().map(|v| v.exp()).collect(),
                ElementwiseOp::Neg => x.iter().map(|v| -v).collect(),
                ElementwiseOp::Log => {
                    if let Some(&bad) = x.iter().find(|&&v| !(v > 0.0)) {
                        return Err(AutodiffError::Domain { op: "log", value: bad });
                    }
                    x.iter().map(|v| v.ln()).collect()
                }
                ElementwiseOp::Sqrt => {
                    if let Some(&bad) = x.iter().find(|&&v| !(v > 0.0)) {
                        return Err(AutodiffError::Domain { op: "sqrt", value: bad });
                    }
                    x.iter().map(|v| v.sqrt()).collect()
                }
                _ => unreachable!(),
            };
            return Ok(self.push(shape, out, Op::Unary(op, i)));
        }
        let (ia, ib) = (self.check(operands[0])?, self.check(operands[1])?);
        let (sa, sb) = (self.nodes[ia].shape, self.nodes[ib].shape);
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op: op.name(),
                left: sa,
                right: sb,
            });
        }
        let a = &self.nodes[ia].value;
        let b = &self.nodes[ib].value;
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
            ElementwiseOp::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        if op == ElementwiseOp::Div {
            if let Some(&bad) = b.iter().find(|&&v| v == 0.0) {
                return Err(AutodiffError::Domain { op: "div", value: bad });
            }
        }
        let out = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(sa, out, Op::Binary(op, ia, ib)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Relu, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Abs, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Log, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Exp, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sqrt, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Neg, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Div, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let i = self.check(a)?;
        let out = self.nodes[i].value.iter().map(|v| v * factor).collect();
        Ok(self.push(self.nodes[i].shape, out, Op::Scale(i, factor)))
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let i = self.vector_operand("softmax", v)?;
        let out = softmax_values(&self.nodes[i].value);
        Ok(self.push(self.nodes[i].shape, out, Op::Softmax(i)))
    }

    pub fn log_softmax(&mut self, v: Var) -> Result<Var> {
        let i = self.vector_operand("log_softmax", v)?;
        let lse = log_sum_exp(&self.nodes[i].value);
        let out = self.nodes[i].value.iter().map(|x| x - lse).collect();
        Ok(self.push(self.nodes[i].shape, out, Op::LogSoftmax(i)))
    }

    fn vector_operand(&self, op: &'static str, v: Var) -> Result<usize> {
        let i = self.check(v)?;
        let shape = self.nodes[i].shape;
        if !shape.is_vector() {
            return Err(AutodiffError::NotAVector { op, shape });
        }
        if shape.is_empty() {
            return Err(AutodiffError::Empty(op));
        }
        Ok(i)
    }

    /// Concatenates vectors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Empty("concat"));
        }
        let mut ids = Vec::with_capacity(parts.len());
        let mut out = Vec::new();
        for &p in parts {
            let i = self.check(p)?;
            let shape = self.nodes[i].shape;
            if !shape.is_vector() {
                return Err(AutodiffError::NotAVector { op: "concat", shape });
            }
            out.extend_from_slice(&self.nodes[i].value);
            ids.push(i);
        }
        Ok(self.push(Shape::vector(out.len()), out, Op::Concat(ids)))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        let i = self.check(v)?;
        let shape = self.nodes[i].shape;
        if !shape.is_vector() {
            return Err(AutodiffError::NotAVector { op: "slice", shape });
        }
        if len == 0 {
            return Err(AutodiffError::Empty("slice"));
        }
        if start + len > shape.rows {
            return Err(AutodiffError::OutOfRange {
                op: "slice",
                index: start + len - 1,
                len: shape.rows,
            });
        }
        let out = self.nodes[i].value[start..start + len].to_vec();
        Ok(self.push(Shape::vector(len), out, Op::Slice { src: i, start }))
    }

    /// Single element of a vector as a scalar.
    pub fn pick(&mut self, v: Var, index: usize) -> Result<Var> {
        self.slice(v, index, 1)
    }

    /// Row `row` of a matrix, returned as a column vector.
    pub fn row(&mut self, table: Var, row: usize) -> Result<Var> {
        let i = self.check(table)?;
        let shape = self.nodes[i].shape;
        if row >= shape.rows {
            return Err(AutodiffError::OutOfRange {
                op: "row",
                index: row,
                len: shape.rows,
            });
        }
        let out = self.nodes[i].value[row * shape.cols..(row + 1) * shape.cols].to_vec();
        Ok(self.push(Shape::vector(shape.cols), out, Op::Row { table: i, row }))
    }

    pub fn sum(&mut self, v: Var) -> Result<Var> {
        let i = self.check(v)?;
        let total = self.nodes[i].value.iter().sum();
        Ok(self.push(Shape::scalar(), vec![total], Op::Sum(i)))
    }

    /// `sum_k coeff_k * term_k` over equally shaped terms.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(AutodiffError::Empty("lin_comb"));
        };
        let shape = self.nodes[self.check(first)?].shape;
        let mut out = vec![0.0; shape.len()];
        let mut ids = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            let i = self.check(v)?;
            let s = self.nodes[i].shape;
            if s != shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: "lin_comb",
                    left: shape,
                    right: s,
                });
            }
            for (o, x) in out.iter_mut().zip(&self.nodes[i].value) {
                *o += c * x;
            }
            ids.push((i, c));
        }
        Ok(self.push(shape, out, Op::LinComb(ids)))
    }

    /// Sum of several equally shaped nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, 1.0)).collect();
        self.lin_comb(&weighted)
    }

    /// Accumulates `d output / d node` into every node reachable from `output`.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out = self.check(output)?;
        let shape = self.nodes[out].shape;
        if !shape.is_scalar() {
            return Err(AutodiffError::NonScalar(shape));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        pending[out] = Some(vec![1.0]);
        // Nodes after `out` cannot contribute to it.
        for idx in (0..=out).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            add_into(&mut self.nodes[idx], &g);
            self.propagate(idx, &g, &mut pending);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut send = |target: usize, contrib: Vec<f64>| match &mut pending[target] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        };
        // Adds `g` into `target[offset..]` without materializing a full-size contribution.
        let send_range = |pending: &mut [Option<Vec<f64>>], target: usize, offset: usize| {
            let acc = pending[target].get_or_insert_with(|| vec![0.0; self.nodes[target].shape.len()]);
            acc[offset..offset + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].shape, self.nodes[*b].shape);
                let (m, k, n) = (sa.rows, sa.cols, sb.cols);
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let a_rp = av[r * k + p];
                        if a_rp == 0.0 {
                            continue;
                        }
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += a_rp * gv;
                        }
                    }
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Unary(kind, a) => {
                let x = &self.nodes[*a].value;
                let y = &node.value;
                let d: Vec<f64> = match kind {
                    ElementwiseOp::Sigmoid => y.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect(),
                    ElementwiseOp::Tanh => y.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect(),
                    ElementwiseOp::Relu => x.iter().zip(g).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                    ElementwiseOp::Abs => x
                        .iter()
                        .zip(g)
                        .map(|(x, g)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                        .collect(),
                    ElementwiseOp::Log => x.iter().zip(g).map(|(x, g)| g / x).collect(),
                    ElementwiseOp::Exp => y.iter().zip(g).map(|(y, g)| g * y).collect(),
                    ElementwiseOp::Sqrt => y.iter().zip(g).map(|(y, g)| g * 0.5 / y).collect(),
                    ElementwiseOp::Neg => g.iter().map(|g| -g).collect(),
                    _ => unreachable!(),
                };
                send(*a, d);
            }
            Op::Binary(kind, a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    ElementwiseOp::Add => (g.to_vec(), g.to_vec()),
                    ElementwiseOp::Sub => (g.to_vec(), g.iter().map(|g| -g).collect()),
                    ElementwiseOp::Mul => (
                        g.iter().zip(bv).map(|(g, b)| g * b).collect(),
                        g.iter().zip(av).map(|(g, a)| g * a).collect(),
                    ),
                    ElementwiseOp::Div => (
                        g.iter().zip(bv).map(|(g, b)| g / b).collect(),
                        g.iter()
                            .zip(av.iter().zip(bv))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect(),
                    ),
                    _ => unreachable!(),
                };
                send(*a, da);
                send(*b, db);
            }
            Op::Scale(a, factor) => send(*a, g.iter().map(|g| g * factor).collect()),
            Op::Softmax(a) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                send(*a, y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect());
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                send(*a, node.value.iter().zip(g).map(|(y, g)| g - y.exp() * total).collect());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].shape.len();
                    send(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Slice { src, start } => send_range(pending, *src, *start),
            Op::Row { table, row } => send_range(pending, *table, row * self.nodes[*table].shape.cols),
            Op::Sum(a) => send(*a, vec![g[0]; self.nodes[*a].shape.len()]),
            Op::LinComb(terms) => {
                for &(i, c) in terms {
                    send(i, g.iter().map(|g| g * c).collect());
                }
            }
        }
    }
}

fn add_into(node: &mut Node, g: &[f64]) {
    match &mut node.grad {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `f` builds a scalar on a fresh tape from leaves holding `params`. Returns the
/// maximum over all coordinates of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (p, &leaf) in leaves.iter().enumerate() {
        let analytic = tape.grad(leaf);
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe[p].data[k];
            probe[p].data[k] = original + eps;
            let plus = evaluate(&probe)?;
            probe[p].data[k] = original - eps;
            let minus = evaluate(&probe)?;
            probe[p].data[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

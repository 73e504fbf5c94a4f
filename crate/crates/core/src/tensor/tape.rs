//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a 1x1 result walks the record in reverse and
//! accumulates adjoints, so shared subexpressions receive the sum of all
//! their downstream contributions. Tapes are cheap; build a fresh one per
//! forward pass.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use rand::Rng;

use super::Matrix;
use crate::error::{shape_err, Error, Result};

/// Default negative-side slope of [`Var::leaky_relu`].
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a + 1·bias` with `bias` a single row.
    AddRow(usize, usize),
    /// Row `r` of `a` multiplied by entry `r` of a column.
    ScaleRows(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Affine(usize, f64),
    Dropout(usize, Matrix),
    Concat(usize, usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    SegmentSoftmax(usize, Rc<[usize]>),
    Sum(usize),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Elementwise operation selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Sub,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    /// Inverted dropout with drop probability `p`.
    Dropout(f64),
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an input value. Parameters and constants are both leaves.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Matrix) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        adj[loss.id] = Some(Matrix::ones(1, 1));

        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(&nodes[*b].value);
                    let gb = nodes[*a].value.matmul_tn(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, &nodes[*b].value);
                    let gb = hadamard(&g, &nodes[*a].value);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let mut gbias = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gbias.row_mut(0).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *bias, gbias);
                }
                Op::ScaleRows(a, s) => {
                    let av = &nodes[*a].value;
                    let sv = &nodes[*s].value;
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows(), 1);
                    for r in 0..g.rows() {
                        let factor = sv.get(r, 0);
                        let mut dot = 0.0;
                        for (c, x) in ga.row_mut(r).iter_mut().enumerate() {
                            dot += *x * av.get(r, c);
                            *x *= factor;
                        }
                        gs.set(r, 0, dot);
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *s, gs);
                }
                Op::Sigmoid(a) => {
                    let ga = g
                        .zip_map(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))
                        .expect("shape fixed at record time");
                    accumulate(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g
                        .zip_map(&node.value, "tanh", |g, y| g * (1.0 - y * y))
                        .expect("shape fixed at record time");
                    accumulate(&mut adj, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let ga = g
                        .zip_map(&nodes[*a].value, "leaky_relu", |g, x| if x > 0.0 { g } else { g * slope })
                        .expect("shape fixed at record time");
                    accumulate(&mut adj, *a, ga);
                }
                Op::Affine(a, scale) => accumulate(&mut adj, *a, g.scale(*scale)),
                Op::Dropout(a, mask) => accumulate(&mut adj, *a, hadamard(&g, mask)),
                Op::Concat(a, b) => {
                    let left = nodes[*a].value.cols();
                    let right = nodes[*b].value.cols();
                    let mut ga = Matrix::zeros(g.rows(), left);
                    let mut gb = Matrix::zeros(g.rows(), right);
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        ga.row_mut(r).copy_from_slice(&row[..left]);
                        gb.row_mut(r).copy_from_slice(&row[left..]);
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::GatherRows(a, index) => {
                    let src = &nodes[*a].value;
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (e, &r) in index.iter().enumerate() {
                        for (t, v) in ga.row_mut(r).iter_mut().zip(g.row(e)) {
                            *t += v;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ScatterAddRows(a, index) => {
                    let mut ga = Matrix::zeros(index.len(), g.cols());
                    for (e, &r) in index.iter().enumerate() {
                        ga.row_mut(e).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SegmentSoftmax(a, segment) => {
                    let y = &node.value;
                    let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut weighted = vec![0.0; segments];
                    for (e, &s) in segment.iter().enumerate() {
                        weighted[s] += y.get(e, 0) * g.get(e, 0);
                    }
                    let ga = Matrix::from_fn(y.rows(), 1, |e, _| {
                        y.get(e, 0) * (g.get(e, 0) - weighted[segment[e]])
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
            }
            adj[id] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    a.zip_map(b, "mul", |x, y| x * y).expect("shape fixed at record time")
}

fn accumulate(adj: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.adjoints.get(v.id).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zeros when unreachable.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = v.shape();
            Matrix::zeros(r, c)
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(Op::MatMul(self.id, other.id), v))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.tape.push(Op::Add(self.id, other.id), v))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.tape.push(Op::Sub(self.id, other.id), v))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.tape.push(Op::Mul(self.id, other.id), v))
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let v = {
            let a = self.value();
            let b = bias.value();
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(shape_err("add_row", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                for (o, x) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                    *o += x;
                }
            }
            out
        };
        Ok(self.tape.push(Op::AddRow(self.id, bias.id), v))
    }

    /// Multiplies row `r` by `factors[r]`, where `factors` is a column.
    pub fn scale_rows(self, factors: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&factors);
        let v = {
            let a = self.value();
            let s = factors.value();
            if s.cols() != 1 || s.rows() != a.rows() {
                return Err(shape_err("scale_rows", a.shape(), s.shape()));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                let f = s.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|x| *x *= f);
            }
            out
        };
        Ok(self.tape.push(Op::ScaleRows(self.id, factors.id), v))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.tape.push(Op::Sigmoid(self.id), v)
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.tape.push(Op::Tanh(self.id), v)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.tape.push(Op::LeakyRelu(self.id, slope), v)
    }

    /// `scale * self + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let v = self.value().map(|x| scale * x + shift);
        self.tape.push(Op::Affine(self.id, scale), v)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    /// `1 - self`.
    pub fn one_minus(self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, rng: &mut R, training: bool) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(self);
        }
        let (r, c) = self.shape();
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
        let v = hadamard(&self.value(), &mask);
        Ok(self.tape.push(Op::Dropout(self.id, mask), v))
    }

    /// Column concatenation `self || other`.
    pub fn concat(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().hcat(&other.value())?;
        Ok(self.tape.push(Op::Concat(self.id, other.id), v))
    }

    /// Row `e` of the result is row `index[e]` of `self`.
    pub fn gather_rows(self, index: Rc<[usize]>) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            let mut out = Matrix::zeros(index.len(), a.cols());
            for (e, &r) in index.iter().enumerate() {
                if r >= a.rows() {
                    return Err(Error::NodeOutOfRange { index: r, n: a.rows() });
                }
                out.row_mut(e).copy_from_slice(a.row(r));
            }
            out
        };
        Ok(self.tape.push(Op::GatherRows(self.id, index), v))
    }

    /// Sums row `e` of `self` into row `index[e]` of an `rows x cols` result.
    pub fn scatter_add_rows(self, index: Rc<[usize]>, rows: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if a.rows() != index.len() {
                return Err(shape_err("scatter_add_rows", a.shape(), (index.len(), a.cols())));
            }
            let mut out = Matrix::zeros(rows, a.cols());
            for (e, &r) in index.iter().enumerate() {
                if r >= rows {
                    return Err(Error::NodeOutOfRange { index: r, n: rows });
                }
                for (o, x) in out.row_mut(r).iter_mut().zip(a.row(e)) {
                    *o += x;
                }
            }
            out
        };
        Ok(self.tape.push(Op::ScatterAddRows(self.id, index), v))
    }

    /// Softmax of a score column within groups of rows sharing `segment[e]`.
    pub fn segment_softmax(self, segment: Rc<[usize]>) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if a.cols() != 1 || a.rows() != segment.len() {
                return Err(shape_err("segment_softmax", a.shape(), (segment.len(), 1)));
            }
            segment_softmax(a.as_slice(), &segment)
        };
        Ok(self.tape.push(Op::SegmentSoftmax(self.id, segment), Matrix::column(&v)))
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Op::Sum(self.id), Matrix::filled(1, 1, s))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable grouped softmax.
pub(crate) fn segment_softmax(scores: &[f64], segment: &[usize]) -> Vec<f64> {
    let groups = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; groups];
    for (&s, &g) in scores.iter().zip(segment) {
        max[g] = max[g].max(s);
    }
    let mut out: Vec<f64> = scores.iter().zip(segment).map(|(&s, &g)| (s - max[g]).exp()).collect();
    let mut total = vec![0.0; groups];
    for (&e, &g) in out.iter().zip(segment) {
        total[g] += e;
    }
    for (e, &g) in out.iter_mut().zip(segment) {
        *e /= total[g];
    }
    out
}

/// Applies an elementwise operation by tag. Binary tags require `b`.
pub fn elementwise<'t, R: Rng + ?Sized>(
    tag: Elementwise,
    a: Var<'t>,
    b: Option<Var<'t>>,
    rng: &mut R,
    training: bool,
) -> Result<Var<'t>> {
    let rhs = |b: Option<Var<'t>>| b.ok_or_else(|| Error::InvalidArgument(format!("{tag:?} needs two operands")));
    match tag {
        Elementwise::Add => a.add(rhs(b)?),
        Elementwise::Mul => a.mul(rhs(b)?),
        Elementwise::Sub => a.sub(rhs(b)?),
        Elementwise::Sigmoid => Ok(a.sigmoid()),
        Elementwise::Tanh => Ok(a.tanh()),
        Elementwise::LeakyRelu(slope) => Ok(a.leaky_relu(slope)),
        Elementwise::Dropout(p) => a.dropout(p, rng, training),
    }
}

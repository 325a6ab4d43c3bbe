//! Reverse-mode differentiation over static graphs of small dense matrices.
//!
//! A [`Graph`] is built once with fixed shapes and then evaluated many times
//! against different parameter vectors. Parameters enter as slices of a flat
//! [`ParamVector`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::{Cholesky, Tensor};
use crate::error::{Error, Result};
use crate::kernel::{matern_parts, Smoothness};

/// Named block of a parameter vector, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vector from stored parts, checking that the segments tile it.
    pub fn from_parts(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for s in &segments {
            if s.offset != offset {
                return Err(Error::Parse(alloc::format!("segment {} starts at {} not {offset}", s.name, s.offset)));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return Err(Error::Parse(alloc::format!("segments cover {offset} of {} values", values.len())));
        }
        Ok(Self { values, segments })
    }

    /// Appends a segment initialized by `init`.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize, mut init: impl FnMut() -> f64) -> Segment {
        assert!(self.segment(name).is_none(), "duplicate segment {name}");
        let seg = Segment { name: name.to_string(), offset: self.values.len(), rows, cols };
        self.values.extend((0..rows * cols).map(|_| init()));
        self.segments.push(seg.clone());
        seg
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.range()]
    }

    pub fn get_mut(&mut self, seg: &Segment) -> &mut [f64] {
        &mut self.values[seg.range()]
    }

    pub fn tensor(&self, seg: &Segment) -> Tensor {
        Tensor::from_vec(seg.rows, seg.cols, self.get(seg).to_vec())
    }

    /// True when both vectors have identical segment layouts.
    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param { offset: usize },
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MulScalar(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Silu(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    MeanRows(NodeId),
    Gather(NodeId, Vec<u32>),
    Scatter { src: NodeId, index: Vec<u32>, weights: Vec<f64> },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SqDist(NodeId, NodeId),
    Matern { r2: NodeId, log_length: NodeId, log_signal: NodeId, nu: Smoothness },
    AddDiag { a: NodeId, log_noise: NodeId },
    SpdSolve(NodeId, NodeId),
    LogDetSpd(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param { .. } => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Silu(_) => "silu",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_rows",
            Op::Gather(..) => "gather",
            Op::Scatter { .. } => "scatter",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SqDist(..) => "sq_dist",
            Op::Matern { .. } => "matern",
            Op::AddDiag { .. } => "add_diag",
            Op::SpdSolve(..) => "spd_solve",
            Op::LogDetSpd(_) => "log_det_spd",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: (usize, usize),
}

/// Static computation graph with a single scalar output.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    output: Option<NodeId>,
    jitter: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), output: None, jitter: 1e-10 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    /// Constant added to every `add_diag` node on top of the noise term.
    pub fn set_jitter(&mut self, jitter: f64) {
        self.jitter = jitter;
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert_eq!(self.shape(id), (1, 1), "graph output must be scalar");
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, seg: &Segment) -> NodeId {
        self.push(Op::Param { offset: seg.offset }, (seg.rows, seg.cols))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape();
        self.push(Op::Const(t), shape)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> (usize, usize) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: shape mismatch");
        self.shape(a)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "add");
        self.push(Op::Add(a, b), s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "sub");
        self.push(Op::Sub(a, b), s)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "mul");
        self.push(Op::Mul(a, b), s)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let shape = self.shape(a);
        self.push(Op::Scale(a, s), shape)
    }

    /// `a` times the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar needs a scalar");
        let shape = self.shape(a);
        self.push(Op::MulScalar(a, s), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: inner dimensions");
        self.push(Op::MatMul(a, b), (ar, bc))
    }

    /// Adds the 1×c row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: row shape");
        self.push(Op::AddRow(a, row), (r, c))
    }

    /// `x · sigmoid(x)`, a rectifier with a smooth tail.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Silu(a), s)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Log(a), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Exp(a), s)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), (1, 1))
    }

    /// Column means as a 1×c row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(r > 0, "mean_rows of an empty matrix");
        self.push(Op::MeanRows(a), (1, c))
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather(&mut self, a: NodeId, index: Vec<u32>) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(index.iter().all(|&i| (i as usize) < r), "gather index out of range");
        let n = index.len();
        self.push(Op::Gather(a, index), (n, c))
    }

    /// Result row `index[i]` accumulates `weights[i]` times row `i` of `src`.
    pub fn scatter(&mut self, src: NodeId, index: Vec<u32>, weights: Vec<f64>, rows: usize) -> NodeId {
        let (r, c) = self.shape(src);
        assert_eq!(index.len(), r, "scatter index length");
        assert_eq!(weights.len(), r, "scatter weight length");
        assert!(index.iter().all(|&i| (i as usize) < rows), "scatter index out of range");
        self.push(Op::Scatter { src, index, weights }, (rows, c))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let r = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == r), "concat_cols: row counts");
        let c = parts.iter().map(|&p| self.shape(p).1).sum();
        self.push(Op::ConcatCols(parts), (r, c))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let c = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == c), "concat_rows: column counts");
        let r = parts.iter().map(|&p| self.shape(p).0).sum();
        self.push(Op::ConcatRows(parts), (r, c))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and `b`.
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, bc, "sq_dist: widths");
        self.push(Op::SqDist(a, b), (ar, br))
    }

    /// Matérn kernel applied elementwise to squared distances, with scalar
    /// log length scale and log signal variance.
    pub fn matern(&mut self, r2: NodeId, log_length: NodeId, log_signal: NodeId, nu: Smoothness) -> NodeId {
        assert_eq!(self.shape(log_length), (1, 1));
        assert_eq!(self.shape(log_signal), (1, 1));
        let s = self.shape(r2);
        self.push(Op::Matern { r2, log_length, log_signal, nu }, s)
    }

    /// `a + (exp(log_noise) + jitter) I`.
    pub fn add_diag(&mut self, a: NodeId, log_noise: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, c, "add_diag needs a square matrix");
        assert_eq!(self.shape(log_noise), (1, 1));
        self.push(Op::AddDiag { a, log_noise }, (r, c))
    }

    /// `A⁻¹ B` for symmetric positive-definite `A`.
    pub fn spd_solve(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, c, "spd_solve needs a square matrix");
        assert_eq!(self.shape(b).0, r, "spd_solve: right-hand side rows");
        let s = self.shape(b);
        self.push(Op::SpdSolve(a, b), s)
    }

    pub fn log_det_spd(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, c, "log_det_spd needs a square matrix");
        self.push(Op::LogDetSpd(a), (1, 1))
    }

    /// Runs the forward pass and keeps every intermediate.
    pub fn forward(&self, theta: &ParamVector) -> Result<Tape> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut factors: Vec<Option<Cholesky>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let v = |id: NodeId| &values[id.0];
            let out = match &node.op {
                Op::Param { offset } => {
                    let (r, c) = node.shape;
                    Tensor::from_vec(r, c, theta.values()[*offset..offset + r * c].to_vec())
                }
                Op::Const(t) => t.clone(),
                Op::Add(a, b) => zip(v(*a), v(*b), |x, y| x + y),
                Op::Sub(a, b) => zip(v(*a), v(*b), |x, y| x - y),
                Op::Mul(a, b) => zip(v(*a), v(*b), |x, y| x * y),
                Op::Scale(a, s) => v(*a).scale(*s),
                Op::MulScalar(a, s) => v(*a).scale(v(*s)[(0, 0)]),
                Op::MatMul(a, b) => v(*a).matmul(v(*b)),
                Op::AddRow(a, row) => {
                    let mut t = v(*a).clone();
                    let row = v(*row).data().to_vec();
                    for r in 0..t.rows() {
                        for (x, b) in t.row_mut(r).iter_mut().zip(&row) {
                            *x += b;
                        }
                    }
                    t
                }
                Op::Silu(a) => v(*a).map(|x| x * sigmoid(x)),
                Op::Log(a) => v(*a).map(libm::log),
                Op::Exp(a) => v(*a).map(libm::exp),
                Op::Sum(a) => Tensor::scalar(v(*a).sum()),
                Op::MeanRows(a) => {
                    let t = v(*a);
                    let mut out = Tensor::zeros(1, t.cols());
                    for r in 0..t.rows() {
                        for (o, x) in out.data_mut().iter_mut().zip(t.row(r)) {
                            *o += x;
                        }
                    }
                    out.scale(1.0 / t.rows() as f64)
                }
                Op::Gather(a, index) => {
                    let t = v(*a);
                    let mut out = Tensor::zeros(index.len(), t.cols());
                    for (i, &src) in index.iter().enumerate() {
                        out.row_mut(i).copy_from_slice(t.row(src as usize));
                    }
                    out
                }
                Op::Scatter { src, index, weights } => {
                    let t = v(*src);
                    let mut out = Tensor::zeros(node.shape.0, node.shape.1);
                    for (i, (&dst, &w)) in index.iter().zip(weights).enumerate() {
                        for (o, x) in out.row_mut(dst as usize).iter_mut().zip(t.row(i)) {
                            *o += w * x;
                        }
                    }
                    out
                }
                Op::ConcatCols(parts) => {
                    let mut out = Tensor::zeros(node.shape.0, node.shape.1);
                    let mut col = 0;
                    for p in parts {
                        let t = v(*p);
                        for r in 0..t.rows() {
                            out.row_mut(r)[col..col + t.cols()].copy_from_slice(t.row(r));
                        }
                        col += t.cols();
                    }
                    out
                }
                Op::ConcatRows(parts) => {
                    let mut data = Vec::with_capacity(node.shape.0 * node.shape.1);
                    for p in parts {
                        data.extend_from_slice(v(*p).data());
                    }
                    Tensor::from_vec(node.shape.0, node.shape.1, data)
                }
                Op::SqDist(a, b) => {
                    let (ta, tb) = (v(*a), v(*b));
                    let mut out = Tensor::zeros(ta.rows(), tb.rows());
                    for i in 0..ta.rows() {
                        for j in 0..tb.rows() {
                            out[(i, j)] = ta.row(i).iter().zip(tb.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                        }
                    }
                    out
                }
                Op::Matern { r2, log_length, log_signal, nu } => {
                    let ell = libm::exp(v(*log_length)[(0, 0)]);
                    let sf2 = libm::exp(v(*log_signal)[(0, 0)]);
                    v(*r2).map(|d| matern_parts(d, ell, sf2, *nu).value)
                }
                Op::AddDiag { a, log_noise } => {
                    let mut t = v(*a).clone();
                    let add = libm::exp(v(*log_noise)[(0, 0)]) + self.jitter;
                    for d in 0..t.rows() {
                        t[(d, d)] += add;
                    }
                    t
                }
                Op::SpdSolve(a, b) => {
                    let ch = factor(&mut factors, &values, *a, i)?;
                    ch.solve(v(*b))
                }
                Op::LogDetSpd(a) => {
                    let ch = factor(&mut factors, &values, *a, i)?;
                    Tensor::scalar(ch.log_det())
                }
            };
            if !out.is_finite() {
                return Err(Error::NonFinite { node: i, op: node.op.name() });
            }
            values.push(out);
        }
        Ok(Tape { values, factors })
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<f64> {
        let out = self.output.expect("graph output not set");
        Ok(self.forward(theta)?.values[out.0][(0, 0)])
    }

    /// Value of an arbitrary node.
    pub fn evaluate_node(&self, theta: &ParamVector, id: NodeId) -> Result<Tensor> {
        Ok(self.forward(theta)?.values.swap_remove(id.0))
    }

    /// Output value and its gradient with respect to every parameter.
    pub fn gradient(&self, theta: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let out = self.output.expect("graph output not set");
        let tape = self.forward(theta)?;
        let grad = self.backward(&tape, out, theta.len());
        Ok((tape.values[out.0][(0, 0)], grad))
    }

    fn backward(&self, tape: &Tape, out: NodeId, n_params: usize) -> Vec<f64> {
        let vals = &tape.values;
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(Tensor::scalar(1.0));
        let mut grad = vec![0.0; n_params];

        fn acc(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut adj[id.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Param { offset } => {
                    for (p, x) in grad[*offset..offset + g.data().len()].iter_mut().zip(g.data()) {
                        *p += x;
                    }
                }
                Op::Const(_) => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.scale(-1.0));
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, zip(&g, &vals[b.0], |x, y| x * y));
                    acc(&mut adj, *b, zip(&g, &vals[a.0], |x, y| x * y));
                }
                Op::Scale(a, s) => acc(&mut adj, *a, g.scale(*s)),
                Op::MulScalar(a, s) => {
                    let sv = vals[s.0][(0, 0)];
                    let ds = g.data().iter().zip(vals[a.0].data()).map(|(x, y)| x * y).sum();
                    acc(&mut adj, *s, Tensor::scalar(ds));
                    acc(&mut adj, *a, g.scale(sv));
                }
                Op::MatMul(a, b) => {
                    acc(&mut adj, *a, g.matmul_t(&vals[b.0]));
                    acc(&mut adj, *b, vals[a.0].t_matmul(&g));
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::Silu(a) => {
                    let d = zip(&g, &vals[a.0], |gx, x| {
                        let s = sigmoid(x);
                        gx * s * (1.0 + x * (1.0 - s))
                    });
                    acc(&mut adj, *a, d);
                }
                Op::Log(a) => acc(&mut adj, *a, zip(&g, &vals[a.0], |gx, x| gx / x)),
                Op::Exp(a) => acc(&mut adj, *a, zip(&g, &vals[i], |gx, y| gx * y)),
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut adj, *a, Tensor::filled(r, c, g[(0, 0)]));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut t = Tensor::zeros(r, c);
                    let row = g.scale(1.0 / r as f64);
                    for k in 0..r {
                        t.row_mut(k).copy_from_slice(row.data());
                    }
                    acc(&mut adj, *a, t);
                }
                Op::Gather(a, index) => {
                    let (r, c) = self.shape(*a);
                    let mut t = Tensor::zeros(r, c);
                    for (k, &src) in index.iter().enumerate() {
                        for (o, x) in t.row_mut(src as usize).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut adj, *a, t);
                }
                Op::Scatter { src, index, weights } => {
                    let (r, c) = self.shape(*src);
                    let mut t = Tensor::zeros(r, c);
                    for (k, (&dst, &w)) in index.iter().zip(weights).enumerate() {
                        for (o, x) in t.row_mut(k).iter_mut().zip(g.row(dst as usize)) {
                            *o = w * x;
                        }
                    }
                    acc(&mut adj, *src, t);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let mut t = Tensor::zeros(r, c);
                        for k in 0..r {
                            t.row_mut(k).copy_from_slice(&g.row(k)[col..col + c]);
                        }
                        col += c;
                        acc(&mut adj, *p, t);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let t = Tensor::from_vec(r, c, g.data()[start..start + r * c].to_vec());
                        start += r * c;
                        acc(&mut adj, *p, t);
                    }
                }
                Op::SqDist(a, b) => {
                    let (ta, tb) = (&vals[a.0], &vals[b.0]);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    for r in 0..ta.rows() {
                        for s in 0..tb.rows() {
                            let w = 2.0 * g[(r, s)];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..ta.cols() {
                                let d = w * (ta[(r, c)] - tb[(s, c)]);
                                ga[(r, c)] += d;
                                gb[(s, c)] -= d;
                            }
                        }
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Matern { r2, log_length, log_signal, nu } => {
                    let ell = libm::exp(vals[log_length.0][(0, 0)]);
                    let sf2 = libm::exp(vals[log_signal.0][(0, 0)]);
                    let d2 = &vals[r2.0];
                    let mut g_r2 = Tensor::zeros(d2.rows(), d2.cols());
                    let (mut g_ell, mut g_sf2) = (0.0, 0.0);
                    for (k, (&gx, &d)) in g.data().iter().zip(d2.data()).enumerate() {
                        let p = matern_parts(d, ell, sf2, *nu);
                        g_r2.data_mut()[k] = gx * p.d_r2;
                        g_ell += gx * p.d_log_length;
                        g_sf2 += gx * p.value;
                    }
                    acc(&mut adj, *r2, g_r2);
                    acc(&mut adj, *log_length, Tensor::scalar(g_ell));
                    acc(&mut adj, *log_signal, Tensor::scalar(g_sf2));
                }
                Op::AddDiag { a, log_noise } => {
                    let trace: f64 = (0..g.rows()).map(|d| g[(d, d)]).sum();
                    acc(&mut adj, *log_noise, Tensor::scalar(trace * libm::exp(vals[log_noise.0][(0, 0)])));
                    acc(&mut adj, *a, g);
                }
                Op::SpdSolve(a, b) => {
                    let ch = tape.factors[a.0].as_ref().expect("factor cached in forward pass");
                    let gb = ch.solve(&g);
                    let ga = gb.matmul_t(&vals[i]).scale(-1.0);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::LogDetSpd(a) => {
                    let ch = tape.factors[a.0].as_ref().expect("factor cached in forward pass");
                    acc(&mut adj, *a, ch.inverse().scale(g[(0, 0)]));
                }
            }
        }
        grad
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_vec(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn factor<'a>(
    factors: &'a mut [Option<Cholesky>],
    values: &[Tensor],
    a: NodeId,
    node: usize,
) -> Result<&'a Cholesky> {
    if factors[a.0].is_none() {
        factors[a.0] = Some(Cholesky::new(&values[a.0]).ok_or(Error::NotPositiveDefinite { node })?);
    }
    Ok(factors[a.0].as_ref().unwrap())
}

/// Forward-pass intermediates.
pub struct Tape {
    values: Vec<Tensor>,
    factors: Vec<Option<Cholesky>>,
}

impl Tape {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }
}

/// Largest relative discrepancy between the reverse-mode gradient and a
/// fourth-order central difference with the given step, over all coordinates.
pub fn check_gradient(g: &Graph, theta: &ParamVector, step: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..theta.len()).collect();
    check_gradient_at(g, theta, step, &coords)
}

/// As [`check_gradient`], restricted to the listed coordinates.
pub fn check_gradient_at(g: &Graph, theta: &ParamVector, step: f64, coords: &[usize]) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let (_, grad) = g.gradient(theta)?;
    let mut probe = theta.clone();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let x = theta.values()[i];
        let mut at = |offset: f64| {
            probe.values_mut()[i] = x + offset;
            g.evaluate(&probe)
        };
        // Five-point stencil: truncation error O(step^4), so a larger step
        // keeps round-off small without biasing the difference.
        let fd = (8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step);
        probe.values_mut()[i] = x;
        worst = worst.max((grad[i] - fd).abs() / (fd.abs() + 1e-12));
    }
    Ok(worst)
}

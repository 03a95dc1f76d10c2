//! Dense tensors plus a reverse-mode differentiation graph.
//!
//! Every operation appends a node to an append-only tape owned by a [`Graph`].
//! [`Var::backward`] walks the tape in reverse and *emits the vector-Jacobian
//! products as new graph nodes*, so gradients are themselves differentiable
//! and unrolled optimization steps can be differentiated through (the
//! second-order path of the self-tuner relies on this).
//!
//! The engine is deliberately small: exactly the operations needed by the
//! models and losses in this crate, 64-bit values, no broadcasting beyond the
//! explicit `bcast_*` nodes, single-threaded graph construction.

pub mod kernels;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("variables belong to different graphs")]
    GraphMismatch,
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("NaN gradient for parameter {0}")]
    NanGradient(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor of f64 values. Value-semantic; the graph link of
/// the spec's tensor type lives in [`Var`].
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(format!(
                "shape {:?} does not hold {} values",
                shape,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(TensorError::InvalidShape("empty row list".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(TensorError::InvalidShape("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![n, d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.shape[1];
        &self.data[i * d..(i + 1) * d]
    }
}

pub type NodeId = usize;

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId, f64),
    MulScalar(NodeId, f64),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Powf(NodeId, f64),
    Relu(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    SumAll(NodeId),
    SumAxis0(NodeId),
    SumAxis1(NodeId),
    SumChannels(NodeId),
    BcastScalar(NodeId),
    BcastRow(NodeId, usize),
    BcastCol(NodeId, usize),
    BcastChan(NodeId, usize, usize),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    GatherRows(NodeId, Arc<Vec<usize>>),
    ScatterRows(NodeId, Arc<Vec<usize>>, usize),
    Conv1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        dilation: usize,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        dilation: usize,
    },
    ConvWGrad {
        x: NodeId,
        g: NodeId,
        stride: usize,
        dilation: usize,
        ksize: usize,
    },
    AvgPool1d {
        x: NodeId,
        k: usize,
        stride: usize,
    },
    AvgUnpool1d {
        x: NodeId,
        k: usize,
        stride: usize,
        out_len: usize,
    },
    Pad1d {
        x: NodeId,
        left: usize,
        right: usize,
    },
    Slice1d {
        x: NodeId,
        start: usize,
        len: usize,
    },
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) => [Some(a), Some(b)],
            Conv1d { x, w, .. } | ConvT1d { x, w, .. } => [Some(x), Some(w)],
            ConvWGrad { x, g, .. } => [Some(x), Some(g)],
            Neg(a) | AddScalar(a, _) | MulScalar(a, _) | Exp(a) | Ln(a) | Sqrt(a) | Powf(a, _)
            | Relu(a) | Abs(a) | Sigmoid(a) | SumAll(a) | SumAxis0(a) | SumAxis1(a)
            | SumChannels(a) | BcastScalar(a) | BcastRow(a, _) | BcastCol(a, _)
            | BcastChan(a, _, _) | Transpose(a) | Reshape(a) => [Some(a), None],
            GatherRows(a, _) | ScatterRows(a, _, _) => [Some(a), None],
            AvgPool1d { x, .. } | AvgUnpool1d { x, .. } | Pad1d { x, .. } | Slice1d { x, .. } => {
                [Some(x), None]
            }
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

struct Tape {
    nodes: Vec<Node>,
}

/// Owner of one differentiation tape. Cloning shares the tape.
#[derive(Clone)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: NodeId,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            tape: Rc::new(RefCell::new(Tape { nodes: Vec::new() })),
        }
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut t = self.tape.borrow_mut();
        t.nodes.push(Node { op, value });
        Var {
            graph: self.clone(),
            id: t.nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }

    /// One line per node; intended for debugging small graphs.
    pub fn dump(&self) -> String {
        let t = self.tape.borrow();
        let mut s = String::new();
        for (i, n) in t.nodes.iter().enumerate() {
            let ins = n.op.inputs();
            let ins: Vec<NodeId> = ins.iter().flatten().copied().collect();
            s.push_str(&format!("#{i} {} <- {:?} {:?}\n", op_desc(&n.op), ins, n.value.shape()));
        }
        s
    }
}

fn op_desc(op: &Op) -> String {
    use Op::*;
    match *op {
        Leaf => "leaf".into(),
        Constant => "const".into(),
        Add(..) => "add".into(),
        Sub(..) => "sub".into(),
        Mul(..) => "mul".into(),
        Div(..) => "div".into(),
        Neg(..) => "neg".into(),
        AddScalar(_, c) => format!("add_scalar({c})"),
        MulScalar(_, c) => format!("mul_scalar({c})"),
        Exp(..) => "exp".into(),
        Ln(..) => "ln".into(),
        Sqrt(..) => "sqrt".into(),
        Powf(_, q) => format!("powf({q})"),
        Relu(..) => "relu".into(),
        Abs(..) => "abs".into(),
        Sigmoid(..) => "sigmoid".into(),
        SumAll(..) => "sum_all".into(),
        SumAxis0(..) => "sum_axis0".into(),
        SumAxis1(..) => "sum_axis1".into(),
        SumChannels(..) => "sum_channels".into(),
        BcastScalar(..) => "bcast_scalar".into(),
        BcastRow(_, n) => format!("bcast_row({n})"),
        BcastCol(_, m) => format!("bcast_col({m})"),
        BcastChan(_, b, l) => format!("bcast_chan({b},{l})"),
        Matmul(..) => "matmul".into(),
        Transpose(..) => "transpose".into(),
        Reshape(..) => "reshape".into(),
        GatherRows(_, ref idx) => format!("gather_rows[{}]", idx.len()),
        ScatterRows(_, ref idx, n) => format!("scatter_rows[{}->{n}]", idx.len()),
        Conv1d { stride, dilation, .. } => format!("conv1d(s={stride},d={dilation})"),
        ConvT1d { stride, dilation, .. } => format!("conv1d_transposed(s={stride},d={dilation})"),
        ConvWGrad { stride, dilation, ksize, .. } => {
            format!("conv1d_wgrad(s={stride},d={dilation},k={ksize})")
        }
        AvgPool1d { k, stride, .. } => format!("avgpool1d(k={k},s={stride})"),
        AvgUnpool1d { k, stride, out_len, .. } => format!("avgunpool1d(k={k},s={stride},L={out_len})"),
        Pad1d { left, right, .. } => format!("pad1d({left},{right})"),
        Slice1d { start, len, .. } => format!("slice1d({start},{len})"),
    }
}

fn ewise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id].value.shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.tape.borrow().nodes[self.id].value.numel()
    }

    /// Clone of the node's current value.
    pub fn value(&self) -> Tensor {
        self.graph.tape.borrow().nodes[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.graph.tape.borrow().nodes[self.id].value.item()
    }

    /// Re-enters the value as a constant, cutting the gradient path.
    pub fn detach(&self) -> Var {
        self.graph.constant(self.value())
    }

    fn check_same(&self, other: &Var) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(TensorError::GraphMismatch)
        }
    }

    fn binary_same_shape(&self, other: &Var, op: fn(NodeId, NodeId) -> Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.check_same(other)?;
        let t = self.graph.tape.borrow();
        let (a, b) = (&t.nodes[self.id].value, &t.nodes[other.id].value);
        if a.shape != b.shape {
            return Err(TensorError::InvalidShape(format!(
                "elementwise op on {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let value = ewise(a, b, f);
        drop(t);
        Ok(self.graph.push(op(self.id, other.id), value))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, Op::Div, |x, y| x / y)
    }

    pub fn neg(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| -x);
        self.graph.push(Op::Neg(self.id), value)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| x + c);
        self.graph.push(Op::AddScalar(self.id, c), value)
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| x * c);
        self.graph.push(Op::MulScalar(self.id, c), value)
    }

    pub fn exp(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, f64::exp);
        self.graph.push(Op::Exp(self.id), value)
    }

    pub fn ln(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, f64::ln);
        self.graph.push(Op::Ln(self.id), value)
    }

    pub fn sqrt(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, f64::sqrt);
        self.graph.push(Op::Sqrt(self.id), value)
    }

    pub fn powf(&self, q: f64) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| x.powf(q));
        self.graph.push(Op::Powf(self.id, q), value)
    }

    pub fn relu(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| x.max(0.0));
        self.graph.push(Op::Relu(self.id), value)
    }

    pub fn abs(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, f64::abs);
        self.graph.push(Op::Abs(self.id), value)
    }

    pub fn sigmoid(&self) -> Var {
        let value = map(&self.graph.tape.borrow().nodes[self.id].value, |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.graph.push(Op::Sigmoid(self.id), value)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Var {
        let s: f64 = self.graph.tape.borrow().nodes[self.id].value.data.iter().sum();
        self.graph.push(Op::SumAll(self.id), Tensor::scalar(s))
    }

    pub fn mean_all(&self) -> Var {
        let n = self.numel() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<Vec<usize>> {
        let shape = self.shape();
        if shape.len() != rank {
            return Err(TensorError::InvalidShape(format!(
                "{what} expects rank-{rank} input, got {shape:?}"
            )));
        }
        Ok(shape)
    }

    /// Column sums of an `[n,m]` matrix -> `[m]`.
    pub fn sum_axis0(&self) -> Result<Var> {
        let shape = self.expect_rank(2, "sum_axis0")?;
        let (n, m) = (shape[0], shape[1]);
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += x[i * m + j];
            }
        }
        drop(t);
        Ok(self.graph.push(Op::SumAxis0(self.id), Tensor::from_vec(out)))
    }

    /// Row sums of an `[n,m]` matrix -> `[n]`.
    pub fn sum_axis1(&self) -> Result<Var> {
        let shape = self.expect_rank(2, "sum_axis1")?;
        let (n, m) = (shape[0], shape[1]);
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = x[i * m..(i + 1) * m].iter().sum();
        }
        drop(t);
        Ok(self.graph.push(Op::SumAxis1(self.id), Tensor::from_vec(out)))
    }

    /// Per-channel sums of a `[B,C,L]` tensor -> `[C]`.
    pub fn sum_channels(&self) -> Result<Var> {
        let shape = self.expect_rank(3, "sum_channels")?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                out[ci] += x[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
            }
        }
        drop(t);
        Ok(self.graph.push(Op::SumChannels(self.id), Tensor::from_vec(out)))
    }

    /// `[1]` scalar -> filled tensor of `shape`.
    pub fn bcast_scalar(&self, shape: &[usize]) -> Result<Var> {
        if self.numel() != 1 {
            return Err(TensorError::InvalidShape("bcast_scalar expects a scalar".into()));
        }
        let v = self.item();
        Ok(self
            .graph
            .push(Op::BcastScalar(self.id), Tensor::full(shape, v)))
    }

    /// `[m]` vector replicated as `n` rows -> `[n,m]`.
    pub fn bcast_row(&self, n: usize) -> Result<Var> {
        let shape = self.expect_rank(1, "bcast_row")?;
        let m = shape[0];
        let t = self.graph.tape.borrow();
        let v = &t.nodes[self.id].value.data;
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(v);
        }
        drop(t);
        Ok(self
            .graph
            .push(Op::BcastRow(self.id, n), Tensor { shape: vec![n, m], data: out }))
    }

    /// `[n]` vector replicated as `m` columns -> `[n,m]`.
    pub fn bcast_col(&self, m: usize) -> Result<Var> {
        let shape = self.expect_rank(1, "bcast_col")?;
        let n = shape[0];
        let t = self.graph.tape.borrow();
        let v = &t.nodes[self.id].value.data;
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend(std::iter::repeat(v[i]).take(m));
        }
        drop(t);
        Ok(self
            .graph
            .push(Op::BcastCol(self.id, m), Tensor { shape: vec![n, m], data: out }))
    }

    /// `[C]` vector broadcast over batch and length -> `[B,C,L]`.
    pub fn bcast_chan(&self, b: usize, l: usize) -> Result<Var> {
        let shape = self.expect_rank(1, "bcast_chan")?;
        let c = shape[0];
        let t = self.graph.tape.borrow();
        let v = &t.nodes[self.id].value.data;
        let mut out = Vec::with_capacity(b * c * l);
        for _ in 0..b {
            for ci in 0..c {
                out.extend(std::iter::repeat(v[ci]).take(l));
            }
        }
        drop(t);
        Ok(self.graph.push(
            Op::BcastChan(self.id, b, l),
            Tensor { shape: vec![b, c, l], data: out },
        ))
    }

    /// `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_same(other)?;
        let sa = self.expect_rank(2, "matmul lhs")?;
        let sb = other.expect_rank(2, "matmul rhs")?;
        if sa[1] != sb[0] {
            return Err(TensorError::InvalidShape(format!(
                "matmul {:?} x {:?}",
                sa, sb
            )));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let t = self.graph.tape.borrow();
        let a = &t.nodes[self.id].value.data;
        let b = &t.nodes[other.id].value.data;
        let mut out = vec![0.0; n * m];
        kernels::gemm(n, k, m, a, k as isize, 1, b, m as isize, 1, 0.0, &mut out);
        drop(t);
        Ok(self.graph.push(
            Op::Matmul(self.id, other.id),
            Tensor { shape: vec![n, m], data: out },
        ))
    }

    pub fn transpose(&self) -> Result<Var> {
        let shape = self.expect_rank(2, "transpose")?;
        let (n, m) = (shape[0], shape[1]);
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = x[i * m + j];
            }
        }
        drop(t);
        Ok(self.graph.push(
            Op::Transpose(self.id),
            Tensor { shape: vec![m, n], data: out },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::InvalidShape(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let mut value = self.value();
        value.shape = shape.to_vec();
        Ok(self.graph.push(Op::Reshape(self.id), value))
    }

    /// Select rows of an `[n,m]` matrix; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var> {
        let shape = self.expect_rank(2, "gather_rows")?;
        let (n, m) = (shape[0], shape[1]);
        if idx.iter().any(|&i| i >= n) {
            return Err(TensorError::InvalidShape("gather_rows index out of range".into()));
        }
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(&x[i * m..(i + 1) * m]);
        }
        drop(t);
        Ok(self.graph.push(
            Op::GatherRows(self.id, Arc::new(idx.to_vec())),
            Tensor { shape: vec![idx.len(), m], data: out },
        ))
    }

    /// Adjoint of `gather_rows`: accumulates rows into an `[n_rows,m]` zero matrix.
    pub fn scatter_rows(&self, idx: &[usize], n_rows: usize) -> Result<Var> {
        let shape = self.expect_rank(2, "scatter_rows")?;
        let (k, m) = (shape[0], shape[1]);
        if k != idx.len() || idx.iter().any(|&i| i >= n_rows) {
            return Err(TensorError::InvalidShape("scatter_rows index mismatch".into()));
        }
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; n_rows * m];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..m {
                out[i * m + j] += x[r * m + j];
            }
        }
        drop(t);
        Ok(self.graph.push(
            Op::ScatterRows(self.id, Arc::new(idx.to_vec()), n_rows),
            Tensor { shape: vec![n_rows, m], data: out },
        ))
    }

    /// Cross-correlation `x[B,Cin,L] * w[Cout,Cin,K] -> [B,Cout,Lout]`.
    pub fn conv1d(&self, w: &Var, stride: usize, dilation: usize) -> Result<Var> {
        self.check_same(w)?;
        let sx = self.expect_rank(3, "conv1d input")?;
        let sw = w.expect_rank(3, "conv1d weight")?;
        let (bsz, c_in, l) = (sx[0], sx[1], sx[2]);
        let (c_out, wc_in, k) = (sw[0], sw[1], sw[2]);
        if c_in != wc_in {
            return Err(TensorError::InvalidShape(format!(
                "conv1d channels: input {:?} vs weight {:?}",
                sx, sw
            )));
        }
        let l_out = kernels::conv_out_len(l, k, stride, dilation).ok_or_else(|| {
            TensorError::InvalidShape(format!(
                "conv1d output length < 1 for L={l}, K={k}, stride={stride}, dilation={dilation}"
            ))
        })?;
        let t = self.graph.tape.borrow();
        let out = kernels::conv1d(
            &t.nodes[self.id].value.data,
            &t.nodes[w.id].value.data,
            bsz,
            c_in,
            l,
            c_out,
            k,
            stride,
            dilation,
            l_out,
        );
        drop(t);
        Ok(self.graph.push(
            Op::Conv1d { x: self.id, w: w.id, stride, dilation },
            Tensor { shape: vec![bsz, c_out, l_out], data: out },
        ))
    }

    /// Transposed convolution `x[B,C1,L] * w[C1,C2,K] -> [B,C2,(L-1)s+d(K-1)+1]`.
    pub fn conv1d_transposed(&self, w: &Var, stride: usize, dilation: usize) -> Result<Var> {
        self.check_same(w)?;
        let sx = self.expect_rank(3, "conv1d_transposed input")?;
        let sw = w.expect_rank(3, "conv1d_transposed weight")?;
        let (bsz, c1, l) = (sx[0], sx[1], sx[2]);
        let (wc1, c2, k) = (sw[0], sw[1], sw[2]);
        if c1 != wc1 {
            return Err(TensorError::InvalidShape(format!(
                "conv1d_transposed channels: input {:?} vs weight {:?}",
                sx, sw
            )));
        }
        let t = self.graph.tape.borrow();
        let out = kernels::conv1d_transposed(
            &t.nodes[self.id].value.data,
            &t.nodes[w.id].value.data,
            bsz,
            c1,
            l,
            c2,
            k,
            stride,
            dilation,
        );
        let l_out = kernels::conv_transposed_out_len(l, k, stride, dilation);
        drop(t);
        Ok(self.graph.push(
            Op::ConvT1d { x: self.id, w: w.id, stride, dilation },
            Tensor { shape: vec![bsz, c2, l_out], data: out },
        ))
    }

    /// Weight-shaped correlation: `out[cg,cx,j] = sum_{b,i} g[b,cg,i] x[b,cx,i*s+j*d]`.
    pub fn conv1d_wgrad(&self, g: &Var, stride: usize, dilation: usize, ksize: usize) -> Result<Var> {
        self.check_same(g)?;
        let sx = self.expect_rank(3, "conv1d_wgrad input")?;
        let sg = g.expect_rank(3, "conv1d_wgrad grad")?;
        let (bsz, c_x, l_x) = (sx[0], sx[1], sx[2]);
        let (gb, c_g, l_g) = (sg[0], sg[1], sg[2]);
        if gb != bsz {
            return Err(TensorError::InvalidShape("conv1d_wgrad batch mismatch".into()));
        }
        let needed = (l_g - 1) * stride + dilation * (ksize - 1) + 1;
        if needed > l_x {
            return Err(TensorError::InvalidShape(format!(
                "conv1d_wgrad window {needed} exceeds input length {l_x}"
            )));
        }
        let t = self.graph.tape.borrow();
        let out = kernels::conv1d_wgrad(
            &t.nodes[self.id].value.data,
            &t.nodes[g.id].value.data,
            bsz,
            c_x,
            l_x,
            c_g,
            l_g,
            ksize,
            stride,
            dilation,
        );
        drop(t);
        Ok(self.graph.push(
            Op::ConvWGrad { x: self.id, g: g.id, stride, dilation, ksize },
            Tensor { shape: vec![c_g, c_x, ksize], data: out },
        ))
    }

    /// Mean pooling on the last axis of `[B,C,L]`.
    pub fn avgpool1d(&self, k: usize, stride: usize) -> Result<Var> {
        let shape = self.expect_rank(3, "avgpool1d")?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        let l_out = kernels::conv_out_len(l, k, stride, 1).ok_or_else(|| {
            TensorError::InvalidShape(format!("avgpool1d window {k} exceeds length {l}"))
        })?;
        let t = self.graph.tape.borrow();
        let out = kernels::avgpool1d(&t.nodes[self.id].value.data, b * c, l, k, stride, l_out);
        drop(t);
        Ok(self.graph.push(
            Op::AvgPool1d { x: self.id, k, stride },
            Tensor { shape: vec![b, c, l_out], data: out },
        ))
    }

    /// Adjoint of `avgpool1d`, spreading to length `out_len`.
    pub fn avgunpool1d(&self, k: usize, stride: usize, out_len: usize) -> Result<Var> {
        let shape = self.expect_rank(3, "avgunpool1d")?;
        let (b, c, lp) = (shape[0], shape[1], shape[2]);
        if (lp - 1) * stride + k > out_len {
            return Err(TensorError::InvalidShape("avgunpool1d target too short".into()));
        }
        let t = self.graph.tape.borrow();
        let out = kernels::avgunpool1d(&t.nodes[self.id].value.data, b * c, lp, k, stride, out_len);
        drop(t);
        Ok(self.graph.push(
            Op::AvgUnpool1d { x: self.id, k, stride, out_len },
            Tensor { shape: vec![b, c, out_len], data: out },
        ))
    }

    /// Zero-pad the last axis of `[B,C,L]`.
    pub fn pad1d(&self, left: usize, right: usize) -> Result<Var> {
        let shape = self.expect_rank(3, "pad1d")?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        let lo = l + left + right;
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = vec![0.0; b * c * lo];
        for r in 0..b * c {
            out[r * lo + left..r * lo + left + l].copy_from_slice(&x[r * l..(r + 1) * l]);
        }
        drop(t);
        Ok(self.graph.push(
            Op::Pad1d { x: self.id, left, right },
            Tensor { shape: vec![b, c, lo], data: out },
        ))
    }

    /// Slice the last axis of `[B,C,L]`.
    pub fn slice1d(&self, start: usize, len: usize) -> Result<Var> {
        let shape = self.expect_rank(3, "slice1d")?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        if start + len > l {
            return Err(TensorError::InvalidShape("slice1d out of range".into()));
        }
        let t = self.graph.tape.borrow();
        let x = &t.nodes[self.id].value.data;
        let mut out = Vec::with_capacity(b * c * len);
        for r in 0..b * c {
            out.extend_from_slice(&x[r * l + start..r * l + start + len]);
        }
        drop(t);
        Ok(self.graph.push(
            Op::Slice1d { x: self.id, start, len },
            Tensor { shape: vec![b, c, len], data: out },
        ))
    }

    /// Reverse-mode gradients of a scalar `self` with respect to `wrt`.
    ///
    /// The returned gradients are graph nodes, so they can be differentiated
    /// again (needed for unrolled second-order optimization). A `wrt` entry
    /// that the loss does not reach gets a zero gradient.
    pub fn backward(&self, wrt: &[&Var]) -> Result<Vec<Var>> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.numel()));
        }
        for v in wrt {
            self.check_same(v)?;
        }
        let loss_id = self.id;

        // Restrict VJP emission to nodes lying between a wrt and the loss.
        let mut reaches_wrt = vec![false; loss_id + 1];
        for v in wrt {
            if v.id <= loss_id {
                reaches_wrt[v.id] = true;
            }
        }
        {
            let t = self.graph.tape.borrow();
            for id in 0..=loss_id {
                if reaches_wrt[id] {
                    continue;
                }
                let ins = t.nodes[id].op.inputs();
                if ins.iter().flatten().any(|&i| reaches_wrt[i]) {
                    reaches_wrt[id] = true;
                }
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; loss_id + 1];
        adj[loss_id] = Some(self.graph.constant(Tensor::scalar(1.0)));

        for id in (0..=loss_id).rev() {
            let Some(g) = adj[id].clone() else { continue };
            if !reaches_wrt[id] {
                continue;
            }
            let op = self.graph.tape.borrow().nodes[id].op.clone();
            let contribs = self.vjp(&op, id, &g)?;
            for (input_id, contrib) in contribs {
                if !reaches_wrt[input_id] {
                    continue;
                }
                adj[input_id] = Some(match adj[input_id].take() {
                    Some(acc) => acc.add(&contrib)?,
                    None => contrib,
                });
            }
        }

        let mut grads = Vec::with_capacity(wrt.len());
        for v in wrt {
            let g = match adj.get(v.id).and_then(|o| o.clone()) {
                Some(g) => g,
                None => self.graph.constant(Tensor::zeros(&v.shape())),
            };
            grads.push(g);
        }
        Ok(grads)
    }

    fn node_var(&self, id: NodeId) -> Var {
        Var { graph: self.graph.clone(), id }
    }

    /// Emits the VJP contributions of node `id` (with upstream adjoint `g`)
    /// as new graph nodes. Every rule is itself built from graph operations,
    /// which is what makes repeated differentiation valid.
    fn vjp(&self, op: &Op, id: NodeId, g: &Var) -> Result<Vec<(NodeId, Var)>> {
        use Op::*;
        let out = self.node_var(id);
        let r = match *op {
            Leaf | Constant => vec![],
            Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Sub(a, b) => vec![(a, g.clone()), (b, g.neg())],
            Mul(a, b) => {
                let va = self.node_var(a);
                let vb = self.node_var(b);
                vec![(a, g.mul(&vb)?), (b, g.mul(&va)?)]
            }
            Div(a, b) => {
                let vb = self.node_var(b);
                let ga = g.div(&vb)?;
                // d/db (a/b) = -out/b
                let gb = g.mul(&out)?.div(&vb)?.neg();
                vec![(a, ga), (b, gb)]
            }
            Neg(a) => vec![(a, g.neg())],
            AddScalar(a, _) => vec![(a, g.clone())],
            MulScalar(a, c) => vec![(a, g.mul_scalar(c))],
            Exp(a) => vec![(a, g.mul(&out)?)],
            Ln(a) => vec![(a, g.div(&self.node_var(a))?)],
            Sqrt(a) => vec![(a, g.mul_scalar(0.5).div(&out)?)],
            Powf(a, q) => {
                let va = self.node_var(a);
                vec![(a, g.mul(&va.powf(q - 1.0).mul_scalar(q))?)]
            }
            Relu(a) => {
                let mask = map(&self.graph.tape.borrow().nodes[a].value, |x| {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                });
                let mask = self.graph.constant(mask);
                vec![(a, g.mul(&mask)?)]
            }
            Abs(a) => {
                let sign = map(&self.graph.tape.borrow().nodes[a].value, |x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let sign = self.graph.constant(sign);
                vec![(a, g.mul(&sign)?)]
            }
            Sigmoid(a) => {
                let one_minus = out.neg().add_scalar(1.0);
                vec![(a, g.mul(&out.mul(&one_minus)?)?)]
            }
            SumAll(a) => {
                let shape = self.node_var(a).shape();
                vec![(a, g.bcast_scalar(&shape)?)]
            }
            SumAxis0(a) => {
                let n = self.node_var(a).shape()[0];
                vec![(a, g.bcast_row(n)?)]
            }
            SumAxis1(a) => {
                let m = self.node_var(a).shape()[1];
                vec![(a, g.bcast_col(m)?)]
            }
            SumChannels(a) => {
                let s = self.node_var(a).shape();
                vec![(a, g.bcast_chan(s[0], s[2])?)]
            }
            BcastScalar(a) => vec![(a, g.sum_all())],
            BcastRow(a, _) => vec![(a, g.sum_axis0()?)],
            BcastCol(a, _) => vec![(a, g.sum_axis1()?)],
            BcastChan(a, _, _) => vec![(a, g.sum_channels()?)],
            Matmul(a, b) => {
                let va = self.node_var(a);
                let vb = self.node_var(b);
                let ga = g.matmul(&vb.transpose()?)?;
                let gb = va.transpose()?.matmul(g)?;
                vec![(a, ga), (b, gb)]
            }
            Transpose(a) => vec![(a, g.transpose()?)],
            Reshape(a) => {
                let shape = self.node_var(a).shape();
                vec![(a, g.reshape(&shape)?)]
            }
            GatherRows(a, ref idx) => {
                let n = self.node_var(a).shape()[0];
                vec![(a, g.scatter_rows(idx, n)?)]
            }
            ScatterRows(a, ref idx, _) => vec![(a, g.gather_rows(idx)?)],
            Conv1d { x, w, stride, dilation } => {
                let vx = self.node_var(x);
                let vw = self.node_var(w);
                let k = vw.shape()[2];
                let l = vx.shape()[2];
                let gx = g.conv1d_transposed(&vw, stride, dilation)?;
                let lt = gx.shape()[2];
                let gx = if lt < l { gx.pad1d(0, l - lt)? } else { gx };
                let gw = vx.conv1d_wgrad(g, stride, dilation, k)?;
                vec![(x, gx), (w, gw)]
            }
            ConvT1d { x, w, stride, dilation } => {
                let vx = self.node_var(x);
                let vw = self.node_var(w);
                let k = vw.shape()[2];
                let gx = g.conv1d(&vw, stride, dilation)?;
                let gw = g.conv1d_wgrad(&vx, stride, dilation, k)?;
                vec![(x, gx), (w, gw)]
            }
            ConvWGrad { x, g: gg, stride, dilation, ksize } => {
                let vx = self.node_var(x);
                let vg = self.node_var(gg);
                let l_x = vx.shape()[2];
                let l_g = vg.shape()[2];
                // upstream `g` here is weight-shaped [Cg,Cx,K]
                let gx = vg.conv1d_transposed(g, stride, dilation)?;
                let lt = gx.shape()[2];
                let gx = if lt < l_x { gx.pad1d(0, l_x - lt)? } else { gx };
                let gg_full = vx.conv1d(g, stride, dilation)?;
                let lg_full = gg_full.shape()[2];
                let gg_v = if lg_full > l_g { gg_full.slice1d(0, l_g)? } else { gg_full };
                let _ = ksize;
                vec![(x, gx), (gg, gg_v)]
            }
            AvgPool1d { x, k, stride } => {
                let l = self.node_var(x).shape()[2];
                vec![(x, g.avgunpool1d(k, stride, l)?)]
            }
            AvgUnpool1d { x, k, stride, .. } => {
                let lp = self.node_var(x).shape()[2];
                let gp = g.avgpool1d(k, stride)?;
                debug_assert_eq!(gp.shape()[2], lp);
                vec![(x, gp)]
            }
            Pad1d { x, left, .. } => {
                let l = self.node_var(x).shape()[2];
                vec![(x, g.slice1d(left, l)?)]
            }
            Slice1d { x, start, len } => {
                let l = self.node_var(x).shape()[2];
                vec![(x, g.pad1d(start, l - start - len)?)]
            }
        };
        Ok(r)
    }
}

/// Row-wise maximum of an `[n,m]` matrix, as plain data (used for detached
/// log-sum-exp stabilization; the shift does not affect gradients).
pub fn max_axis1_data(t: &Tensor) -> Tensor {
    let (n, m) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in 0..m {
            out[i] = out[i].max(t.data()[i * m + j]);
        }
    }
    Tensor::from_vec(out)
}

/// Column-wise maximum of an `[n,m]` matrix, as plain data.
pub fn max_axis0_data(t: &Tensor) -> Tensor {
    let (n, m) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            out[j] = out[j].max(t.data()[i * m + j]);
        }
    }
    Tensor::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Graph {
        Graph::new()
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn square_gradient() {
        let gr = g();
        let x = gr.leaf(Tensor::scalar(3.0));
        let y = x.mul(&x).unwrap();
        let grads = y.backward(&[&x]).unwrap();
        assert_eq!(grads[0].item(), 6.0);
    }

    #[test]
    fn second_order_analytic() {
        // d/da [ d(a*x^2)/dx at x=2 ] = 2x = 4
        let gr = g();
        let a = gr.leaf(Tensor::scalar(1.5));
        let x = gr.leaf(Tensor::scalar(2.0));
        let y = a.mul(&x.mul(&x).unwrap()).unwrap();
        let dx = y.backward(&[&x]).unwrap().remove(0);
        assert!((dx.item() - 2.0 * 1.5 * 2.0).abs() < 1e-12);
        let da = dx.backward(&[&a]).unwrap().remove(0);
        assert!((da.item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn detached_wrt_gets_zero_gradient() {
        let gr = g();
        let x = gr.leaf(Tensor::scalar(1.0));
        let z = gr.leaf(Tensor::scalar(5.0));
        let y = x.mul(&x).unwrap();
        let grads = y.backward(&[&z]).unwrap();
        assert_eq!(grads[0].item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let gr = g();
        let x = gr.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(x.backward(&[&x]), Err(TensorError::NonScalarLoss(2))));
    }

    #[test]
    fn conv1d_identity_kernel() {
        let gr = g();
        let x = gr.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = gr.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = x.conv1d(&w, 1, 1).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv1d_strided_pair_sum() {
        let gr = g();
        let x = gr.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = gr.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = x.conv1d(&w, 2, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2]);
        assert_eq!(y.value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv1d_too_short_errors() {
        let gr = g();
        let x = gr.constant(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap());
        let w = gr.constant(Tensor::new(vec![1, 1, 5], vec![1.0; 5]).unwrap());
        assert!(matches!(x.conv1d(&w, 1, 1), Err(TensorError::InvalidShape(_))));
    }

    #[test]
    fn conv_transposed_single_tap() {
        let gr = g();
        let x = gr.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let w = gr.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = x.conv1d_transposed(&w, 1, 1).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0]);
    }

    #[test]
    fn conv_naive_oracle() {
        // random x[2,3,17], w[4,3,5], stride 2, dilation 2, against a triple loop
        let mut rng = crate::rngs::stream(7, "conv-oracle", 0);
        use rand::Rng;
        let x: Vec<f64> = (0..2 * 3 * 17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..4 * 3 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (stride, dilation) = (2usize, 2usize);
        let l_out = kernels::conv_out_len(17, 5, stride, dilation).unwrap();
        let mut expect = vec![0.0; 2 * 4 * l_out];
        for b in 0..2 {
            for co in 0..4 {
                for i in 0..l_out {
                    let mut s = 0.0;
                    for ci in 0..3 {
                        for kk in 0..5 {
                            s += x[(b * 3 + ci) * 17 + i * stride + kk * dilation]
                                * w[(co * 3 + ci) * 5 + kk];
                        }
                    }
                    expect[(b * 4 + co) * l_out + i] = s;
                }
            }
        }
        let gr = g();
        let xv = gr.constant(Tensor::new(vec![2, 3, 17], x).unwrap());
        let wv = gr.constant(Tensor::new(vec![4, 3, 5], w).unwrap());
        let y = x_assert_close(&xv.conv1d(&wv, stride, dilation).unwrap().value(), &expect);
        assert!(y < 1e-12, "max abs diff {y}");
    }

    fn x_assert_close(t: &Tensor, expect: &[f64]) -> f64 {
        t.data()
            .iter()
            .zip(expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_adjoint_identity() {
        // <conv(x,w), y> == <x, conv_transposed(y,w)> for random tensors
        
        let mut rng = crate::rngs::stream(11, "adjoint", 0);
        for &(stride, dilation) in &[(1usize, 1usize), (2, 1), (2, 2), (3, 2)] {
            let (bsz, cin, cout, l, k) = (2, 3, 4, 19, 4);
            let Some(l_out) = kernels::conv_out_len(l, k, stride, dilation) else {
                continue;
            };
            let gr = g();
            let x = gr.constant(rand_t(&mut rng, &[bsz, cin, l]));
            let w = gr.constant(rand_t(&mut rng, &[cout, cin, k]));
            let y = gr.constant(rand_t(&mut rng, &[bsz, cout, l_out]));
            let lhs: f64 = xdot(&x.conv1d(&w, stride, dilation).unwrap().value(), &y.value());
            let back = y.conv1d_transposed(&w, stride, dilation).unwrap();
            let lb = back.shape()[2];
            let back = if lb < l { back.pad1d(0, l - lb).unwrap() } else { back };
            let rhs: f64 = xdot(&back.value(), &x.value());
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride} dilation {dilation}: {lhs} vs {rhs}");
        }
    }

    fn rand_t(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn xdot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn transposed_conv_zero_input() {
        let gr = g();
        let x = gr.constant(Tensor::zeros(&[1, 2, 5]));
        let w = gr.constant(Tensor::full(&[2, 3, 4], 0.3));
        let y = x.conv1d_transposed(&w, 2, 1).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avgpool_basic() {
        let gr = g();
        let x = gr.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.avgpool1d(2, 2).unwrap();
        assert_eq!(y.value().data(), &[1.5, 3.5]);
    }

    #[test]
    fn relu_values() {
        let gr = g();
        let x = gr.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn gather_scatter_roundtrip_adjoint() {
        let gr = g();
        let x = gr.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let picked = x.gather_rows(&[2, 0]).unwrap();
        assert_eq!(picked.value().data(), &[5.0, 6.0, 1.0, 2.0]);
        let loss = picked.sum_all();
        let grad = loss.backward(&[&x]).unwrap().remove(0);
        assert_eq!(grad.value().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn graph_mismatch_detected() {
        let g1 = g();
        let g2 = g();
        let a = g1.scalar(1.0);
        let b = g2.scalar(2.0);
        assert!(matches!(a.add(&b), Err(TensorError::GraphMismatch)));
    }

    #[test]
    fn matmul_known() {
        let gr = g();
        let a = gr.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = gr.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().data(), &[19.0, 22.0, 43.0, 50.0]);
    }
}

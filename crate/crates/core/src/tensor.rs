//! Dense `f64` tensors with a reverse-mode tape.
//!
//! A [`Var`] carries its forward value and, when it was produced on a
//! [`Tape`], a reference to the node that recorded it. Operations on
//! untracked vars never touch a tape, which is the fast path used when only
//! bound values are needed.
//!
//! Piecewise primitives use the zero branch at their breakpoint for
//! `relu` (`relu'(0) = 0`), while every sign-selection primitive
//! (`pos_part`, `neg_part`, `abs`, `max`, `min`) resolves a tie toward the
//! non-negative / first-operand branch.

use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Shape and tape errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes do not fit together.
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        /// Operation name.
        op: &'static str,
        /// Left operand shape.
        left: Vec<usize>,
        /// Right operand shape.
        right: Vec<usize>,
    },
    /// Operand has the wrong rank.
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadRank {
        /// Operation name.
        op: &'static str,
        /// Expected rank.
        expected: &'static str,
        /// Tensor shape.
        shape: Vec<usize>,
    },
    /// Index outside the tensor.
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    OutOfRange {
        /// Operation name.
        op: &'static str,
        /// Offending index.
        index: usize,
        /// Tensor shape.
        shape: Vec<usize>,
    },
    /// Data length does not match the shape.
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength {
        /// Data length.
        len: usize,
        /// Requested shape.
        shape: Vec<usize>,
    },
    /// Gradient requested for a value not recorded on a tape.
    #[error("gradient requested for a value that is not on a tape")]
    NotOnTape,
    /// Values from different tapes were combined.
    #[error("operands were recorded on different tapes")]
    ForeignTape,
}

/// Result with [`TensorError`].
pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    /// Tensor of `shape` holding `data` in row-major order.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    /// Rank-0 tensor.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// `rows × cols` matrix from row-major `data`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    /// All-zero tensor of `shape`.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Tensor of `shape` with every entry `v`.
    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Dimensions.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Entries in row-major order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable entries in row-major order.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor and returns its entries.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Whether there are no entries.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Matrix entry `(r, c)`.
    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Elementwise `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Whether every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix transpose.
    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    /// Matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        check_rank("matmul", self, 2)?;
        check_rank("matmul", other, 2)?;
        if self.cols() != other.rows() {
            return Err(mismatch("matmul", self, other));
        }
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        check_rank("matvec", self, 2)?;
        check_rank("matvec", x, 1)?;
        if self.cols() != x.len() {
            return Err(mismatch("matvec", self, x));
        }
        let k = self.cols();
        let data = (0..self.rows())
            .map(|i| dot(&self.data[i * k..(i + 1) * k], &x.data))
            .collect();
        Ok(Tensor::vector(data))
    }

    /// `selfᵀ · x` without materialising the transpose.
    pub fn matvec_t(&self, x: &Tensor) -> Result<Tensor> {
        check_rank("matvec_t", self, 2)?;
        check_rank("matvec_t", x, 1)?;
        if self.rows() != x.len() {
            return Err(mismatch("matvec_t", self, x));
        }
        let k = self.cols();
        let mut out = vec![0.0; k];
        for (i, &xi) in x.data.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(&self.data[i * k..(i + 1) * k]) {
                *o += a * xi;
            }
        }
        Ok(Tensor::vector(out))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape.len() == rank {
        Ok(())
    } else {
        Err(TensorError::BadRank {
            op,
            expected: match rank {
                0 => "a scalar",
                1 => "a vector",
                _ => "a matrix",
            },
            shape: t.shape.clone(),
        })
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape == b.shape {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Max(usize, usize),
    Min(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize, f64),
    Relu(usize),
    Abs(usize),
    PosPart(usize),
    NegPart(usize),
    Select(Arc<Vec<bool>>, usize, usize),
    MatMul(usize, usize),
    MatVec(usize, usize),
    Transpose(usize),
    ScaleCols(usize, usize),
    ScaleRows(usize, usize),
    Sum(usize),
    SumRows(usize),
    LogSumExp(usize),
    MaxAll(usize),
    Index(usize, usize),
    Slice(usize, usize, usize),
    Concat(Vec<usize>),
    Row(usize, usize),
    StackRows(Vec<usize>),
}

impl Op {
    fn operands(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Const => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Max(a, b) | Min(a, b) => vec![*a, *b],
            MatMul(a, b) | MatVec(a, b) | ScaleCols(a, b) | ScaleRows(a, b) => vec![*a, *b],
            Select(_, a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a, _) | Relu(a) | Abs(a) | PosPart(a) | NegPart(a) => {
                vec![*a]
            }
            Transpose(a) | Sum(a) | SumRows(a) | LogSumExp(a) | MaxAll(a) => vec![*a],
            Index(a, _) | Slice(a, _, _) | Row(a, _) => vec![*a],
            Concat(v) | StackRows(v) => v.clone(),
        }
    }
}

/// Forward semantics of every primitive. Shared by recording and replay so
/// the two agree bit for bit.
fn eval(op: &Op, args: &[&Tensor]) -> Result<Tensor> {
    use Op::*;
    Ok(match op {
        Leaf | Const => unreachable!("leaves carry their own value"),
        Add(..) => {
            check_same("add", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| a + b)
        }
        Sub(..) => {
            check_same("sub", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| a - b)
        }
        Mul(..) => {
            check_same("mul", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| a * b)
        }
        Div(..) => {
            check_same("div", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| a / b)
        }
        Max(..) => {
            check_same("max", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| if a >= b { a } else { b })
        }
        Min(..) => {
            check_same("min", args[0], args[1])?;
            args[0].zip_map(args[1], |a, b| if a <= b { a } else { b })
        }
        Neg(_) => args[0].map(|a| -a),
        Scale(_, c) => args[0].map(|a| a * c),
        Offset(_, c) => args[0].map(|a| a + c),
        Relu(_) => args[0].map(|a| if a > 0.0 { a } else { 0.0 }),
        Abs(_) => args[0].map(f64::abs),
        PosPart(_) => args[0].map(|a| if a >= 0.0 { a } else { 0.0 }),
        NegPart(_) => args[0].map(|a| if a < 0.0 { a } else { 0.0 }),
        Select(mask, ..) => {
            check_same("select", args[0], args[1])?;
            if mask.len() != args[0].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "select",
                    left: vec![mask.len()],
                    right: args[0].shape.clone(),
                });
            }
            Tensor {
                shape: args[0].shape.clone(),
                data: mask
                    .iter()
                    .zip(args[0].data.iter().zip(&args[1].data))
                    .map(|(&m, (&a, &b))| if m { a } else { b })
                    .collect(),
            }
        }
        MatMul(..) => args[0].matmul(args[1])?,
        MatVec(..) => args[0].matvec(args[1])?,
        Transpose(_) => {
            check_rank("transpose", args[0], 2)?;
            args[0].transpose()
        }
        ScaleCols(..) => {
            check_rank("scale_cols", args[0], 2)?;
            if args[0].cols() != args[1].len() || args[1].shape.len() != 1 {
                return Err(mismatch("scale_cols", args[0], args[1]));
            }
            let c = args[0].cols();
            let v = &args[1].data;
            Tensor {
                shape: args[0].shape.clone(),
                data: args[0]
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| a * v[i % c])
                    .collect(),
            }
        }
        ScaleRows(..) => {
            check_rank("scale_rows", args[0], 2)?;
            if args[0].rows() != args[1].len() || args[1].shape.len() != 1 {
                return Err(mismatch("scale_rows", args[0], args[1]));
            }
            let c = args[0].cols();
            let v = &args[1].data;
            Tensor {
                shape: args[0].shape.clone(),
                data: args[0]
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| a * v[i / c])
                    .collect(),
            }
        }
        Sum(_) => Tensor::scalar(args[0].data.iter().sum()),
        SumRows(_) => {
            check_rank("sum_rows", args[0], 2)?;
            let c = args[0].cols();
            Tensor::vector(args[0].data.chunks(c.max(1)).map(|r| r.iter().sum()).collect())
        }
        LogSumExp(_) => {
            if args[0].is_empty() {
                return Err(TensorError::BadRank {
                    op: "log_sum_exp",
                    expected: "a non-empty tensor",
                    shape: args[0].shape.clone(),
                });
            }
            Tensor::scalar(log_sum_exp(&args[0].data))
        }
        MaxAll(_) => {
            if args[0].is_empty() {
                return Err(TensorError::BadRank {
                    op: "max_all",
                    expected: "a non-empty tensor",
                    shape: args[0].shape.clone(),
                });
            }
            Tensor::scalar(args[0].data[argmax(&args[0].data)])
        }
        Index(_, i) => {
            let t = args[0];
            if *i >= t.len() {
                return Err(TensorError::OutOfRange {
                    op: "index",
                    index: *i,
                    shape: t.shape.clone(),
                });
            }
            Tensor::scalar(t.data[*i])
        }
        Slice(_, start, len) => {
            check_rank("slice", args[0], 1)?;
            if start + len > args[0].len() {
                return Err(TensorError::OutOfRange {
                    op: "slice",
                    index: start + len,
                    shape: args[0].shape.clone(),
                });
            }
            Tensor::vector(args[0].data[*start..start + len].to_vec())
        }
        Concat(_) => {
            let mut data = Vec::new();
            for a in args {
                if a.shape.len() > 1 {
                    check_rank("concat", a, 1)?;
                }
                data.extend_from_slice(&a.data);
            }
            Tensor::vector(data)
        }
        Row(_, r) => {
            check_rank("row", args[0], 2)?;
            if *r >= args[0].rows() {
                return Err(TensorError::OutOfRange {
                    op: "row",
                    index: *r,
                    shape: args[0].shape.clone(),
                });
            }
            Tensor::vector(args[0].row(*r).to_vec())
        }
        StackRows(_) => {
            let cols = args.first().map_or(0, |a| a.len());
            let mut data = Vec::with_capacity(cols * args.len());
            for a in args {
                check_rank("stack_rows", a, 1)?;
                if a.len() != cols {
                    return Err(mismatch("stack_rows", args[0], a));
                }
                data.extend_from_slice(&a.data);
            }
            Tensor {
                shape: vec![args.len(), cols],
                data,
            }
        }
    })
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the first maximal element.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
    requires_grad: bool,
}

/// Append-only record of primitive operations.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Arc<Mutex<Vec<Node>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    /// Empty tape.
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.lock().unwrap().len()
    }

    /// Whether nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn push(&self, op: Op, value: Arc<Tensor>, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.lock().unwrap();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        nodes.len() - 1
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        let value = Arc::new(value);
        let id = self.push(Op::Leaf, value.clone(), true);
        Var {
            value,
            node: Some((self.clone(), id)),
        }
    }

    /// Recomputes every recorded node from the leaves and constants.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.lock().unwrap();
        let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
        for n in nodes.iter() {
            let v = match n.op {
                Op::Leaf | Op::Const => (*n.value).clone(),
                ref op => {
                    let ids = op.operands();
                    let args: Vec<&Tensor> = ids.iter().map(|&i| &values[i]).collect();
                    eval(op, &args)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// The values stored at record time, in record order.
    pub fn recorded(&self) -> Vec<Tensor> {
        self.nodes
            .lock()
            .unwrap()
            .iter()
            .map(|n| (*n.value).clone())
            .collect()
    }

    /// Reverse sweep from a scalar output.
    pub fn gradient(&self, output: &Var) -> Result<Gradients> {
        let out_id = match &output.node {
            Some((t, id)) if t.same(self) => *id,
            _ => return Err(TensorError::NotOnTape),
        };
        if output.value.len() != 1 {
            return Err(TensorError::BadRank {
                op: "gradient",
                expected: "a scalar output",
                shape: output.value.shape.clone(),
            });
        }
        let nodes = self.nodes.lock().unwrap();
        let mut grads: Vec<Option<Tensor>> = vec![None; out_id + 1];
        grads[out_id] = Some(Tensor::filled(&output.value.shape, 1.0));
        for id in (0..=out_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backward_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            tape: self.clone(),
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    use Op::*;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &node.op {
        Leaf | Const => {}
        Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|x| -x));
        }
        Mul(a, b) => {
            accumulate(grads, nodes, *a, g.zip_map(val(*b), |x, y| x * y));
            accumulate(grads, nodes, *b, g.zip_map(val(*a), |x, y| x * y));
        }
        Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, g.zip_map(vb, |x, y| x / y));
            let gb: Vec<f64> = g
                .data
                .iter()
                .zip(va.data.iter().zip(&vb.data))
                .map(|(&x, (&p, &q))| -x * p / (q * q))
                .collect();
            accumulate(grads, nodes, *b, Tensor::new(g.shape.clone(), gb).unwrap());
        }
        Max(a, b) | Min(a, b) => {
            let is_max = matches!(node.op, Max(..));
            let (va, vb) = (val(*a), val(*b));
            let first: Vec<bool> = va
                .data
                .iter()
                .zip(&vb.data)
                .map(|(&p, &q)| if is_max { p >= q } else { p <= q })
                .collect();
            let ga = masked(g, &first, true);
            let gb = masked(g, &first, false);
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Neg(a) => accumulate(grads, nodes, *a, g.map(|x| -x)),
        Scale(a, c) => accumulate(grads, nodes, *a, g.map(|x| x * c)),
        Offset(a, _) => accumulate(grads, nodes, *a, g.clone()),
        Relu(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 }),
        ),
        PosPart(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_map(val(*a), |x, v| if v >= 0.0 { x } else { 0.0 }),
        ),
        NegPart(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_map(val(*a), |x, v| if v < 0.0 { x } else { 0.0 }),
        ),
        Abs(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_map(val(*a), |x, v| if v >= 0.0 { x } else { -x }),
        ),
        Select(mask, a, b) => {
            accumulate(grads, nodes, *a, masked(g, mask, true));
            accumulate(grads, nodes, *b, masked(g, mask, false));
        }
        MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, g.matmul(&vb.transpose()).unwrap());
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, va.transpose().matmul(g).unwrap());
            }
        }
        MatVec(a, x) => {
            let (va, vx) = (val(*a), val(*x));
            if nodes[*a].requires_grad {
                let (r, c) = (va.rows(), va.cols());
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let gi = g.data[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for (d, &xv) in data[i * c..(i + 1) * c].iter_mut().zip(&vx.data) {
                        *d = gi * xv;
                    }
                }
                accumulate(grads, nodes, *a, Tensor::matrix(r, c, data).unwrap());
            }
            if nodes[*x].requires_grad {
                accumulate(grads, nodes, *x, va.matvec_t(g).unwrap());
            }
        }
        Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        ScaleCols(a, v) => {
            let (va, vv) = (val(*a), val(*v));
            let c = va.cols();
            if nodes[*a].requires_grad {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * vv.data[i % c])
                        .collect(),
                };
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*v].requires_grad {
                let mut gv = vec![0.0; c];
                for (i, (&x, &p)) in g.data.iter().zip(&va.data).enumerate() {
                    gv[i % c] += x * p;
                }
                accumulate(grads, nodes, *v, Tensor::vector(gv));
            }
        }
        ScaleRows(a, v) => {
            let (va, vv) = (val(*a), val(*v));
            let c = va.cols();
            if nodes[*a].requires_grad {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * vv.data[i / c])
                        .collect(),
                };
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*v].requires_grad {
                let mut gv = vec![0.0; va.rows()];
                for (i, (&x, &p)) in g.data.iter().zip(&va.data).enumerate() {
                    gv[i / c] += x * p;
                }
                accumulate(grads, nodes, *v, Tensor::vector(gv));
            }
        }
        Sum(a) => {
            let s = g.item();
            accumulate(grads, nodes, *a, val(*a).map(|_| s));
        }
        SumRows(a) => {
            let va = val(*a);
            let c = va.cols();
            let ga = Tensor {
                shape: va.shape.clone(),
                data: (0..va.len()).map(|i| g.data[i / c]).collect(),
            };
            accumulate(grads, nodes, *a, ga);
        }
        LogSumExp(a) => {
            let va = val(*a);
            let lse = node.value.item();
            let s = g.item();
            accumulate(grads, nodes, *a, va.map(|x| s * (x - lse).exp()));
        }
        MaxAll(a) => {
            let va = val(*a);
            let mut ga = Tensor::zeros(&va.shape);
            ga.data[argmax(&va.data)] = g.item();
            accumulate(grads, nodes, *a, ga);
        }
        Index(a, i) => {
            let mut ga = Tensor::zeros(&val(*a).shape);
            ga.data[*i] = g.item();
            accumulate(grads, nodes, *a, ga);
        }
        Slice(a, start, len) => {
            let mut ga = Tensor::zeros(&val(*a).shape);
            ga.data[*start..start + len].copy_from_slice(&g.data);
            accumulate(grads, nodes, *a, ga);
        }
        Row(a, r) => {
            let va = val(*a);
            let c = va.cols();
            let mut ga = Tensor::zeros(&va.shape);
            ga.data[r * c..(r + 1) * c].copy_from_slice(&g.data);
            accumulate(grads, nodes, *a, ga);
        }
        Concat(ids) | StackRows(ids) => {
            let mut off = 0;
            for &i in ids {
                let n = val(i).len();
                let part = Tensor {
                    shape: val(i).shape.clone(),
                    data: g.data[off..off + n].to_vec(),
                };
                accumulate(grads, nodes, i, part);
                off += n;
            }
        }
    }
}

fn masked(g: &Tensor, mask: &[bool], keep: bool) -> Tensor {
    Tensor {
        shape: g.shape.clone(),
        data: g
            .data
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m == keep { x } else { 0.0 })
            .collect(),
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the
    /// output, `None` when `v` is not a leaf of this tape.
    pub fn wrt(&self, v: &Var) -> Option<Tensor> {
        match &v.node {
            Some((t, id)) if t.same(&self.tape) => Some(
                self.grads
                    .get(*id)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| Tensor::zeros(&v.value.shape)),
            ),
            _ => None,
        }
    }
}

/// A tensor value, optionally recorded on a tape.
#[derive(Clone)]
pub struct Var {
    value: Arc<Tensor>,
    node: Option<(Tape, usize)>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some((_, id)) => write!(f, "Var#{id}({:?})", self.value),
            None => write!(f, "Var({:?})", self.value),
        }
    }
}

impl From<Tensor> for Var {
    fn from(t: Tensor) -> Self {
        Var::constant(t)
    }
}

impl Var {
    /// An untracked value.
    pub fn constant(t: Tensor) -> Self {
        Self {
            value: Arc::new(t),
            node: None,
        }
    }

    /// Untracked scalar.
    pub fn scalar(v: f64) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    /// Untracked vector.
    pub fn vector(v: Vec<f64>) -> Self {
        Self::constant(Tensor::vector(v))
    }

    /// Current value.
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Entries of the value.
    pub fn data(&self) -> &[f64] {
        &self.value.data
    }

    /// Shape of the value.
    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.value.len()
    }

    /// Whether there are no entries.
    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// The single entry of a one-element value.
    pub fn item(&self) -> f64 {
        self.value.item()
    }

    /// Tape recording this value, if any.
    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Whether gradients can flow through this value.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var {
        Var {
            value: self.value.clone(),
            node: None,
        }
    }

    fn record(args: &[&Var], op: Op) -> Result<Var> {
        let values: Vec<&Tensor> = args.iter().map(|a| &*a.value).collect();
        let value = Arc::new(eval(&op, &values)?);
        let mut tape: Option<&Tape> = None;
        for a in args {
            if let Some((t, _)) = &a.node {
                match tape {
                    None => tape = Some(t),
                    Some(prev) if !prev.same(t) => return Err(TensorError::ForeignTape),
                    _ => {}
                }
            }
        }
        let Some(tape) = tape else {
            return Ok(Var { value, node: None });
        };
        let ids: Vec<usize> = args
            .iter()
            .map(|a| match &a.node {
                Some((_, id)) => *id,
                None => tape.push(Op::Const, a.value.clone(), false),
            })
            .collect();
        let op = remap(op, &ids);
        let id = tape.push(op, value.clone(), true);
        Ok(Var {
            value,
            node: Some((tape.clone(), id)),
        })
    }

    fn unary(&self, op: Op) -> Var {
        Self::record(&[self], op).expect("unary primitives are shape-preserving")
    }

    /// Elementwise sum.
    pub fn add(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Add(0, 1))
    }
    /// Elementwise difference.
    pub fn sub(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Sub(0, 1))
    }
    /// Elementwise product.
    pub fn mul(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Mul(0, 1))
    }
    /// Elementwise quotient.
    pub fn div(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Div(0, 1))
    }
    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn max(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Max(0, 1))
    }
    /// Elementwise minimum; ties send the gradient to `self`.
    pub fn min(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::Min(0, 1))
    }
    /// Elementwise negation.
    pub fn neg(&self) -> Var {
        self.unary(Op::Neg(0))
    }
    /// Multiplies by the constant `c`.
    pub fn scale(&self, c: f64) -> Var {
        self.unary(Op::Scale(0, c))
    }
    /// Adds the constant `c`.
    pub fn offset(&self, c: f64) -> Var {
        self.unary(Op::Offset(0, c))
    }
    /// Elementwise `max(0, x)`.
    pub fn relu(&self) -> Var {
        self.unary(Op::Relu(0))
    }
    /// Elementwise absolute value.
    pub fn abs(&self) -> Var {
        self.unary(Op::Abs(0))
    }
    /// `x` where `x >= 0`, else 0.
    pub fn pos_part(&self) -> Var {
        self.unary(Op::PosPart(0))
    }
    /// `x` where `x < 0`, else 0.
    pub fn neg_part(&self) -> Var {
        self.unary(Op::NegPart(0))
    }
    /// Picks `self` where `mask` is set and `other` elsewhere.
    pub fn select(mask: Vec<bool>, a: &Var, b: &Var) -> Result<Var> {
        Self::record(&[a, b], Op::Select(Arc::new(mask), 0, 1))
    }
    /// Matrix product.
    pub fn matmul(&self, o: &Var) -> Result<Var> {
        Self::record(&[self, o], Op::MatMul(0, 1))
    }
    /// Matrix-vector product.
    pub fn matvec(&self, x: &Var) -> Result<Var> {
        Self::record(&[self, x], Op::MatVec(0, 1))
    }
    /// Matrix transpose.
    pub fn transpose(&self) -> Result<Var> {
        Self::record(&[self], Op::Transpose(0))
    }
    /// `self · diag(v)`.
    pub fn scale_cols(&self, v: &Var) -> Result<Var> {
        Self::record(&[self, v], Op::ScaleCols(0, 1))
    }
    /// `diag(v) · self`.
    pub fn scale_rows(&self, v: &Var) -> Result<Var> {
        Self::record(&[self, v], Op::ScaleRows(0, 1))
    }
    /// Sum of all entries.
    pub fn sum(&self) -> Var {
        self.unary(Op::Sum(0))
    }
    /// Row sums of a matrix.
    pub fn sum_rows(&self) -> Result<Var> {
        Self::record(&[self], Op::SumRows(0))
    }
    /// Numerically stable `log Σ exp` of a vector.
    pub fn log_sum_exp(&self) -> Result<Var> {
        Self::record(&[self], Op::LogSumExp(0))
    }
    /// Largest component; the gradient goes to the first maximiser.
    pub fn max_all(&self) -> Result<Var> {
        Self::record(&[self], Op::MaxAll(0))
    }
    /// Entry `i` of a vector.
    pub fn index(&self, i: usize) -> Result<Var> {
        Self::record(&[self], Op::Index(0, i))
    }
    /// Entries `start..start + len` of a vector.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var> {
        Self::record(&[self], Op::Slice(0, start, len))
    }
    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> Result<Var> {
        Self::record(&[self], Op::Row(0, r))
    }
    /// Inner product of two vectors.
    pub fn dot(&self, o: &Var) -> Result<Var> {
        Ok(self.mul(o)?.sum())
    }
    /// Joins vectors and scalars into one vector.
    pub fn concat(parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Var> = parts.iter().collect();
        Self::record(&refs, Op::Concat((0..parts.len()).collect()))
    }
    /// Stacks equally long vectors as the rows of a matrix.
    pub fn stack_rows(rows: &[Var]) -> Result<Var> {
        let refs: Vec<&Var> = rows.iter().collect();
        Self::record(&refs, Op::StackRows((0..rows.len()).collect()))
    }
    /// Shifts the value to `target` while keeping the gradient of `self`.
    pub fn with_value(&self, target: f64) -> Var {
        self.offset(target - self.item())
    }
}

fn remap(op: Op, ids: &[usize]) -> Op {
    use Op::*;
    let m = |i: usize| ids[i];
    match op {
        Leaf => Leaf,
        Const => Const,
        Add(a, b) => Add(m(a), m(b)),
        Sub(a, b) => Sub(m(a), m(b)),
        Mul(a, b) => Mul(m(a), m(b)),
        Div(a, b) => Div(m(a), m(b)),
        Max(a, b) => Max(m(a), m(b)),
        Min(a, b) => Min(m(a), m(b)),
        Neg(a) => Neg(m(a)),
        Scale(a, c) => Scale(m(a), c),
        Offset(a, c) => Offset(m(a), c),
        Relu(a) => Relu(m(a)),
        Abs(a) => Abs(m(a)),
        PosPart(a) => PosPart(m(a)),
        NegPart(a) => NegPart(m(a)),
        Select(mask, a, b) => Select(mask, m(a), m(b)),
        MatMul(a, b) => MatMul(m(a), m(b)),
        MatVec(a, b) => MatVec(m(a), m(b)),
        Transpose(a) => Transpose(m(a)),
        ScaleCols(a, b) => ScaleCols(m(a), m(b)),
        ScaleRows(a, b) => ScaleRows(m(a), m(b)),
        Sum(a) => Sum(m(a)),
        SumRows(a) => SumRows(m(a)),
        LogSumExp(a) => LogSumExp(m(a)),
        MaxAll(a) => MaxAll(m(a)),
        Index(a, i) => Index(m(a), i),
        Slice(a, s, l) => Slice(m(a), s, l),
        Row(a, r) => Row(m(a), r),
        Concat(v) => Concat(v.into_iter().map(m).collect()),
        StackRows(v) => StackRows(v.into_iter().map(m).collect()),
    }
}

/// Evaluates `f` on fresh leaves built from `inputs` and returns the scalar
/// value together with the gradient for every input.
pub fn value_and_grad<F>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&leaves)?;
    if !out.is_tracked() {
        return Ok((
            out.item(),
            inputs.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        ));
    }
    let grads = tape.gradient(&out)?;
    Ok((
        out.item(),
        leaves.iter().map(|l| grads.wrt(l).unwrap()).collect(),
    ))
}

/// Largest coordinate-wise `|g_ad − g_fd| / max(1, |g_fd|)` between the tape
/// gradient and central differences with step `h`. Non-finite coordinates
/// count as infinite error.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let (_, grads) = value_and_grad(&f, inputs)?;
    let eval_at = |inputs: &[Tensor]| -> Result<f64> {
        let vars: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
        Ok(f(&vars)?.item())
    };
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe[k].data[i];
            probe[k].data[i] = orig + h;
            let plus = eval_at(&probe)?;
            probe[k].data[i] = orig - h;
            let minus = eval_at(&probe)?;
            probe[k].data[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let err = (g.data[i] - fd).abs() / fd.abs().max(1.0);
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn relu_of_product_value_and_gradient() {
        let (v, g) = value_and_grad(|w| Ok(w[0].mul(&Var::scalar(3.0))?.relu()), &[s(2.0)]).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g[0].item(), 3.0);
    }

    #[test]
    fn relu_negative_branch_and_breakpoint() {
        let (v, g) = value_and_grad(|w| Ok(w[0].relu()), &[s(-1.0)]).unwrap();
        assert_eq!((v, g[0].item()), (0.0, 0.0));
        let (_, g) = value_and_grad(|w| Ok(w[0].relu()), &[s(0.0)]).unwrap();
        assert_eq!(g[0].item(), 0.0);
    }

    #[test]
    fn sign_split_ties_go_to_non_negative_branch() {
        let (_, g) = value_and_grad(|w| Ok(w[0].pos_part()), &[s(0.0)]).unwrap();
        assert_eq!(g[0].item(), 1.0);
        let (_, g) = value_and_grad(|w| Ok(w[0].neg_part()), &[s(0.0)]).unwrap();
        assert_eq!(g[0].item(), 0.0);
        let (_, g) = value_and_grad(|w| Ok(w[0].abs()), &[s(0.0)]).unwrap();
        assert_eq!(g[0].item(), 1.0);
    }

    #[test]
    fn identity_has_unit_gradient() {
        let (v, g) = value_and_grad(|w| Ok(w[0].clone()), &[s(4.5)]).unwrap();
        assert_eq!(v, 4.5);
        assert_eq!(g[0].item(), 1.0);
    }

    #[test]
    fn max_of_matvec() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Var::vector(vec![2.0, 5.0]);
        let (v, g) = value_and_grad(|p| p[0].matvec(&x)?.max_all(), &[w]).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g[0].data(), &[0.0, 0.0, 2.0, 5.0]);
    }

    #[test]
    fn square_matches_finite_difference() {
        let f = |w: &[Var]| w[0].mul(&w[0]);
        let (_, g) = value_and_grad(f, &[s(1.3)]).unwrap();
        assert!((g[0].item() - 2.6).abs() < 1e-12);
        let err = finite_diff_check(f, &[s(1.3)], 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn shape_mismatch_names_operation() {
        let a = Var::vector(vec![1.0, 2.0]);
        let b = Var::vector(vec![1.0, 2.0, 3.0]);
        match a.add(&b) {
            Err(TensorError::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradient_of_foreign_output_is_an_error() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t2.leaf(s(1.0));
        assert_eq!(t1.gradient(&x).unwrap_err(), TensorError::NotOnTape);
        assert_eq!(
            t1.gradient(&Var::scalar(1.0)).unwrap_err(),
            TensorError::NotOnTape
        );
    }

    #[test]
    fn untracked_operands_do_not_grow_a_tape() {
        let t = Tape::new();
        let a = Var::vector(vec![1.0, 2.0]);
        let b = a.add(&a).unwrap().relu();
        assert!(!b.is_tracked());
        assert!(t.is_empty());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = Var::vector(vec![1000.0, 1000.0]);
        let r = v.log_sum_exp().unwrap().item();
        assert!((r - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}

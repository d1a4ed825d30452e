//! Dense reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an eager tape: every [`Graph::apply`] computes its value
//! immediately and records a node. [`Graph::backward`] walks the tape once in
//! reverse and leaves gradients on the leaves that asked for them; a graph
//! can be differentiated only once. Training loops build a fresh graph per
//! step.

mod adam;
pub(crate) mod kernels;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use num_complex::Complex64;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::spectral;
use kernels::{col2im, im2col, matmul_acc, matmul_nt_acc, matmul_tn_acc, split_axis, ConvGeom};

/// A dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                got: vec![shape],
                expected: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    /// 1-D tensor; panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "tensor must have at least one element");
        Self { shape: vec![data.len()], data }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// A trainable tensor together with its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self { value, grad: None }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator kind together with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `[m,k]·[k,n]`.
    MatMul,
    /// 2-D transpose.
    Transpose,
    /// Operands `x [B,C,H,W]`, `w [O,C,KH,KW]`, optional `b [O]`.
    Conv2d {
        stride: usize,
        padding: usize,
    },
    /// Operands `x [B,Ci,H,W]`, `w [Ci,Co,KH,KW]`, optional `b [Co]`.
    ConvTranspose2d {
        stride: usize,
        padding: usize,
        output_padding: (usize, usize),
    },
    /// `x [..., C] + b [C]`, the only row-broadcast in the engine.
    AddBias,
    Relu,
    Softmax {
        axis: usize,
    },
    /// Normalizes the last axis; operands `x [..., C]`, `gamma [C]`, `beta [C]`.
    LayerNorm {
        eps: f64,
    },
    Mean {
        axis: Option<usize>,
    },
    Sum {
        axis: Option<usize>,
    },
    Abs,
    Square,
    Reshape(Vec<usize>),
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    Concat {
        axis: usize,
    },
    /// Real DFT along axis 0: `[T,N] → [T/2+1, N, 2]` (re, im).
    Rfft,
    /// Complex modulus over a trailing (re, im) axis: `[..., 2] → [...]`.
    ComplexAbs,
}

/// Attribute-free operator names, parseable from strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Transpose,
    Conv2d,
    ConvTranspose2d,
    AddBias,
    Relu,
    Softmax,
    LayerNorm,
    Mean,
    Sum,
    Abs,
    Square,
    Reshape,
    Slice,
    Concat,
    Rfft,
    ComplexAbs,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::MatMul => OpKind::MatMul,
            Op::Transpose => OpKind::Transpose,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::AddBias => OpKind::AddBias,
            Op::Relu => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Mean { .. } => OpKind::Mean,
            Op::Sum { .. } => OpKind::Sum,
            Op::Abs => OpKind::Abs,
            Op::Square => OpKind::Square,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Slice { .. } => OpKind::Slice,
            Op::Concat { .. } => OpKind::Concat,
            Op::Rfft => OpKind::Rfft,
            Op::ComplexAbs => OpKind::ComplexAbs,
        }
    }

    fn name(&self) -> &'static str {
        self.kind().name()
    }
}

impl OpKind {
    const ALL: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::AddBias,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Reshape,
        OpKind::Slice,
        OpKind::Concat,
        OpKind::Rfft,
        OpKind::ComplexAbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::AddBias => "add_bias",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Reshape => "reshape",
            OpKind::Slice => "slice",
            OpKind::Concat => "concat",
            OpKind::Rfft => "rfft",
            OpKind::ComplexAbs => "complex_abs",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

#[derive(Debug, Clone)]
enum Saved {
    None,
    Cols(Vec<f64>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Option<Op>,
    inputs: Vec<NodeId>,
    requires_grad: bool,
    saved: Saved,
}

/// Eager computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn mismatch(op: &'static str, got: &[Vec<usize>], expected: impl Into<String>) -> Error {
    Error::ShapeMismatch { op, got: got.to_vec(), expected: expected.into() }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn conv_out(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

struct Forward {
    shape: Vec<usize>,
    value: Vec<f64>,
    saved: Saved,
}

impl Forward {
    fn plain(shape: Vec<usize>, value: Vec<f64>) -> Self {
        Self { shape, value, saved: Saved::None }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and re-arms the graph for a new forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape: tensor.shape,
            value: tensor.data,
            op: None,
            inputs: Vec::new(),
            requires_grad,
            saved: Saved::None,
        });
        id
    }

    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor, false)
    }

    pub fn variable(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor, true)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor { shape: n.shape.clone(), data: n.value.clone() }
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    /// Applies `op` to `inputs`, recording a node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        for &i in inputs {
            self.node(i)?;
        }
        let fwd = self.forward(&op, inputs)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape: fwd.shape,
            value: fwd.value,
            op: Some(op),
            inputs: inputs.to_vec(),
            requires_grad,
            saved: if requires_grad { fwd.saved } else { Saved::None },
        });
        Ok(id)
    }

    fn arity(op: &Op, inputs: &[NodeId], allowed: &[usize]) -> Result<()> {
        if allowed.contains(&inputs.len()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{} takes {:?} operands, got {}", op.name(), allowed, inputs.len())))
        }
    }

    fn forward(&self, op: &Op, inputs: &[NodeId]) -> Result<Forward> {
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|&i| self.nodes[i.0].shape.clone()).collect();
        let val = |k: usize| -> &[f64] { &self.nodes[inputs[k].0].value };
        let name = op.name();
        match op {
            Op::Add | Op::Sub | Op::Mul => {
                Self::arity(op, inputs, &[2])?;
                if shapes[0] != shapes[1] {
                    return Err(mismatch(name, &shapes, "identical shapes"));
                }
                let (a, b) = (val(0), val(1));
                let out: Vec<f64> = match op {
                    Op::Add => a.iter().zip(b).map(|(x, y)| x + y).collect(),
                    Op::Sub => a.iter().zip(b).map(|(x, y)| x - y).collect(),
                    _ => a.iter().zip(b).map(|(x, y)| x * y).collect(),
                };
                Ok(Forward::plain(shapes[0].clone(), out))
            }
            Op::Scale(s) => {
                Self::arity(op, inputs, &[1])?;
                Ok(Forward::plain(shapes[0].clone(), val(0).iter().map(|x| x * s).collect()))
            }
            Op::MatMul => {
                Self::arity(op, inputs, &[2])?;
                let (a, b) = (&shapes[0], &shapes[1]);
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(mismatch(name, &shapes, "[m,k] and [k,n]"));
                }
                let (m, k, n) = (a[0], a[1], b[1]);
                let mut out = vec![0.0; m * n];
                matmul_acc(val(0), val(1), &mut out, m, k, n);
                Ok(Forward::plain(vec![m, n], out))
            }
            Op::Transpose => {
                Self::arity(op, inputs, &[1])?;
                let s = &shapes[0];
                if s.len() != 2 {
                    return Err(mismatch(name, &shapes, "a 2-D tensor"));
                }
                let (r, c) = (s[0], s[1]);
                let a = val(0);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = a[i * c + j];
                    }
                }
                Ok(Forward::plain(vec![c, r], out))
            }
            Op::Conv2d { stride, padding } => {
                Self::arity(op, inputs, &[2, 3])?;
                let (x, w) = (&shapes[0], &shapes[1]);
                if x.len() != 4 || w.len() != 4 || x[1] != w[1] || *stride == 0 {
                    return Err(mismatch(name, &shapes, "x [B,C,H,W] and w [O,C,KH,KW]"));
                }
                if inputs.len() == 3 && shapes[2] != [w[0]] {
                    return Err(mismatch(name, &shapes, format!("bias [{}]", w[0])));
                }
                let (b, c, h, wd) = (x[0], x[1], x[2], x[3]);
                let (o, kh, kw) = (w[0], w[2], w[3]);
                let (oh, ow) = match (conv_out(h, kh, *stride, *padding), conv_out(wd, kw, *stride, *padding)) {
                    (Some(a), Some(bb)) => (a, bb),
                    _ => return Err(mismatch(name, &shapes, "kernel no larger than padded input")),
                };
                let geom = ConvGeom {
                    channels: c,
                    height: h,
                    width: wd,
                    kh,
                    kw,
                    stride: *stride,
                    padding: *padding,
                    out_h: oh,
                    out_w: ow,
                };
                let (rows, ncols) = (geom.rows(), geom.cols());
                let mut cols = vec![0.0; b * rows * ncols];
                let mut out = vec![0.0; b * o * ncols];
                let xv = val(0);
                for bi in 0..b {
                    let cb = &mut cols[bi * rows * ncols..(bi + 1) * rows * ncols];
                    im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], &geom, cb);
                    let ob = &mut out[bi * o * ncols..(bi + 1) * o * ncols];
                    matmul_acc(val(1), cb, ob, o, rows, ncols);
                    if inputs.len() == 3 {
                        for (oc, &bv) in val(2).iter().enumerate() {
                            ob[oc * ncols..(oc + 1) * ncols].iter_mut().for_each(|v| *v += bv);
                        }
                    }
                }
                Ok(Forward { shape: vec![b, o, oh, ow], value: out, saved: Saved::Cols(cols) })
            }
            Op::ConvTranspose2d { stride, padding, output_padding } => {
                Self::arity(op, inputs, &[2, 3])?;
                let (x, w) = (&shapes[0], &shapes[1]);
                if x.len() != 4 || w.len() != 4 || x[1] != w[0] || *stride == 0 {
                    return Err(mismatch(name, &shapes, "x [B,Ci,H,W] and w [Ci,Co,KH,KW]"));
                }
                if output_padding.0 >= *stride || output_padding.1 >= *stride {
                    return Err(mismatch(name, &shapes, "output_padding smaller than stride"));
                }
                if inputs.len() == 3 && shapes[2] != [w[1]] {
                    return Err(mismatch(name, &shapes, format!("bias [{}]", w[1])));
                }
                let (b, ci, h, wd) = (x[0], x[1], x[2], x[3]);
                let (co, kh, kw) = (w[1], w[2], w[3]);
                let oh = ((h - 1) * stride + kh + output_padding.0).checked_sub(2 * padding);
                let ow = ((wd - 1) * stride + kw + output_padding.1).checked_sub(2 * padding);
                let (oh, ow) = match (oh, ow) {
                    (Some(a), Some(bb)) if a > 0 && bb > 0 => (a, bb),
                    _ => return Err(mismatch(name, &shapes, "positive output extent")),
                };
                let geom = ConvGeom {
                    channels: co,
                    height: oh,
                    width: ow,
                    kh,
                    kw,
                    stride: *stride,
                    padding: *padding,
                    out_h: h,
                    out_w: wd,
                };
                let (rows, ncols) = (geom.rows(), geom.cols());
                let mut cols = vec![0.0; rows * ncols];
                let mut out = vec![0.0; b * co * oh * ow];
                let xv = val(0);
                for bi in 0..b {
                    cols.iter_mut().for_each(|v| *v = 0.0);
                    matmul_tn_acc(val(1), &xv[bi * ci * ncols..(bi + 1) * ci * ncols], &mut cols, ci, rows, ncols);
                    let ob = &mut out[bi * co * oh * ow..(bi + 1) * co * oh * ow];
                    col2im(&cols, &geom, ob);
                    if inputs.len() == 3 {
                        for (oc, &bv) in val(2).iter().enumerate() {
                            ob[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().for_each(|v| *v += bv);
                        }
                    }
                }
                Ok(Forward::plain(vec![b, co, oh, ow], out))
            }
            Op::AddBias => {
                Self::arity(op, inputs, &[2])?;
                let c = *shapes[0].last().unwrap();
                if shapes[1] != [c] {
                    return Err(mismatch(name, &shapes, format!("bias [{c}]")));
                }
                let bias = val(1);
                let mut out = val(0).to_vec();
                for row in out.chunks_exact_mut(c) {
                    row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                }
                Ok(Forward::plain(shapes[0].clone(), out))
            }
            Op::Relu => {
                Self::arity(op, inputs, &[1])?;
                Ok(Forward::plain(shapes[0].clone(), val(0).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()))
            }
            Op::Softmax { axis } => {
                Self::arity(op, inputs, &[1])?;
                if *axis >= shapes[0].len() {
                    return Err(mismatch(name, &shapes, format!("axis {axis} in range")));
                }
                let (outer, len, inner) = split_axis(&shapes[0], *axis);
                let x = val(0);
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let mx = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for j in 0..len {
                            let e = libm::exp(x[at(j)] - mx);
                            out[at(j)] = e;
                            z += e;
                        }
                        for j in 0..len {
                            out[at(j)] /= z;
                        }
                    }
                }
                Ok(Forward::plain(shapes[0].clone(), out))
            }
            Op::LayerNorm { eps } => {
                Self::arity(op, inputs, &[3])?;
                let c = *shapes[0].last().unwrap();
                if shapes[1] != [c] || shapes[2] != [c] {
                    return Err(mismatch(name, &shapes, format!("gamma [{c}] and beta [{c}]")));
                }
                let (x, gamma, beta) = (val(0), val(1), val(2));
                let rows = x.len() / c;
                let mut xhat = vec![0.0; x.len()];
                let mut inv_std = vec![0.0; rows];
                let mut out = vec![0.0; x.len()];
                for r in 0..rows {
                    let row = &x[r * c..(r + 1) * c];
                    let mu = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                    let inv = 1.0 / libm::sqrt(var + eps);
                    inv_std[r] = inv;
                    for j in 0..c {
                        let h = (row[j] - mu) * inv;
                        xhat[r * c + j] = h;
                        out[r * c + j] = h * gamma[j] + beta[j];
                    }
                }
                Ok(Forward { shape: shapes[0].clone(), value: out, saved: Saved::Norm { xhat, inv_std } })
            }
            Op::Mean { axis } | Op::Sum { axis } => {
                Self::arity(op, inputs, &[1])?;
                let x = val(0);
                let is_mean = matches!(op, Op::Mean { .. });
                match axis {
                    None => {
                        let s: f64 = x.iter().sum();
                        let v = if is_mean { s / x.len() as f64 } else { s };
                        Ok(Forward::plain(vec![1], vec![v]))
                    }
                    Some(ax) => {
                        if *ax >= shapes[0].len() {
                            return Err(mismatch(name, &shapes, format!("axis {ax} in range")));
                        }
                        let (outer, len, inner) = split_axis(&shapes[0], *ax);
                        let mut out = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for j in 0..len {
                                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                        if is_mean {
                            out.iter_mut().for_each(|v| *v /= len as f64);
                        }
                        Ok(Forward::plain(reduced_shape(&shapes[0], *ax), out))
                    }
                }
            }
            Op::Abs => {
                Self::arity(op, inputs, &[1])?;
                Ok(Forward::plain(shapes[0].clone(), val(0).iter().map(|x| x.abs()).collect()))
            }
            Op::Square => {
                Self::arity(op, inputs, &[1])?;
                Ok(Forward::plain(shapes[0].clone(), val(0).iter().map(|x| x * x).collect()))
            }
            Op::Reshape(new_shape) => {
                Self::arity(op, inputs, &[1])?;
                let n: usize = new_shape.iter().product();
                if new_shape.is_empty() || new_shape.contains(&0) || n != val(0).len() {
                    return Err(mismatch(name, &shapes, format!("{new_shape:?} with equal element count")));
                }
                Ok(Forward::plain(new_shape.clone(), val(0).to_vec()))
            }
            Op::Slice { axis, start, end } => {
                Self::arity(op, inputs, &[1])?;
                let s = &shapes[0];
                if *axis >= s.len() || start >= end || *end > s[*axis] {
                    return Err(mismatch(name, &shapes, format!("axis {axis} range {start}..{end}")));
                }
                let (outer, len, inner) = split_axis(s, *axis);
                let x = val(0);
                let w = end - start;
                let mut out = Vec::with_capacity(outer * w * inner);
                for o in 0..outer {
                    out.extend_from_slice(&x[(o * len + start) * inner..(o * len + end) * inner]);
                }
                let mut shape = s.clone();
                shape[*axis] = w;
                Ok(Forward::plain(shape, out))
            }
            Op::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(Error::InvalidArgument("concat needs at least one operand".into()));
                }
                let first = &shapes[0];
                if *axis >= first.len() {
                    return Err(mismatch(name, &shapes, format!("axis {axis} in range")));
                }
                let compatible = shapes.iter().all(|s| {
                    s.len() == first.len() && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == *axis || a == b)
                });
                if !compatible {
                    return Err(mismatch(name, &shapes, format!("equal dims except axis {axis}")));
                }
                let (outer, _, inner) = split_axis(first, *axis);
                let total: usize = shapes.iter().map(|s| s[*axis]).sum();
                let mut out = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for (k, s) in shapes.iter().enumerate() {
                        let chunk = s[*axis] * inner;
                        out.extend_from_slice(&val(k)[o * chunk..(o + 1) * chunk]);
                    }
                }
                let mut shape = first.clone();
                shape[*axis] = total;
                Ok(Forward::plain(shape, out))
            }
            Op::Rfft => {
                Self::arity(op, inputs, &[1])?;
                let s = &shapes[0];
                if s.len() != 2 || s[0] < 2 {
                    return Err(mismatch(name, &shapes, "[T,N] with T >= 2"));
                }
                let (t, n) = (s[0], s[1]);
                let nb = spectral::bin_count(t);
                let x = val(0);
                let mut out = vec![0.0; nb * n * 2];
                for ch in 0..n {
                    let col: Vec<f64> = (0..t).map(|i| x[i * n + ch]).collect();
                    let spec = spectral::rfft(&col)?;
                    for (f, b) in spec.bins().iter().enumerate() {
                        out[(f * n + ch) * 2] = b.re;
                        out[(f * n + ch) * 2 + 1] = b.im;
                    }
                }
                Ok(Forward::plain(vec![nb, n, 2], out))
            }
            Op::ComplexAbs => {
                Self::arity(op, inputs, &[1])?;
                let s = &shapes[0];
                if *s.last().unwrap() != 2 {
                    return Err(mismatch(name, &shapes, "trailing axis of length 2"));
                }
                let out: Vec<f64> = val(0).chunks_exact(2).map(|z| libm::hypot(z[0], z[1])).collect();
                let mut shape = s[..s.len() - 1].to_vec();
                if shape.is_empty() {
                    shape.push(1);
                }
                Ok(Forward::plain(shape, out))
            }
        }
    }

    /// Back-propagates from a scalar `loss`, filling gradients of every
    /// `requires_grad` leaf. Consumes the graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        let root_requires_grad = root.requires_grad;
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if root_requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let input_grads = self.backward_node(node, op, &g)?;
            for (k, ig) in input_grads.into_iter().enumerate() {
                let Some(ig) = ig else { continue };
                let target = node.inputs[k].0;
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, node: &Node, op: &Op, g: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let inp = |k: usize| &self.nodes[node.inputs[k].0];
        let wants = |k: usize| inp(k).requires_grad;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; node.inputs.len()];
        match op {
            Op::Add => {
                for k in 0..2 {
                    if wants(k) {
                        out[k] = Some(g.to_vec());
                    }
                }
            }
            Op::Sub => {
                if wants(0) {
                    out[0] = Some(g.to_vec());
                }
                if wants(1) {
                    out[1] = Some(g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul => {
                if wants(0) {
                    out[0] = Some(g.iter().zip(&inp(1).value).map(|(a, b)| a * b).collect());
                }
                if wants(1) {
                    out[1] = Some(g.iter().zip(&inp(0).value).map(|(a, b)| a * b).collect());
                }
            }
            Op::Scale(s) => out[0] = Some(g.iter().map(|v| v * s).collect()),
            Op::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                if wants(0) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(g, &b.value, &mut da, m, k, n);
                    out[0] = Some(da);
                }
                if wants(1) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(&a.value, g, &mut db, m, k, n);
                    out[1] = Some(db);
                }
            }
            Op::Transpose => {
                let (r, c) = (inp(0).shape[0], inp(0).shape[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                out[0] = Some(d);
            }
            Op::Conv2d { stride, padding } => {
                let (x, w) = (inp(0), inp(1));
                let (b, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let (o, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let geom = ConvGeom {
                    channels: c,
                    height: h,
                    width: wd,
                    kh,
                    kw,
                    stride: *stride,
                    padding: *padding,
                    out_h: oh,
                    out_w: ow,
                };
                let (rows, ncols) = (geom.rows(), geom.cols());
                let Saved::Cols(cols) = &node.saved else {
                    return Err(Error::InvalidArgument("conv2d node lost its saved patches".into()));
                };
                let mut dx = wants(0).then(|| vec![0.0; x.value.len()]);
                let mut dw = wants(1).then(|| vec![0.0; w.value.len()]);
                let mut db = (node.inputs.len() == 3 && wants(2)).then(|| vec![0.0; o]);
                let mut dcols = vec![0.0; rows * ncols];
                for bi in 0..b {
                    let gb = &g[bi * o * ncols..(bi + 1) * o * ncols];
                    if let Some(dw) = dw.as_mut() {
                        matmul_nt_acc(gb, &cols[bi * rows * ncols..(bi + 1) * rows * ncols], dw, o, rows, ncols);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcols.iter_mut().for_each(|v| *v = 0.0);
                        matmul_tn_acc(&w.value, gb, &mut dcols, o, rows, ncols);
                        col2im(&dcols, &geom, &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd]);
                    }
                    if let Some(db) = db.as_mut() {
                        for (oc, d) in db.iter_mut().enumerate() {
                            *d += gb[oc * ncols..(oc + 1) * ncols].iter().sum::<f64>();
                        }
                    }
                }
                out[0] = dx;
                out[1] = dw;
                if node.inputs.len() == 3 {
                    out[2] = db;
                }
            }
            Op::ConvTranspose2d { stride, padding, .. } => {
                let (x, w) = (inp(0), inp(1));
                let (b, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let (co, kh, kw) = (w.shape[1], w.shape[2], w.shape[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let geom = ConvGeom {
                    channels: co,
                    height: oh,
                    width: ow,
                    kh,
                    kw,
                    stride: *stride,
                    padding: *padding,
                    out_h: h,
                    out_w: wd,
                };
                let (rows, ncols) = (geom.rows(), geom.cols());
                let mut dx = wants(0).then(|| vec![0.0; x.value.len()]);
                let mut dw = wants(1).then(|| vec![0.0; w.value.len()]);
                let mut db = (node.inputs.len() == 3 && wants(2)).then(|| vec![0.0; co]);
                let mut gcols = vec![0.0; rows * ncols];
                for bi in 0..b {
                    let gb = &g[bi * co * oh * ow..(bi + 1) * co * oh * ow];
                    im2col(gb, &geom, &mut gcols);
                    let xb = &x.value[bi * ci * ncols..(bi + 1) * ci * ncols];
                    if let Some(dx) = dx.as_mut() {
                        matmul_acc(&w.value, &gcols, &mut dx[bi * ci * ncols..(bi + 1) * ci * ncols], ci, rows, ncols);
                    }
                    if let Some(dw) = dw.as_mut() {
                        matmul_nt_acc(xb, &gcols, dw, ci, rows, ncols);
                    }
                    if let Some(db) = db.as_mut() {
                        for (oc, d) in db.iter_mut().enumerate() {
                            *d += gb[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
                        }
                    }
                }
                out[0] = dx;
                out[1] = dw;
                if node.inputs.len() == 3 {
                    out[2] = db;
                }
            }
            Op::AddBias => {
                let c = inp(1).value.len();
                if wants(0) {
                    out[0] = Some(g.to_vec());
                }
                if wants(1) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    out[1] = Some(db);
                }
            }
            Op::Relu => {
                out[0] = Some(g.iter().zip(&inp(0).value).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Softmax { axis } => {
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let y = &node.value;
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let s: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            d[at(j)] = y[at(j)] * (g[at(j)] - s);
                        }
                    }
                }
                out[0] = Some(d);
            }
            Op::LayerNorm { .. } => {
                let Saved::Norm { xhat, inv_std } = &node.saved else {
                    return Err(Error::InvalidArgument("layer_norm node lost its statistics".into()));
                };
                let gamma = &inp(1).value;
                let c = gamma.len();
                if wants(0) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gamma[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            dx[r * c + j] = inv * (gr[j] * gamma[j] - m1 - hr[j] * m2);
                        }
                    }
                    out[0] = Some(dx);
                }
                if wants(1) {
                    let mut dg = vec![0.0; c];
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    out[1] = Some(dg);
                }
                if wants(2) {
                    let mut dbeta = vec![0.0; c];
                    for gr in g.chunks_exact(c) {
                        dbeta.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                    out[2] = Some(dbeta);
                }
            }
            Op::Mean { axis } | Op::Sum { axis } => {
                let x = inp(0);
                let is_mean = matches!(op, Op::Mean { .. });
                match axis {
                    None => {
                        let v = if is_mean { g[0] / x.value.len() as f64 } else { g[0] };
                        out[0] = Some(vec![v; x.value.len()]);
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(&x.shape, *ax);
                        let scale = if is_mean { 1.0 / len as f64 } else { 1.0 };
                        let mut d = vec![0.0; x.value.len()];
                        for o in 0..outer {
                            for j in 0..len {
                                let dst = &mut d[(o * len + j) * inner..(o * len + j + 1) * inner];
                                dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(a, b)| *a = b * scale);
                            }
                        }
                        out[0] = Some(d);
                    }
                }
            }
            Op::Abs => {
                out[0] = Some(
                    g.iter()
                        .zip(&inp(0).value)
                        .map(|(gv, &x)| {
                            if x > 0.0 {
                                *gv
                            } else if x < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
            Op::Square => out[0] = Some(g.iter().zip(&inp(0).value).map(|(gv, x)| 2.0 * x * gv).collect()),
            Op::Reshape(_) => out[0] = Some(g.to_vec()),
            Op::Slice { axis, start, end } => {
                let x = inp(0);
                let (outer, len, inner) = split_axis(&x.shape, *axis);
                let w = end - start;
                let mut d = vec![0.0; x.value.len()];
                for o in 0..outer {
                    d[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                out[0] = Some(d);
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for k in 0..node.inputs.len() {
                    let len = inp(k).shape[*axis];
                    if wants(k) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&g[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                        }
                        out[k] = Some(d);
                    }
                    offset += len;
                }
            }
            Op::Rfft => {
                let (t, n) = (inp(0).shape[0], inp(0).shape[1]);
                let nb = spectral::bin_count(t);
                let mut d = vec![0.0; t * n];
                for ch in 0..n {
                    let cot: Vec<Complex64> =
                        (0..nb).map(|f| Complex64::new(g[(f * n + ch) * 2], g[(f * n + ch) * 2 + 1])).collect();
                    let col = spectral::rfft_adjoint(&cot, t)?;
                    for (i, v) in col.into_iter().enumerate() {
                        d[i * n + ch] = v;
                    }
                }
                out[0] = Some(d);
            }
            Op::ComplexAbs => {
                let z = &inp(0).value;
                let mut d = vec![0.0; z.len()];
                for (i, (&m, gv)) in node.value.iter().zip(g).enumerate() {
                    if m > 0.0 {
                        d[2 * i] = gv * z[2 * i] / m;
                        d[2 * i + 1] = gv * z[2 * i + 1] / m;
                    }
                }
                out[0] = Some(d);
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::AddBias, &[x, b])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::Softmax { axis }, &[a])
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Op::LayerNorm { eps }, &[x, gamma, beta])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean { axis: None }, &[a])
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::Mean { axis: Some(axis) }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum { axis: None }, &[a])
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Abs, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.into()), &[a])
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn rfft(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Rfft, &[a])
    }

    pub fn complex_abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::ComplexAbs, &[a])
    }
}

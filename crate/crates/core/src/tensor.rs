//! Dense row-major `f64` arrays and a tape-based reverse-mode autodiff.
//!
//! A [`Tape`] records every operation performed on its [`Var`] handles in
//! execution order. Because nodes can only refer to earlier nodes the tape is
//! already topologically sorted, and [`Tape::backward`] is a single reverse
//! sweep that visits each node once.
//!
//! Operations whose backward rule is easier to write as a fused kernel (the
//! selective scan, the logistic loss) plug in through [`CustomOp`].

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by `{op}` at tape node {node}")]
    NonFinite { op: String, node: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

/// Dense tensor. `data.len() == shape.iter().product()` always holds.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The sole element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation with a hand-written vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input (`None` for inputs that take no
    /// gradient), given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Narrow { x: Var, start: usize, len: usize },
    Concat(Vec<Var>),
    CausalConv1d { u: Var, kernel: Var, bias: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Silu(_) => "silu",
            Op::Softplus(_) => "softplus",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Concat(_) => "concat",
            Op::CausalConv1d { .. } => "causal_conv1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Computation tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<TensorError>,
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let id = self.nodes.len();
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(TensorError::NonFinite {
                op: op.name().to_string(),
                node: id,
            });
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Constant copy of `v`, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// First non-finite forward value recorded on this tape, if any.
    pub fn check_finite(&self) -> Result<()> {
        match &self.fault {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Accumulated gradient of `v`; zeros when nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        let data = self.grads.get(v.0).and_then(|g| g.clone()).unwrap_or_else(|| vec![0.0; value.numel()]);
        Tensor {
            shape: value.shape.clone(),
            data,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0] {
            return shape_err("matmul", format!("{:?} x {:?}", av.shape, bv.shape));
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * n..(p + 1) * n];
                for (o, &bj) in row.iter_mut().zip(brow) {
                    *o += aip * bj;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, rg, Op::MatMul(a, b)))
    }

    /// `x[..., n] + bias[n]`, broadcasting over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.last_dim();
        if bv.rank() != 1 || bv.shape[0] != n || xv.rank() == 0 {
            return shape_err("add_bias", format!("{:?} + {:?}", xv.shape, bv.shape));
        }
        let mut data = xv.data.clone();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, rg, Op::AddBias(x, bias)))
    }

    /// `x · w + b` over the last axis of `x`, for any number of leading axes.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().unwrap_or(&1);
        let rows = shape.iter().product::<usize>() / k.max(1);
        let flat = self.reshape(x, vec![rows, k])?;
        let mut y = self.matmul(flat, weight)?;
        if let Some(b) = bias {
            y = self.add_bias(y, b)?;
        }
        let n = self.shape(y)[1];
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = n;
        self.reshape(y, out_shape)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor { shape: av.shape.clone(), data };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.rg(x);
        self.push(out, rg, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.map(x, silu, Op::Silu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data.iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if xv.rank() == 0 || start + len > n {
            return shape_err("narrow", format!("[{start}, {}) of last axis in {:?}", start + len, xv.shape));
        }
        let data = xv.data.chunks(n).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, rg, Op::Narrow { x, start, len }))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let lead = self.shape(first).split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return shape_err("concat", format!("{:?} vs leading {:?}", s, lead));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor { shape, data }, rg, Op::Concat(parts.to_vec())))
    }

    /// Depthwise causal convolution of `u[B, L, D]` with `kernel[D, w]`.
    ///
    /// `out[b, t, d] = bias[d] + sum_j kernel[d, j] * u[b, t - (w - 1) + j, d]`,
    /// with out-of-range (negative) positions reading zero.
    pub fn causal_conv1d(&mut self, u: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (uv, kv, bv) = (self.value(u), self.value(kernel), self.value(bias));
        if uv.rank() != 3 || kv.rank() != 2 || kv.shape[0] != uv.shape[2] || kv.shape[1] == 0 || bv.shape != [uv.shape[2]] {
            return shape_err(
                "causal_conv1d",
                format!("u {:?}, kernel {:?}, bias {:?}", uv.shape, kv.shape, bv.shape),
            );
        }
        let (b, l, d) = (uv.shape[0], uv.shape[1], uv.shape[2]);
        let w = kv.shape[1];
        let mut out = vec![0.0; b * l * d];
        for bi in 0..b {
            for t in 0..l {
                let o = &mut out[(bi * l + t) * d..(bi * l + t + 1) * d];
                o.copy_from_slice(&bv.data);
                for j in 0..w {
                    let Some(src) = (t + j).checked_sub(w - 1) else { continue };
                    let urow = &uv.data[(bi * l + src) * d..(bi * l + src + 1) * d];
                    for c in 0..d {
                        o[c] += kv.data[c * w + j] * urow[c];
                    }
                }
            }
        }
        let rg = self.rg(u) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(Tensor { shape: uv.shape.clone(), data: out }, rg, Op::CausalConv1d { u, kernel, bias }))
    }

    /// Normalise over the last axis, then apply `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if xv.rank() == 0 || gv.shape != [d] || bv.shape != [d] {
            return shape_err("layer_norm", format!("x {:?}, gamma {:?}, beta {:?}", xv.shape, gv.shape, bv.shape));
        }
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                xhat[r * d + c] = xh;
                out[r * d + c] = gv.data[c] * xh + bv.data[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor { shape: xv.shape.clone(), data: out };
        Ok(self.push(out, rg, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Record a precomputed forward value produced by `op` from `inputs`.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, rg, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every reachable
    /// node's gradient. Repeated calls add up until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape.clone()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = local[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut local);
            // keep the upstream gradient for inspection / accumulation
            if self.grads.len() < self.nodes.len() {
                self.grads.resize(self.nodes.len(), None);
            }
            match &mut self.grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;

        let mut acc = |v: Var, contrib: &mut dyn FnMut(&mut [f64])| {
            if !rg(v) {
                return;
            }
            let slot = local[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            contrib(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &gj) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gj;
                            }
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                let n = val(*b).numel();
                acc(*b, &mut |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv.data[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av.data[i];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)),
            Op::Exp(x) => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * out.data[i];
                }
            }),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv.data[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                })
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    let s = out.data[i];
                    gx[i] += g[i] * s * (1.0 - s);
                }
            }),
            Op::Silu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        let v = xv.data[i];
                        let s = sigmoid(v);
                        gx[i] += g[i] * s * (1.0 + v * (1.0 - s));
                    }
                })
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * sigmoid(xv.data[i]);
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v)),
            Op::Narrow { x, start, len } => {
                let n = val(*x).last_dim();
                acc(*x, &mut |gx| {
                    for (grow, orow) in gx.chunks_mut(n).zip(g.chunks(*len)) {
                        grow[*start..start + len].iter_mut().zip(orow).for_each(|(o, v)| *o += v);
                    }
                })
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    acc(p, &mut |gp| {
                        for (prow, orow) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            prow.iter_mut().zip(&orow[offset..offset + w]).for_each(|(o, v)| *o += v);
                        }
                    });
                    offset += w;
                }
            }
            Op::CausalConv1d { u, kernel, bias } => {
                let (uv, kv) = (val(*u), val(*kernel));
                let (b, l, d) = (uv.shape[0], uv.shape[1], uv.shape[2]);
                let w = kv.shape[1];
                let taps = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for bi in 0..b {
                        for t in 0..l {
                            for j in 0..w {
                                let Some(src) = (t + j).checked_sub(w - 1) else { continue };
                                for c in 0..d {
                                    f((bi * l + t) * d + c, (bi * l + src) * d + c, c * w + j, c);
                                }
                            }
                        }
                    }
                };
                acc(*u, &mut |gu| taps(&mut |o, s, k, _| gu[s] += g[o] * kv.data[k]));
                acc(*kernel, &mut |gk| taps(&mut |o, s, k, _| gk[k] += g[o] * uv.data[s]));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gv = val(*gamma);
                let d = gv.numel();
                acc(*x, &mut |gx| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let gy = &g[r * d..(r + 1) * d];
                        let gxh: Vec<f64> = gy.iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                        let mean_g = gxh.iter().sum::<f64>() / d as f64;
                        let mean_gx = gxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            gx[r * d + c] += is * (gxh[c] - mean_g - xh[c] * mean_gx);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            gg[c] += grow[c] * xrow[c];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&ins, out, g);
                for (&v, gi) in inputs.iter().zip(grads) {
                    if let Some(gi) = gi {
                        acc(v, &mut |slot| slot.iter_mut().zip(&gi).for_each(|(o, x)| *o += x));
                    }
                }
            }
        }
    }
}

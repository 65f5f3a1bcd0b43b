use crate::error::{GradError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations addressable by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
    Relu,
    Sigmoid,
    Softplus,
    Log,
    Neg,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Mul)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Marks an output slot of [`Tape::gather`] that receives zero.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Softplus,
    Log,
    Neg,
    Square,
    Clamp01,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d { input: Var, kernel: Var, bias: Var },
    Reduce(ReduceKind, Var),
    SumAxis0(Var),
    Reshape(Var),
    Gather { src: Var, index: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(GradError::NonFinite { op, index }),
        None => Ok(()),
    }
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

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the value's shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, rg: bool) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GradError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    /// Dispatches a pointwise operation by kind. `b` is required for binary kinds only.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (ElementwiseKind::Add, Some(b)) => self.add(a, b),
            (ElementwiseKind::Mul, Some(b)) => self.mul(a, b),
            (ElementwiseKind::Relu, None) => self.relu(a),
            (ElementwiseKind::Sigmoid, None) => self.sigmoid(a),
            (ElementwiseKind::Softplus, None) => self.softplus(a),
            (ElementwiseKind::Log, None) => self.log(a),
            (ElementwiseKind::Neg, None) => self.neg(a),
            (k, _) => Err(GradError::Config(format!(
                "{k:?} expects {} operand(s)",
                if k.is_binary() { 2 } else { 1 }
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked("add", v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked("sub", v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked("mul", v, Op::Mul(a, b), rg)
    }

    fn unary(&mut self, kind: Unary, name: &'static str, a: Var) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Log => f64::ln,
            Unary::Neg => |x| -x,
            Unary::Square => |x| x * x,
            Unary::Clamp01 => |x| x.clamp(0.0, 1.0),
        };
        let v = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push_checked(name, v, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, "relu", a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, "sigmoid", a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, "softplus", a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((index, &value)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| **v <= 0.0)
        {
            return Err(GradError::Domain {
                op: "log",
                index,
                value,
            });
        }
        self.unary(Unary::Log, "log", a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, "neg", a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, "square", a)
    }

    /// Limits values to `[0, 1]`. The gradient is 1 strictly inside and 0 elsewhere,
    /// including at the bounds themselves.
    pub fn clamp01(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Clamp01, "clamp01", a)
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        let rg = self.requires_grad(a);
        self.push_checked("scale", v, Op::Scale(a, c), rg)
    }

    /// Adds a constant scalar.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        let rg = self.requires_grad(a);
        self.push_checked("add_scalar", v, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GradError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, p, q, r);
        let v = Tensor::new(vec![p, r], out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked("matmul", v, Op::MatMul(a, b), rg)
    }

    /// Same-size 2-D cross-correlation, stride 1, zero padding `(k - 1) / 2`.
    ///
    /// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, k, k]`, `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if sk.len() != 4 || sk[2] != sk[3] {
            return Err(GradError::Config(format!(
                "conv2d kernel must be [C_out, C_in, k, k], got {sk:?}"
            )));
        }
        if sk[2] % 2 == 0 {
            return Err(GradError::Config(format!(
                "conv2d kernel size must be odd, got {}",
                sk[2]
            )));
        }
        if si.len() != 3 || si[0] != sk[1] {
            return Err(GradError::Shape {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        if sb != [sk[0]] {
            return Err(GradError::Shape {
                op: "conv2d bias",
                lhs: sb.to_vec(),
                rhs: vec![sk[0]],
            });
        }
        let geom = ConvGeom {
            c_in: si[0],
            h: si[1],
            w: si[2],
            c_out: sk[0],
            k: sk[2],
        };
        let out = conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let v = Tensor::new(vec![geom.c_out, geom.h, geom.w], out)?;
        let rg = self.requires_grad(input) || self.requires_grad(kernel) || self.requires_grad(bias);
        self.push_checked("conv2d", v, Op::Conv2d { input, kernel, bias }, rg)
    }

    pub fn reduce(&mut self, kind: ReduceKind, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.sum();
        let v = match kind {
            ReduceKind::Sum => s,
            ReduceKind::Mean => s / t.len() as f64,
        };
        let rg = self.requires_grad(a);
        self.push_checked("reduce", Tensor::scalar(v), Op::Reduce(kind, a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a)
    }

    /// Sums over the leading axis: `[A, rest..] -> [rest..]`.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(GradError::Config(format!(
                "sum_axis0 needs at least two axes, got {shape:?}"
            )));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out = vec![0.0; inner];
        for chunk in self.value(a).data().chunks_exact(inner) {
            out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
        }
        let v = Tensor::new(shape[1..].to_vec(), out)?;
        let rg = self.requires_grad(a);
        self.push_checked("sum_axis0", v, Op::SumAxis0(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// General index selection: `out[j] = src[index[j]]`, or zero where
    /// `index[j] == GATHER_ZERO`. Backward scatter-adds.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != index.len() || shape.contains(&0) {
            return Err(GradError::Shape {
                op: "gather",
                lhs: shape,
                rhs: vec![index.len()],
            });
        }
        let sdata = self.value(src).data();
        if let Some(&bad) = index.iter().find(|&&i| i != GATHER_ZERO && i >= sdata.len()) {
            return Err(GradError::Config(format!(
                "gather index {bad} out of range for {} elements",
                sdata.len()
            )));
        }
        let out = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { sdata[i] })
            .collect();
        let v = Tensor::new(shape, out)?;
        let rg = self.requires_grad(src);
        Ok(self.push(v, Op::Gather { src, index }, rg))
    }

    /// Transpose of a 2-D node.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(GradError::Config(format!("transpose needs 2 axes, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(a, index, vec![c, r])
    }

    /// Reverse sweep from a one-element `root`. Gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(GradError::NonScalarRoot(root_shape.to_vec()));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        adj[root.0] = Some(Tensor::full(root_shape.to_vec(), 1.0));

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        for (i, a) in adj.into_iter().enumerate() {
            let Some(a) = a else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&a),
                slot @ None => *slot = Some(a),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if rg(v) {
                        accumulate(adj, v, g.data(), self.shape(v));
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(adj, *a, g.data(), self.shape(*a));
                }
                if rg(*b) {
                    let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                    accumulate(adj, *b, &neg, self.shape(*b));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    let d: Vec<f64> = g.data().iter().zip(vb).map(|(g, y)| g * y).collect();
                    accumulate(adj, *a, &d, self.shape(*a));
                }
                if rg(*b) {
                    let d: Vec<f64> = g.data().iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(adj, *b, &d, self.shape(*b));
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Softplus => sigmoid(x),
                            Unary::Log => 1.0 / x,
                            Unary::Neg => -1.0,
                            Unary::Square => 2.0 * x,
                            Unary::Clamp01 => {
                                if x > 0.0 && x < 1.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                accumulate(adj, *a, &d, self.shape(*a));
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.data().iter().map(|x| x * c).collect();
                accumulate(adj, *a, &d, self.shape(*a));
            }
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(adj, *a, g.data(), self.shape(*a)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (p, q, r) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    // dA = G · Bᵀ
                    let mut d = vec![0.0; p * q];
                    for i in 0..p {
                        let grow = &g.data()[i * r..(i + 1) * r];
                        for k in 0..q {
                            let brow = &vb[k * r..(k + 1) * r];
                            d[i * q + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(adj, *a, &d, sa);
                }
                if rg(*b) {
                    // dB = Aᵀ · G
                    let mut d = vec![0.0; q * r];
                    for i in 0..p {
                        let grow = &g.data()[i * r..(i + 1) * r];
                        for k in 0..q {
                            let aik = va[i * q + k];
                            if aik == 0.0 {
                                continue;
                            }
                            d[k * r..(k + 1) * r]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, gv)| *o += aik * gv);
                        }
                    }
                    accumulate(adj, *b, &d, sb);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let (si, sk) = (self.shape(*input), self.shape(*kernel));
                let geom = ConvGeom {
                    c_in: si[0],
                    h: si[1],
                    w: si[2],
                    c_out: sk[0],
                    k: sk[2],
                };
                let (gi, gk) = conv2d_backward(
                    &geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g.data(),
                    rg(*input),
                    rg(*kernel),
                );
                if let Some(gi) = gi {
                    accumulate(adj, *input, &gi, si);
                }
                if let Some(gk) = gk {
                    accumulate(adj, *kernel, &gk, sk);
                }
                if rg(*bias) {
                    let plane = geom.h * geom.w;
                    let gb: Vec<f64> = g.data().chunks_exact(plane).map(|c| c.iter().sum()).collect();
                    accumulate(adj, *bias, &gb, self.shape(*bias));
                }
            }
            Op::Reduce(kind, a) => {
                let n = self.value(*a).len();
                let s = match kind {
                    ReduceKind::Sum => g.item(),
                    ReduceKind::Mean => g.item() / n as f64,
                };
                accumulate(adj, *a, &vec![s; n], self.shape(*a));
            }
            Op::SumAxis0(a) => {
                let reps = self.shape(*a)[0];
                let d: Vec<f64> = (0..reps).flat_map(|_| g.data().iter().copied()).collect();
                accumulate(adj, *a, &d, self.shape(*a));
            }
            Op::Gather { src, index } => {
                let mut d = vec![0.0; self.value(*src).len()];
                for (&j, &gv) in index.iter().zip(g.data()) {
                    if j != GATHER_ZERO {
                        d[j] += gv;
                    }
                }
                accumulate(adj, *src, &d, self.shape(*src));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, d: &[f64], shape: &[usize]) {
    match &mut adj[v.0] {
        Some(t) => t
            .data_mut()
            .iter_mut()
            .zip(d)
            .for_each(|(a, b)| *a += b),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d.to_vec()).expect("gradient shape"));
        }
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            orow.iter_mut()
                .zip(&b[k * r..(k + 1) * r])
                .for_each(|(o, bv)| *o += aik * bv);
        }
    }
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
}

impl ConvGeom {
    /// For kernel offset `off` (in `0..k`), the output index range whose shifted
    /// input index stays in `0..len`, and the signed shift.
    fn span(&self, off: usize, len: usize) -> (usize, usize, isize) {
        let shift = off as isize - (self.k / 2) as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        (lo, hi.max(lo), shift)
    }
}

fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.h * g.w;
    let mut out = vec![0.0; g.c_out * plane];
    for co in 0..g.c_out {
        let oplane = &mut out[co * plane..(co + 1) * plane];
        oplane.iter_mut().for_each(|o| *o = bias[co]);
        for ci in 0..g.c_in {
            let iplane = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..g.k {
                let (y0, y1, dy) = g.span(ky, g.h);
                for kx in 0..g.k {
                    let wv = kernel[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1, dx) = g.span(kx, g.w);
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let orow = &mut oplane[y * g.w + x0..y * g.w + x1];
                        let ix0 = (x0 as isize + dx) as usize;
                        let irow = &iplane[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                        orow.iter_mut().zip(irow).for_each(|(o, i)| *o += wv * i);
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.h * g.w;
    let mut gi = want_input.then(|| vec![0.0; g.c_in * plane]);
    let mut gk = want_kernel.then(|| vec![0.0; kernel.len()]);
    for co in 0..g.c_out {
        let gplane = &grad_out[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let iplane = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..g.k {
                let (y0, y1, dy) = g.span(ky, g.h);
                for kx in 0..g.k {
                    let widx = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                    let wv = kernel[widx];
                    let (x0, x1, dx) = g.span(kx, g.w);
                    let ix0 = (x0 as isize + dx) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let grow = &gplane[y * g.w + x0..y * g.w + x1];
                        let irange = iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0);
                        if gk.is_some() {
                            acc += grow
                                .iter()
                                .zip(&iplane[irange.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                        if let Some(gi) = gi.as_mut() {
                            if wv != 0.0 {
                                let off = ci * plane;
                                gi[off + irange.start..off + irange.end]
                                    .iter_mut()
                                    .zip(grow)
                                    .for_each(|(o, gv)| *o += wv * gv);
                            }
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    (gi, gk)
}

//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! valid topological order and `backward` is a single reverse sweep.
//! Spatial tensors use NHWC layout: `[batch, height, width, channels]`.

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation whose forward value is computed by the caller and whose
/// backward pass is supplied as a trait object.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &str;

    /// Returns one gradient buffer per input (`None` for inputs that
    /// receive no gradient).
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Gate {
        x: Var,
        gate: Var,
    },
    Scale(Var, T),
    Upsample2x(Var),
    L2Normalize {
        x: Var,
        eps: T,
        norms: Vec<T>,
    },
    Mean(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Gate { x, gate } => vec![*x, *gate],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::Upsample2x(x)
            | Op::Mean(x)
            | Op::L2Normalize { x, .. } => vec![*x],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn kind(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "conv1x1",
            Op::MatMul(..) => "matmul",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Gate { .. } => "gate",
            Op::Scale(..) => "scale",
            Op::Upsample2x(_) => "upsample2x",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Mean(_) => "mean",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Computation graph recorded eagerly: every op evaluates its forward
/// value immediately and remembers what backward needs.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(what: &str, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::ShapeMismatch(format!("{what}: {shapes:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        let op = match op {
            // Im2col buffers are only needed for the weight gradient.
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } if !self.nodes[weight.0].requires_grad => Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols: {
                    drop(cols);
                    Vec::new()
                },
            },
            other => other,
        };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn op_kind(&self, v: Var) -> &str {
        self.nodes[v.0].op.kind()
    }

    /// Ids of the nodes feeding `v`; always smaller than `v.index()`.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// 2D convolution, NHWC input `[n, h, w, c]`, weight `[kh, kw, c, o]`,
    /// optional bias `[o]`, zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || stride == 0 {
            return Err(mismatch("conv2d input/weight", &[&xs, &ws]));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[3]] {
                return Err(mismatch("conv2d bias", &[self.shape(b), &ws]));
            }
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, o) = (ws[0], ws[1], ws[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(mismatch("conv2d kernel larger than padded input", &[&xs, &ws]));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeometry {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let kc = kh * kw * c;
        let m = n * ho * wo;
        let cols = im2col(self.value(input).data(), [n, h, w, c], geom, ho, wo);
        let mut out = vec![T::zero(); m * o];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(bd);
            }
        }
        T::gemm(
            m,
            kc,
            o,
            T::one(),
            &cols,
            kc as isize,
            1,
            self.value(weight).data(),
            o as isize,
            1,
            if bias.is_some() { T::one() } else { T::zero() },
            &mut out,
            o as isize,
            1,
        );
        let value = Tensor::new(vec![n, ho, wo, o], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// 1×1 convolution over the trailing axis: `[..., cin] · [cin, cout]`.
    pub fn conv1x1(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(mismatch("conv1x1 input/weight", &[&xs, &ws]));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[1]] {
                return Err(mismatch("conv1x1 bias", &[self.shape(b), &ws]));
            }
        }
        let (cin, cout) = (ws[0], ws[1]);
        let m = self.value(input).numel() / cin;
        let mut out = vec![T::zero(); m * cout];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        T::gemm(
            m,
            cin,
            cout,
            T::one(),
            self.value(input).data(),
            cin as isize,
            1,
            self.value(weight).data(),
            cout as isize,
            1,
            if bias.is_some() { T::one() } else { T::zero() },
            &mut out,
            cout as isize,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &[&sa, &sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(what, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplies `x[..., c]` by a per-cell gate `gate[..., 1]`.
    pub fn gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x).to_vec(), self.shape(gate).to_vec());
        if xs.len() != gs.len()
            || gs.last() != Some(&1)
            || xs[..xs.len() - 1] != gs[..gs.len() - 1]
        {
            return Err(mismatch("gate", &[&xs, &gs]));
        }
        let c = *xs.last().unwrap();
        let gd = self.value(gate).data();
        let mut data = self.value(x).data().to_vec();
        for (cell, &g) in data.chunks_exact_mut(c).zip(gd) {
            for v in cell {
                *v = *v * g;
            }
        }
        let value = Tensor::new(xs, data)?;
        Ok(self.push(value, Op::Gate { x, gate }))
    }

    /// Nearest-neighbour ×2 upsampling of an NHWC tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(mismatch("upsample2x expects NHWC", &[&s]));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * 4 * h * w * c];
        for b in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let si = ((b * h + y / 2) * w + xx / 2) * c;
                    let di = ((b * 2 * h + y) * 2 * w + xx) * c;
                    out[di..di + c].copy_from_slice(&src[si..si + c]);
                }
            }
        }
        let value = Tensor::new(vec![n, 2 * h, 2 * w, c], out)?;
        Ok(self.push(value, Op::Upsample2x(x)))
    }

    /// `x / (‖x‖ + eps)` along the trailing axis.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let src = self.value(x);
        let c = src.last_dim();
        let mut data = src.data().to_vec();
        let mut norms = Vec::with_capacity(data.len() / c.max(1));
        for cell in data.chunks_exact_mut(c) {
            let r = cell.iter().map(|&v| v * v).sum::<T>().sqrt();
            let d = r + eps;
            for v in cell.iter_mut() {
                *v = *v / d;
            }
            norms.push(r);
        }
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::L2Normalize { x, eps, norms })
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = T::from_usize(src.numel()).unwrap();
        let value = Tensor::scalar(src.data().iter().copied().sum::<T>() / n);
        self.push(value, Op::Mean(x))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Back-propagates from a scalar node. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(AutodiffError::NonScalarOutput(root_value.shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_backward(i, &grad_out);
            self.nodes[i].grad = Some(grad_out);
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[var.0].grad {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a = *a + *v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let xs = self.shape(*input);
                let ws = self.shape(*weight);
                let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let o = ws[3];
                let ys = node.value.shape();
                let (ho, wo) = (ys[1], ys[2]);
                let kc = geom.kernel_h * geom.kernel_w * c;
                let m = n * ho * wo;
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); kc * o];
                    T::gemm(
                        kc,
                        m,
                        o,
                        T::one(),
                        cols,
                        1,
                        kc as isize,
                        g,
                        o as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        o as isize,
                        1,
                    );
                    out.push((*weight, dw));
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        out.push((*b, column_sums(g, o)));
                    }
                }
                if self.needs(*input) {
                    let mut dcols = vec![T::zero(); m * kc];
                    T::gemm(
                        m,
                        o,
                        kc,
                        T::one(),
                        g,
                        o as isize,
                        1,
                        self.value(*weight).data(),
                        1,
                        o as isize,
                        T::zero(),
                        &mut dcols,
                        kc as isize,
                        1,
                    );
                    out.push((*input, col2im(&dcols, [n, h, w, c], *geom, ho, wo)));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let ws = self.shape(*weight);
                let (cin, cout) = (ws[0], ws[1]);
                let m = self.value(*input).numel() / cin;
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); cin * cout];
                    T::gemm(
                        cin,
                        m,
                        cout,
                        T::one(),
                        self.value(*input).data(),
                        1,
                        cin as isize,
                        g,
                        cout as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        cout as isize,
                        1,
                    );
                    out.push((*weight, dw));
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        out.push((*b, column_sums(g, cout)));
                    }
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); m * cin];
                    T::gemm(
                        m,
                        cout,
                        cin,
                        T::one(),
                        g,
                        cout as isize,
                        1,
                        self.value(*weight).data(),
                        1,
                        cout as isize,
                        T::zero(),
                        &mut dx,
                        cin as isize,
                        1,
                    );
                    out.push((*input, dx));
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        self.value(*b).data(),
                        1,
                        n as isize,
                        T::zero(),
                        &mut da,
                        k as isize,
                        1,
                    );
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        self.value(*a).data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::zero(),
                        &mut db,
                        n as isize,
                        1,
                    );
                    out.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let dx = xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                out.push((*x, dx));
            }
            Op::Scale(x, f) => {
                out.push((*x, g.iter().map(|&v| v * *f).collect()));
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bd = self.value(*b).data();
                    out.push((*a, g.iter().zip(bd).map(|(&gv, &v)| gv * v).collect()));
                }
                if self.needs(*b) {
                    let ad = self.value(*a).data();
                    out.push((*b, g.iter().zip(ad).map(|(&gv, &v)| gv * v).collect()));
                }
            }
            Op::Gate { x, gate } => {
                let c = self.value(*x).last_dim();
                let gd = self.value(*gate).data();
                if self.needs(*x) {
                    let mut dx = g.to_vec();
                    for (cell, &gv) in dx.chunks_exact_mut(c).zip(gd) {
                        for v in cell {
                            *v = *v * gv;
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gate) {
                    let xd = self.value(*x).data();
                    let dg = g
                        .chunks_exact(c)
                        .zip(xd.chunks_exact(c))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                        .collect();
                    out.push((*gate, dg));
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                let mut dx = vec![T::zero(); n * h * w * c];
                for b in 0..n {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let di = ((b * h + y / 2) * w + xx / 2) * c;
                            let si = ((b * 2 * h + y) * 2 * w + xx) * c;
                            for ch in 0..c {
                                dx[di + ch] = dx[di + ch] + g[si + ch];
                            }
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::L2Normalize { x, eps, norms } => {
                let xd = self.value(*x).data();
                let c = self.value(*x).last_dim();
                let mut dx = vec![T::zero(); xd.len()];
                for (((dc, xc), gc), &r) in dx
                    .chunks_exact_mut(c)
                    .zip(xd.chunks_exact(c))
                    .zip(g.chunks_exact(c))
                    .zip(norms)
                {
                    let d = r + *eps;
                    let dot: T = xc.iter().zip(gc).map(|(&a, &b)| a * b).sum();
                    let coef = if r > T::zero() {
                        dot / (d * d * r)
                    } else {
                        T::zero()
                    };
                    for ((dv, &xv), &gv) in dc.iter_mut().zip(xc).zip(gc) {
                        *dv = gv / d - xv * coef;
                    }
                }
                out.push((*x, dx));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let v = g[0] / T::from_usize(n).unwrap();
                out.push((*x, vec![v; n]));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&vals, &node.value, g);
                for (v, gr) in inputs.iter().zip(grads) {
                    if let Some(gr) = gr {
                        assert_eq!(
                            gr.len(),
                            self.value(*v).numel(),
                            "custom op `{}` returned a gradient of the wrong length",
                            op.name()
                        );
                        out.push((*v, gr));
                    }
                }
            }
        }
        out
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn column_sums<T: Scalar>(g: &[T], cols: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); cols];
    for row in g.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    acc
}

fn im2col<T: Scalar>(
    x: &[T],
    [n, h, w, c]: [usize; 4],
    geom: ConvGeometry,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let kc = geom.kernel_h * geom.kernel_w * c;
    let mut cols = vec![T::zero(); n * ho * wo * kc];
    let pad = geom.padding as isize;
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kc;
                for ky in 0..geom.kernel_h {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..geom.kernel_w {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * geom.kernel_w + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    [n, h, w, c]: [usize; 4],
    geom: ConvGeometry,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let kc = geom.kernel_h * geom.kernel_w * c;
    let mut dx = vec![T::zero(); n * h * w * c];
    let pad = geom.padding as isize;
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kc;
                for ky in 0..geom.kernel_h {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..geom.kernel_w {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * geom.kernel_w + kx) * c;
                        for ch in 0..c {
                            dx[dst + ch] = dx[dst + ch] + cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    dx
}

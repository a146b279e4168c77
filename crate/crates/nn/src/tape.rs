//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the tape once in reverse. Nodes that do not depend on any parameter
//! are never differentiated.

use ndarray::{
    concatenate, Array1, ArrayD, ArrayView4, Axis, Ix1, Ix2, Ix4, IxDyn, Slice,
};

use crate::kernels;
use crate::Float;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Scale(Var, F),
    Offset(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Upsample2x(Var),
    GlobalAvgPool(Var),
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: ArrayD<F>, inv_std: Vec<F> },
    Relu(Var),
    LeakyRelu(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceAxis { x: Var, axis: usize, start: usize },
}

#[derive(Debug)]
struct Node<F> {
    value: ArrayD<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A recording of tensor operations.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss through differentiable paths.
    pub fn get(&self, v: Var) -> Option<&ArrayD<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn as4<F: Float>(a: &ArrayD<F>) -> ArrayView4<'_, F> {
    a.view().into_dimensionality::<Ix4>().expect("expected a 4-d NCHW tensor")
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: F) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.nodes[v.0].value
    }

    /// The single element of a one-element tensor.
    pub fn item(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "item() on a tensor with {} elements", val.len());
        *val.iter().next().expect("nonempty")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, x: Var, value: ArrayD<F>, op: Op<F>) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: ArrayD<F>, op: Op<F>) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    /// Adds a 1-d `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let bv = self.value(bias);
        assert_eq!(bv.ndim(), 1, "add_bias: bias must be 1-d");
        assert_eq!(bv.len(), xs[axis], "add_bias: bias length mismatch");
        let mut bshape = vec![1; xs.len()];
        bshape[axis] = xs[axis];
        let b = bv
            .view()
            .into_shape_with_order(IxDyn(&bshape))
            .expect("bias reshape");
        let v = self.value(x) + &b;
        self.binary(x, bias, v, Op::AddBias { x, bias, axis })
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let v = self.value(x).mapv(|e| e * s);
        self.unary(x, v, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: F) -> Var {
        let v = self.value(x).mapv(|e| e + s);
        self.unary(x, v, Op::Offset(x))
    }

    /// 2-d matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix2>().expect("matmul lhs 2-d");
        let bv = self.value(b).view().into_dimensionality::<Ix2>().expect("matmul rhs 2-d");
        let v = av.dot(&bv).into_dyn();
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let bias = b.map(|b| {
            self.value(b)
                .view()
                .into_dimensionality::<Ix1>()
                .expect("conv bias 1-d")
        });
        let v = kernels::conv2d_forward(
            &as4(self.value(x)),
            &as4(self.value(w)),
            bias.as_ref(),
            stride,
            pad,
        )
        .into_dyn();
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(v, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize, ceil_mode: bool) -> Var {
        let (v, argmax) = kernels::maxpool2d_forward(&as4(self.value(x)), kernel, stride, pad, ceil_mode);
        self.unary(x, v.into_dyn(), Op::MaxPool2d { x, argmax })
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let v = kernels::upsample2x_forward(&as4(self.value(x))).into_dyn();
        self.unary(x, v, Op::Upsample2x(x))
    }

    /// Mean over the spatial axes: [N,C,H,W] -> [N,C].
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let x4 = as4(self.value(x));
        let (n, c, h, w) = x4.dim();
        let m = F::c((h * w) as f64);
        let v = x4
            .to_shape((n, c, h * w))
            .expect("reshape")
            .sum_axis(Axis(2))
            .mapv(|s| s / m)
            .into_dyn();
        self.unary(x, v, Op::GlobalAvgPool(x))
    }

    /// Instance normalisation with a per-channel affine transform.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let (xhat, inv_std) = kernels::instance_norm_stats(&as4(self.value(x)), eps);
        let c = xhat.dim().1;
        let g = self.value(gamma).view().into_shape_with_order(IxDyn(&[1, c, 1, 1])).expect("gamma");
        let b = self.value(beta).view().into_shape_with_order(IxDyn(&[1, c, 1, 1])).expect("beta");
        let xhat = xhat.into_dyn();
        let v = &xhat * &g + &b;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(v, Op::InstanceNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| if e > F::zero() { e } else { F::zero() });
        self.unary(x, v, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let v = self.value(x).mapv(|e| if e > F::zero() { e } else { e * slope });
        self.unary(x, v, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e.tanh());
        self.unary(x, v, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e.exp());
        self.unary(x, v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e.ln());
        self.unary(x, v, Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e.abs());
        self.unary(x, v, Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e.sqrt());
        self.unary(x, v, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| e * e);
        self.unary(x, v, Op::Square(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(softplus);
        self.unary(x, v, Op::Softplus(x))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let last = Axis(v.ndim() - 1);
        for mut lane in v.lanes_mut(last) {
            let max = lane.iter().fold(F::neg_infinity(), |m, &e| m.max(e));
            lane.mapv_inplace(|e| (e - max).exp());
            let s = lane.sum();
            lane.mapv_inplace(|e| e / s);
        }
        self.unary(x, v, Op::Softmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(x).sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let val = self.value(x);
        let m = val.sum() / F::c(val.len() as f64);
        let v = ArrayD::from_elem(IxDyn(&[]), m);
        self.unary(x, v, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.unary(x, v, Op::Reshape(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::Concat { parts: parts.to_vec(), axis }, rg)
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self
            .value(x)
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.unary(x, v, Op::SliceAxis { x, axis, start })
    }

    /// Back-propagates from the one-element tensor `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<ArrayD<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &ArrayD<F>, grads: &mut [Option<ArrayD<F>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, d: ArrayD<F>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|e| -e));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddBias { x, bias, axis } => {
                acc(*x, g.clone());
                if self.rg(*bias) {
                    let gb: Array1<F> = g.axis_iter(Axis(*axis)).map(|sub| sub.sum()).collect();
                    acc(*bias, gb.into_dyn());
                }
            }
            Op::Scale(x, s) => acc(*x, g.mapv(|e| e * *s)),
            Op::Offset(x) => acc(*x, g.clone()),
            Op::MatMul(a, b) => {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2-d");
                if self.rg(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<Ix2>().expect("2-d");
                    acc(*a, g2.dot(&bv.t()).into_dyn());
                }
                if self.rg(*b) {
                    let av = self.value(*a).view().into_dimensionality::<Ix2>().expect("2-d");
                    acc(*b, av.t().dot(&g2).into_dyn());
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let need_w = self.rg(*w) || b.is_some_and(|b| self.rg(b));
                if !self.rg(*x) && !need_w {
                    return;
                }
                let (dx, dw, db) = kernels::conv2d_backward(
                    &as4(self.value(*x)),
                    &as4(self.value(*w)),
                    &as4(g),
                    *stride,
                    *pad,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx.into_dyn());
                }
                acc(*w, dw.into_dyn());
                if let Some(b) = b {
                    acc(*b, db.into_dyn());
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = ArrayD::<F>::zeros(self.value(*x).raw_dim());
                let dxs = dx.as_slice_mut().expect("standard layout");
                let gs = g.as_standard_layout();
                for (&idx, &gv) in argmax.iter().zip(gs.iter()) {
                    dxs[idx] += gv;
                }
                acc(*x, dx);
            }
            Op::Upsample2x(x) => acc(*x, kernels::upsample2x_backward(&as4(g)).into_dyn()),
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape().to_vec();
                let m = F::c((shape[2] * shape[3]) as f64);
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2-d");
                let dx = ArrayD::from_shape_fn(IxDyn(&shape), |ix| g2[[ix[0], ix[1]]] / m);
                acc(*x, dx);
            }
            Op::InstanceNorm { x, gamma, beta, xhat, inv_std } => {
                let x4 = xhat.view().into_dimensionality::<Ix4>().expect("4-d");
                let g4 = g.view().into_dimensionality::<Ix4>().expect("4-d");
                let (n, c, h, w) = x4.dim();
                let m = F::c((h * w) as f64);
                let gam = self.value(*gamma);
                let mut dgamma = Array1::<F>::zeros(c);
                let mut dbeta = Array1::<F>::zeros(c);
                let mut dx = ndarray::Array4::<F>::zeros((n, c, h, w));
                for s in 0..n {
                    for ch in 0..c {
                        let xh = x4.slice(ndarray::s![s, ch, .., ..]);
                        let gy = g4.slice(ndarray::s![s, ch, .., ..]);
                        let sum_g: F = gy.sum();
                        let sum_gx: F = (&gy * &xh).sum();
                        dbeta[ch] += sum_g;
                        dgamma[ch] += sum_gx;
                        if self.rg(*x) {
                            let gm = gam[[ch]];
                            let is = inv_std[s * c + ch];
                            let mut d = dx.slice_mut(ndarray::s![s, ch, .., ..]);
                            ndarray::Zip::from(&mut d).and(&gy).and(&xh).for_each(|d, &gv, &xv| {
                                *d = gm * is / m * (m * gv - sum_g - xv * sum_gx);
                            });
                        }
                    }
                }
                if self.rg(*x) {
                    acc(*x, dx.into_dyn());
                }
                acc(*gamma, dgamma.into_dyn());
                acc(*beta, dbeta.into_dyn());
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(xv).for_each(|d, &v| {
                    if v <= F::zero() {
                        *d = F::zero();
                    }
                });
                acc(*x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(xv).for_each(|d, &v| {
                    if v <= F::zero() {
                        *d *= *slope;
                    }
                });
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (F::one() - y));
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &y| *d *= F::one() - y * y);
                acc(*x, d);
            }
            Op::Exp(x) => acc(*x, g * out),
            Op::Log(x) => acc(*x, g / self.value(*x)),
            Op::Abs(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                    *d *= if v > F::zero() {
                        F::one()
                    } else if v < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                });
                acc(*x, d);
            }
            Op::Sqrt(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &y| *d /= y + y);
                acc(*x, d);
            }
            Op::Square(x) => {
                let two = F::c(2.0);
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| *d *= two * v);
                acc(*x, d);
            }
            Op::Softplus(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| *d *= sigmoid(v));
                acc(*x, d);
            }
            Op::Softmax(x) => {
                let mut d = g.clone();
                let last = Axis(d.ndim() - 1);
                for (mut dl, yl) in d.lanes_mut(last).into_iter().zip(out.lanes(last)) {
                    let dot: F = dl.iter().zip(yl.iter()).map(|(&a, &b)| a * b).sum();
                    ndarray::Zip::from(&mut dl).and(&yl).for_each(|d, &y| *d = y * (*d - dot));
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let gv = *g.iter().next().expect("scalar");
                acc(*x, ArrayD::from_elem(self.value(*x).raw_dim(), gv));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = *g.iter().next().expect("scalar") / F::c(xv.len() as f64);
                acc(*x, ArrayD::from_elem(xv.raw_dim(), gv));
            }
            Op::Reshape(x) => {
                let d = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(self.value(*x).raw_dim())
                    .expect("reshape back");
                acc(*x, d);
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.rg(p) {
                        let d = g.slice_axis(Axis(*axis), Slice::from(start..start + len)).to_owned();
                        acc(p, d);
                    }
                    start += len;
                }
            }
            Op::SliceAxis { x, axis, start } => {
                let mut d = ArrayD::<F>::zeros(self.value(*x).raw_dim());
                let len = g.shape()[*axis];
                d.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len)).assign(g);
                acc(*x, d);
            }
        }
    }
}

pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn softplus<F: Float>(x: F) -> F {
    // ln(1+e^x) = max(x,0) + ln(1+e^-|x|)
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

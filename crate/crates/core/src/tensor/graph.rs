use super::kernels;
use super::{Element, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    AvgPool {
        x: Var,
        factor: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor4<T>,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Tensor4<T>>,
    op: Op<T>,
}

/// Tape of recorded ops. Nodes are stored in recording order, which is a
/// topological order, and [`Graph::backward`] walks it in reverse.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor4<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor4<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v`'s value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` if backward never reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor4<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, zeros when it was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor4<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor4::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Scalar value of a `(1,1,1,1)` node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor4<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            &inputs,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let out = kernels::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::ConvTranspose2d { x, w, b, stride }))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(x), k)?;
        Ok(self.push(out, &[x], Op::MaxPool { x, argmax }))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = kernels::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(out, &[x], Op::Upsample { x, factor }))
    }

    pub fn avgpool_downsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = kernels::avgpool_downsample(self.value(x), factor)?;
        Ok(self.push(out, &[x], Op::AvgPool { x, factor }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, &[a, b], Op::Concat { a, b }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.push(out, &[x], Op::SliceChannels { x, start }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, &[x], Op::Relu(x))
    }

    /// Logistic sigmoid clamped to `[1e-7, 1 - 1e-7]`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_value);
        self.push(out, &[x], Op::Sigmoid(x))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor4<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        va.expect_same_shape(name, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor4::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(out, &[a, b], Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, &[x], Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, &[x], Op::AddScalar(x))
    }

    /// `s - x`.
    pub fn rsub_scalar(&mut self, s: T, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, s)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, &[x], Op::Ln(x))
    }

    /// Sum of all elements as a `(1,1,1,1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor4::scalar(self.value(x).sum());
        self.push(out, &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor4::scalar(v.sum() / T::lit(v.numel() as f64));
        self.push(out, &[x], Op::Mean(x))
    }

    /// Reverse pass from a scalar node. Leaf gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape4::scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar (1, 1, 1, 1) loss, got {shape}"
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor4<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor4::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, g, &mut grads)?;
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: Tensor4<T>, grads: &mut [Option<Tensor4<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor4<T>| -> Result<()> {
            match grads[v.0].as_mut() {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads[v.0] = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    &g,
                    *stride,
                    *padding,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    send(b, kernels::bias_grad(&g))?;
                }
                if let Some(dw) = dw {
                    send(*w, dw)?;
                }
                if let Some(dx) = dx {
                    send(*x, dx)?;
                }
            }
            Op::ConvTranspose2d { x, w, b, stride } => {
                let (dx, dw) = kernels::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    &g,
                    *stride,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    send(b, kernels::bias_grad(&g))?;
                }
                if let Some(dw) = dw {
                    send(*w, dw)?;
                }
                if let Some(dx) = dx {
                    send(*x, dx)?;
                }
            }
            Op::MaxPool { x, argmax } => {
                send(*x, kernels::maxpool2d_backward(self.shape(*x), argmax, &g))?;
            }
            Op::Upsample { x, factor } => {
                send(*x, kernels::upsample_nearest_backward(self.shape(*x), *factor, &g))?;
            }
            Op::AvgPool { x, factor } => {
                send(*x, kernels::avgpool_downsample_backward(self.shape(*x), *factor, &g))?;
            }
            Op::Concat { a, b } => {
                let ca = self.shape(*a).c;
                let cb = self.shape(*b).c;
                if self.needs(*a) {
                    send(*a, g.slice_channels(0, ca)?)?;
                }
                if self.needs(*b) {
                    send(*b, g.slice_channels(ca, cb)?)?;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let gs = g.shape();
                let mut dx = Tensor4::zeros(xs);
                let plane = xs.plane();
                for n in 0..xs.n {
                    let src = &g.data()[n * gs.c * plane..(n + 1) * gs.c * plane];
                    let o = xs.offset(n, *start, 0, 0);
                    dx.data_mut()[o..o + gs.c * plane].copy_from_slice(src);
                }
                send(*x, dx)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                send(*x, zip_map(&g, xv, |g, x| if x > T::zero() { g } else { T::zero() }))?;
            }
            Op::Sigmoid(x) => {
                // derivative p(1-p) evaluated at the clamped output
                send(*x, zip_map(&g, &node.value, |g, p| g * p * (T::one() - p)))?;
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    send(*a, g.clone())?;
                }
                if self.needs(*b) {
                    send(*b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    send(*b, g.map(|v| -v))?;
                }
                if self.needs(*a) {
                    send(*a, g)?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    send(*a, zip_map(&g, self.value(*b), |g, y| g * y))?;
                }
                if self.needs(*b) {
                    send(*b, zip_map(&g, self.value(*a), |g, x| g * x))?;
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.needs(*a) {
                    send(*a, zip_map(&g, vb, |g, y| g / y))?;
                }
                if self.needs(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = zip_map(&node.value, vb, |q, y| q / y);
                    send(*b, zip_map(&g, &q, |g, q| -g * q))?;
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                send(*x, g.map(|v| v * s))?;
            }
            Op::AddScalar(x) => send(*x, g)?,
            Op::Ln(x) => {
                send(*x, zip_map(&g, self.value(*x), |g, x| g / x))?;
            }
            Op::Sum(x) => {
                send(*x, Tensor4::full(self.shape(*x), g.item()?))?;
            }
            Op::Mean(x) => {
                let s = self.shape(*x);
                let v = g.item()? / T::lit(s.numel() as f64);
                send(*x, Tensor4::full(s, v))?;
            }
        }
        Ok(())
    }
}

/// Logistic function clamped to `[1e-7, 1 - 1e-7]`.
pub fn sigmoid_value<T: Element>(x: T) -> T {
    let eps = T::lit(T::SIGMOID_EPS);
    let p = T::one() / (T::one() + (-x).exp());
    p.max(eps).min(T::one() - eps)
}

fn zip_map<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Tensor4<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor4::from_vec(a.shape(), data).expect("zip_map shapes agree")
}

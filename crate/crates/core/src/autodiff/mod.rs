//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation evaluates
//! eagerly, stores its result, and records enough to run its adjoint.
//! [`Graph::backward`] walks the tape once in reverse append order.
//!
//! ```
//! use pde_surrogate::autodiff::Graph;
//! use pde_surrogate::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod conv;
pub mod gradcheck;
mod linalg;
mod spectral;

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub(crate) use linalg::gemm;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Conv {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        patch: Vec<usize>,
    },
    Deconv {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        patch: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var, usize),
    Gelu(Var),
    Rfft(Var, usize),
    Irfft(Var, usize),
    Fft(Var, usize, bool),
    IndexSelect {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Scatter {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    ComplexMix(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only computation tape. Leaves may borrow their values (model
/// weights) for the lifetime `'a`.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an owned input. Gradients accumulate only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Owned(value), requires_grad)
    }

    /// Adds a borrowed input (typically a weight buffer).
    pub fn param(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Borrowed(value), requires_grad)
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        let out_shape = tensor::broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        let xa = broadcast_to(ta, &out_shape);
        let xb = broadcast_to(tb, &out_shape);
        let data = xa.iter().zip(&xb).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(out_shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Tanh-approximated GELU:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(axes)?;
        Ok(self.push(v, Op::Permute(a, axes.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.value(a).ndim();
        if nd < 2 {
            return Err(Error::shape("transpose", "needs at least 2 axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    /// Gathers `indices` along `axis`.
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.ndim() || indices.is_empty() || indices.iter().any(|&i| i >= t.shape()[axis]) {
            return Err(Error::shape(
                "index_select",
                format!("indices {indices:?} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let v = gather_axis(t, axis, indices);
        Ok(self.push(
            v,
            Op::IndexSelect {
                x: a,
                axis,
                indices: indices.to_vec(),
            },
            &[a],
        ))
    }

    /// Places slice `j` of `a` along `axis` at position `indices[j]` of a
    /// zero tensor whose `axis` has extent `size`. Adjoint of
    /// [`Graph::index_select`].
    pub fn scatter(&mut self, a: Var, axis: usize, indices: &[usize], size: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.ndim() || indices.len() != t.shape()[axis] || indices.iter().any(|&i| i >= size) {
            return Err(Error::shape(
                "scatter",
                format!(
                    "indices {indices:?} into extent {size} on axis {axis} of {:?}",
                    t.shape()
                ),
            ));
        }
        let v = scatter_axis(t, axis, indices, size);
        Ok(self.push(
            v,
            Op::Scatter {
                x: a,
                axis,
                indices: indices.to_vec(),
            },
            &[a],
        ))
    }

    // ---- normalization / activations ---------------------------------

    /// Layer normalization over the last axis, biased variance.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(Error::ShapeMismatch {
                    op: "layernorm",
                    lhs: t.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.len() / n;
        let mut xhat = vec![0.0; t.len()];
        let mut out = vec![0.0; t.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let shape = t.shape().to_vec();
        let xhat = Tensor::new(shape.clone(), xhat)?;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Numerically stable softmax along `axis` (max subtracted per slice).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::shape("softmax", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, n, inner) = split3(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let m = (0..n).map(|j| out[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..n {
                    let e = (out[at(j)] - m).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    out[at(j)] /= s;
                }
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax(x, axis), &[x]))
    }

    // ---- backward ----------------------------------------------------

    /// Propagates `d loss / d node` to every leaf with `requires_grad`.
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lt.shape()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = self.nodes[id].op {
                match &mut self.nodes[id].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (input, gi) in self.adjoint(id, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn adjoint(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![
                (*a, tensor::reduce_to(g, val(*a).shape())),
                (*b, tensor::reduce_to(g, val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, tensor::reduce_to(g, val(*a).shape())),
                (*b, tensor::reduce_to(&g.map(|x| -x), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let shape = g.shape();
                let xa = broadcast_to(val(*a), shape);
                let xb = broadcast_to(val(*b), shape);
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    let ga: Vec<f64> = g.data().iter().zip(&xb).map(|(g, y)| g * y).collect();
                    let ga = Tensor::new(shape.to_vec(), ga)?;
                    out.push((*a, tensor::reduce_to(&ga, val(*a).shape())));
                }
                if needs(*b) {
                    let gb: Vec<f64> = g.data().iter().zip(&xa).map(|(g, x)| g * x).collect();
                    let gb = Tensor::new(shape.to_vec(), gb)?;
                    out.push((*b, tensor::reduce_to(&gb, val(*b).shape())));
                }
                out
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::Matmul(a, b) => linalg::matmul_adjoint(val(*a), val(*b), g, needs(*a), needs(*b))
                .into_iter()
                .zip([*a, *b])
                .filter_map(|(t, v)| t.map(|t| (v, t)))
                .collect(),
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                vec![(*a, g.permute(&inv)?)]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
            Op::Conv { x, kernel, bias, patch } => conv::conv_adjoint(val(*x), val(*kernel), patch, g)
                .into_iter()
                .zip([Some(*x), Some(*kernel), *bias])
                .filter_map(|(t, v)| v.map(|v| (v, t)))
                .collect(),
            Op::Deconv { x, kernel, bias, patch } => conv::deconv_adjoint(val(*x), val(*kernel), patch, g)
                .into_iter()
                .zip([Some(*x), Some(*kernel), *bias])
                .filter_map(|(t, v)| v.map(|v| (v, t)))
                .collect(),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = *g.shape().last().unwrap();
                let rows = g.len() / n;
                let gm = val(*gamma).data();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..rows {
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let hr = &xhat.data()[r * n..(r + 1) * n];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..n {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gm[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * hr[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for j in 0..n {
                        dx[r * n + j] = inv_std[r] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                vec![
                    (*x, Tensor::new(g.shape().to_vec(), dx)?),
                    (*gamma, Tensor::new(vec![n], dgamma)?),
                    (*beta, Tensor::new(vec![n], dbeta)?),
                ]
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, n, inner) = split3(y.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                        }
                    }
                }
                vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::Gelu(x) => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * gelu_grad(v))
                    .collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), d)?)]
            }
            Op::Rfft(x, axis) => {
                let n = val(*x).shape()[*axis];
                vec![(*x, crate::fft::rfft_adjoint(g, *axis, n))]
            }
            Op::Irfft(x, axis) => vec![(*x, crate::fft::irfft_adjoint(g, *axis))],
            Op::Fft(x, axis, inverse) => vec![(*x, crate::fft::fft_adjoint(g, *axis, *inverse))],
            Op::IndexSelect { x, axis, indices } => {
                vec![(*x, scatter_axis(g, *axis, indices, val(*x).shape()[*axis]))]
            }
            Op::Scatter { x, axis, indices } => vec![(*x, gather_axis(g, *axis, indices))],
            Op::ComplexMix(x, w) => {
                let (dx, dw) = spectral::mix_adjoint(val(*x), val(*w), g);
                vec![(*x, dx), (*w, dw)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), g.data()[0] / t.len() as f64))]
            }
        };
        Ok(out)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn broadcast_to(t: &Tensor, shape: &[usize]) -> Vec<f64> {
    if t.shape() == shape {
        return t.data().to_vec();
    }
    let st = tensor::broadcast_strides(t.shape(), shape);
    let mut out = Vec::with_capacity(shape.iter().product());
    tensor::for_each_offset(shape, &st, |off| out.push(t.data()[off]));
    out
}

fn gather_axis(t: &Tensor, axis: usize, indices: &[usize]) -> Tensor {
    let (outer, n, inner) = split3(t.shape(), axis);
    let mut out = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &j in indices {
            let at = (o * n + j) * inner;
            out.extend_from_slice(&t.data()[at..at + inner]);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = indices.len();
    Tensor::new(shape, out).expect("gather shape")
}

fn scatter_axis(t: &Tensor, axis: usize, indices: &[usize], size: usize) -> Tensor {
    let (outer, m, inner) = split3(t.shape(), axis);
    let mut shape = t.shape().to_vec();
    shape[axis] = size;
    let mut out = Tensor::zeros(&shape);
    let d = out.data_mut();
    for o in 0..outer {
        for (j, &dst) in indices.iter().enumerate().take(m) {
            let src = (o * m + j) * inner;
            let at = (o * size + dst) * inner;
            for i in 0..inner {
                d[at + i] += t.data()[src + i];
            }
        }
    }
    out
}

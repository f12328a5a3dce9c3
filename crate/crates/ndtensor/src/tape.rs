//! Wengert-style tape: every primitive appends one node holding its output
//! value and the rule needed to push gradients back to its inputs.

use crate::error::{Result, TensorError};
use crate::ops::{conv, elementwise, encode, linalg, norm, sample, shape};
use crate::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Trilinear,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
    Gelu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        input: Var,
        indices: Vec<usize>,
    },
    MatMul(Var, Var),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    },
    DepthwiseConv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    TrilinearSample {
        grid: Var,
        points: Var,
    },
    Upsample {
        input: Var,
        mode: UpsampleMode,
    },
    FourierFeatures {
        input: Var,
        omegas: Var,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::Mean(a) | Op::Sqrt(a) | Op::Gelu(a) | Op::Reshape(a) | Op::Permute(a, _) => {
                vec![*a]
            }
            Op::Concat(xs, _) => xs.clone(),
            Op::Narrow { input, .. }
            | Op::IndexSelect { input, .. }
            | Op::Softmax { input, .. }
            | Op::Upsample { input, .. } => vec![*input],
            Op::Conv3d { input, weight, bias, .. } | Op::DepthwiseConv3d { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::LayerNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::TrilinearSample { grid, points } => vec![*grid, *points],
            Op::FourierFeatures { input, omegas } => vec![*input, *omegas],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records primitive applications in topological order and replays them in
/// reverse to accumulate gradients.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Option<Vec<T>>>>,
    check_finite: bool,
    macs: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: None,
            check_finite: false,
            macs: 0,
        }
    }

    /// Checked mode: every primitive rejects NaN/Inf outputs.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, false, Op::Leaf)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, true, Op::Leaf)
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `len`. Vars at or beyond `len` become
    /// invalid. Used to stream inference in chunks over a shared prefix.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads = None;
    }

    /// Multiply-accumulate operations performed by conv and matmul kernels
    /// since the tape was created.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, requires_grad, op))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are stored on the tape;
    /// a second call without re-recording is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass; `None` before backward or for
    /// values that do not require gradients. Reachable-but-unused leaves get
    /// an all-zero gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let grads = self.grads.as_ref()?;
        let node = self.nodes.get(v.0)?;
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match grads.get(v.0).and_then(|g| g.clone()) {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(shape),
        })
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = Acc { tape: self, grads };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc.add_copy(*a, g);
                acc.add_copy(*b, g);
            }
            Op::Sub(a, b) => {
                acc.add_copy(*a, g);
                acc.add(*b, |gb| elementwise::axpy(gb, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc.add(*a, |ga| elementwise::mul_acc(ga, g, bv));
                acc.add(*b, |gb| elementwise::mul_acc(gb, g, av));
            }
            Op::Scale(a, c) => acc.add(*a, |ga| elementwise::axpy(ga, g, *c)),
            Op::AddBias(a, b) => {
                acc.add_copy(*a, g);
                acc.add(*b, |gb| elementwise::bias_backward(gb, g));
            }
            Op::Sum(a) => acc.add(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = T::of(self.value(*a).numel() as f64);
                acc.add(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Sqrt(a) => acc.add(*a, |ga| elementwise::sqrt_backward(ga, g, out.data())),
            Op::Gelu(a) => acc.add(*a, |ga| elementwise::gelu_backward(ga, g, self.value(*a).data())),
            Op::Reshape(a) => acc.add_copy(*a, g),
            Op::Permute(a, perm) => {
                let in_shape = self.value(*a).shape();
                acc.add(*a, |ga| shape::permute_backward(ga, g, in_shape, perm));
            }
            Op::Concat(xs, axis) => {
                let mut offset = 0;
                for x in xs {
                    let xs_shape = self.value(*x).shape();
                    let len = xs_shape[*axis];
                    acc.add(*x, |gx| shape::narrow_backward(gx, g, out.shape(), *axis, offset, len));
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let in_shape = self.value(*input).shape();
                let len = out.shape()[*axis];
                // scatter the slice gradient back into the input layout
                acc.add(*input, |gi| shape::narrow_scatter(gi, g, in_shape, *axis, *start, len));
            }
            Op::IndexSelect { input, indices } => {
                let row = out.numel() / indices.len().max(1);
                acc.add(*input, |gi| shape::index_select_backward(gi, g, indices, row));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let need_a = self.requires_grad(*a);
                let need_b = self.requires_grad(*b);
                let (ga, gb) = linalg::matmul_backward(av, bv, g, need_a, need_b);
                if let Some(ga) = ga {
                    acc.add_owned(*a, ga);
                }
                if let Some(gb) = gb {
                    acc.add_owned(*b, gb);
                }
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let geo = conv::ConvGeometry::new(self.value(*input).shape(), self.value(*weight).shape(), *stride, *padding)
                    .expect("validated in forward");
                let (x, w) = (self.value(*input).data(), self.value(*weight).data());
                acc.add(*input, |gx| conv::conv3d_backward_input(&geo, gx, g, w));
                acc.add(*weight, |gw| conv::conv3d_backward_weight(&geo, gw, g, x));
                if let Some(b) = bias {
                    acc.add(*b, |gb| conv::bias_backward(&geo.channel_view(), gb, g));
                }
            }
            Op::DepthwiseConv3d { input, weight, bias } => {
                let geo = conv::DepthwiseGeometry::new(self.value(*input).shape(), self.value(*weight).shape())
                    .expect("validated in forward");
                let (x, w) = (self.value(*input).data(), self.value(*weight).data());
                acc.add(*input, |gx| conv::depthwise_backward_input(&geo, gx, g, w));
                acc.add(*weight, |gw| conv::depthwise_backward_weight(&geo, gw, g, x));
                if let Some(b) = bias {
                    acc.add(*b, |gb| conv::bias_backward(&geo.channel_view(), gb, g));
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma).data();
                acc.add(*input, |gx| norm::layer_norm_backward_input(gx, g, gv, xhat, rstd));
                acc.add(*gamma, |gg| norm::layer_norm_backward_gamma(gg, g, xhat));
                acc.add(*beta, |gb| elementwise::bias_backward(gb, g));
            }
            Op::Softmax { input, axis } => {
                acc.add(*input, |gx| norm::softmax_backward(gx, g, out, *axis));
            }
            Op::TrilinearSample { grid, points } => {
                let (gr, pts) = (self.value(*grid), self.value(*points));
                acc.add(*grid, |gg| sample::trilinear_backward_grid(gg, g, gr.shape(), pts.data()));
                acc.add(*points, |gp| sample::trilinear_backward_points(gp, g, gr, pts.data()));
            }
            Op::Upsample { input, mode } => {
                let in_shape = self.value(*input).shape();
                acc.add(*input, |gi| sample::upsample_backward(gi, g, in_shape, out.shape(), *mode));
            }
            Op::FourierFeatures { input, omegas } => {
                let (x, w) = (self.value(*input).data(), self.value(*omegas).data());
                let mut gx = acc.take(*input);
                let mut gw = acc.take(*omegas);
                encode::fourier_backward(gx.as_deref_mut(), gw.as_deref_mut(), g, x, w, out.data());
                acc.put(*input, gx);
                acc.put(*omegas, gw);
            }
        }
    }
}

struct Acc<'a, T: Scalar> {
    tape: &'a Tape<T>,
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Acc<'_, T> {
    /// Runs `f` on the (lazily zeroed) gradient buffer of `v` if it needs one.
    fn add(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.tape.nodes[v.0].requires_grad {
            return;
        }
        let n = self.tape.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    /// Detaches the (lazily zeroed) gradient buffer of `v`, if it needs one,
    /// so two buffers can be written at once; hand it back with `put`.
    fn take(&mut self, v: Var) -> Option<Vec<T>> {
        if !self.tape.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.tape.nodes[v.0].value.numel();
        Some(self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); n]))
    }

    fn put(&mut self, v: Var, buf: Option<Vec<T>>) {
        if buf.is_some() {
            self.grads[v.0] = buf;
        }
    }

    /// Accumulates `g` unchanged.
    fn add_copy(&mut self, v: Var, g: &[T]) {
        if !self.tape.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => elementwise::axpy(buf, g, T::one()),
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Accumulates a freshly computed gradient, taking it over when `v` has
    /// none yet.
    fn add_owned(&mut self, v: Var, g: Vec<T>) {
        if !self.tape.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => elementwise::axpy(buf, &g, T::one()),
            slot => *slot = Some(g),
        }
    }
}

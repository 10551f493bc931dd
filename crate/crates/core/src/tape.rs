//! Reverse-mode differentiation over a linear record of operations.
//!
//! Values are appended in execution order, so walking the record backwards
//! visits every node after all of its consumers.

use crate::error::{Error, Result};
use crate::ops::conv::{conv_backward_raw, conv_forward_raw, ConvGeometry};
use crate::ops::{self, BatchNormCache};
use crate::params::Mode;
use crate::registry::{ParamId, Registry};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, kernel: ParamId, geo: ConvGeometry },
    BatchNorm { x: Var, state: ParamId, cache: BatchNormCache<T> },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    Resize { x: Var },
    Concat { parts: Vec<Var> },
    GlobalAvgPool { x: Var },
    Softmax { x: Var },
    Add { a: Var, b: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
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
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` is unavailable.
    pub fn without_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn into_value(mut self, v: Var) -> Tensor4<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor4::zeros(Shape4::default()))
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor4<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, reg: &Registry<T>, x: Var, kernel: ParamId, rate: usize) -> Result<Var> {
        let k = reg.conv(kernel);
        let geo = ConvGeometry::new(self.shape(x), k.shape, rate, true)?;
        let out = conv_forward_raw(&geo, self.value(x).data(), &k.weights, k.bias.as_deref());
        let out = Tensor4::from_vec(geo.output_shape(), out)?;
        self.push(out, Op::Conv { x, kernel, geo }, true, "conv")
    }

    pub fn batchnorm(&mut self, reg: &Registry<T>, x: Var, state: ParamId, mode: Mode) -> Result<Var> {
        let (y, mut cache) = ops::batchnorm_normalise(self.value(x), reg.norm(state), mode)?;
        if !self.grad_enabled {
            cache.xhat = Vec::new();
        }
        self.push(y, Op::BatchNorm { x, state, cache }, true, "batchnorm")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::Relu { x }, rg, "relu")
    }

    pub fn maxpool(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::maxpool_2x2_ceil(self.value(x))?;
        let rg = self.needs(x);
        self.push(y, Op::MaxPool { x, argmax }, rg, "maxpool")
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::bilinear_resize(self.value(x), h, w)?;
        let rg = self.needs(x);
        self.push(y, Op::Resize { x }, rg, "resize")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor4<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(y, Op::Concat { parts: parts.to_vec() }, rg, "concat")
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::GlobalAvgPool { x }, rg, "global_avg_pool")
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_channels(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::Softmax { x }, rg, "softmax")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, rg, "add")
    }

    /// Batch statistics of every training-mode batch norm recorded at or
    /// after node index `start`, in execution order.
    pub fn batch_statistics(&self, start: usize) -> Vec<(ParamId, &[T], &[T])> {
        self.nodes[start..]
            .iter()
            .filter_map(|n| match &n.op {
                Op::BatchNorm { state, cache, .. } if cache.mode == Mode::Training => {
                    Some((*state, cache.batch_mean.as_slice(), cache.batch_var.as_slice()))
                }
                _ => None,
            })
            .collect()
    }

    fn accumulate(&mut self, v: Var, delta: &[T]) {
        if self.nodes[v.0].requires_grad {
            self.nodes[v.0].value.accumulate_grad(delta);
        }
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `root`) back through the record. Parameter gradients are added into
    /// the registry; leaf gradients stay readable through [`Tape::grad`].
    pub fn backward(&mut self, root: Var, seed: &[T], reg: &mut Registry<T>) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::config("backward on a tape recorded without gradients"));
        }
        if seed.len() != self.shape(root).len() {
            return Err(Error::shape(format!(
                "seed gradient of length {} for node of shape {}",
                seed.len(),
                self.shape(root)
            )));
        }
        self.nodes[root.0].value.accumulate_grad(seed);
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(up) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let up_t = Tensor4::from_vec(self.nodes[i].value.shape(), up)?;
            let up = up_t.data();
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, kernel, geo } => {
                    let (x, geo) = (*x, *geo);
                    let k = reg.conv_mut(*kernel);
                    let want = self.nodes[x.0].requires_grad;
                    let gx = conv_backward_raw(
                        &geo,
                        self.nodes[x.0].value.data(),
                        &k.weights,
                        up,
                        &mut k.grad_weights,
                        k.grad_bias.as_deref_mut(),
                        want,
                    );
                    if let Some(gx) = gx {
                        self.accumulate(x, &gx);
                    }
                }
                Op::BatchNorm { x, state, cache } => {
                    let x = *x;
                    let s = reg.norm_mut(*state);
                    let gx = ops::batchnorm_backward(cache, &s.gamma, up, &mut s.grad_gamma, &mut s.grad_beta);
                    self.accumulate(x, &gx);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let gx = ops::relu_backward(self.nodes[x.0].value.data(), up);
                    self.accumulate(x, &gx);
                }
                Op::MaxPool { x, argmax } => {
                    let x = *x;
                    let gx = ops::maxpool_backward(self.nodes[x.0].value.shape(), argmax, up);
                    self.accumulate(x, &gx);
                }
                Op::Resize { x } => {
                    let x = *x;
                    let gx = ops::bilinear_resize_backward(self.nodes[x.0].value.shape(), &up_t);
                    self.accumulate(x, &gx);
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let channels: Vec<usize> = parts.iter().map(|p| self.shape(*p).c).collect();
                    let grads = ops::concat_backward(&channels, &up_t);
                    for (p, g) in parts.into_iter().zip(grads) {
                        self.accumulate(p, &g);
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let x = *x;
                    let gx = ops::global_avg_pool_backward(self.nodes[x.0].value.shape(), up);
                    self.accumulate(x, &gx);
                }
                Op::Softmax { x } => {
                    let x = *x;
                    let c = self.nodes[i].value.shape().c;
                    let gx = ops::softmax_backward(self.nodes[i].value.data(), up, c);
                    self.accumulate(x, &gx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, up);
                    self.accumulate(b, up);
                }
            }
        }
        Ok(())
    }
}

//! Learnable parameter containers: convolution kernels and batch-norm state.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether batch normalisation uses batch statistics (and updates its
/// running averages) or the frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

impl KernelShape {
    pub const fn new(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Self { kh, kw, cin, cout }
    }

    pub const fn len(&self) -> usize {
        self.kh * self.kw * self.cin * self.cout
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of the im2col patch matrix.
    pub const fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Convolution weights laid out as `(kh, kw, cin, cout)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub shape: KernelShape,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn zeros(shape: KernelShape, with_bias: bool) -> Self {
        Self {
            shape,
            weights: vec![T::zero(); shape.len()],
            bias: with_bias.then(|| vec![T::zero(); shape.cout]),
            grad_weights: vec![T::zero(); shape.len()],
            grad_bias: with_bias.then(|| vec![T::zero(); shape.cout]),
        }
    }

    /// He initialisation: normal with `std = sqrt(2 / fan_in)`, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(shape: KernelShape, with_bias: bool, rng: &mut R) -> Self {
        let std = (2.0 / shape.patch_len() as f64).sqrt();
        let mut k = Self::zeros(shape, with_bias);
        for w in &mut k.weights {
            let z: f64 = StandardNormal.sample(rng);
            *w = T::of(z * std);
        }
        k
    }

    pub fn from_weights(shape: KernelShape, weights: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if weights.len() != shape.len() {
            return Err(Error::shape(format!(
                "kernel {shape:?} needs {} weights, got {}",
                shape.len(),
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != shape.cout {
                return Err(Error::shape(format!(
                    "kernel bias needs {} values, got {}",
                    shape.cout,
                    b.len()
                )));
            }
        }
        let mut k = Self::zeros(shape, bias.is_some());
        k.weights = weights;
        k.bias = bias;
        Ok(k)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(T::zero());
        if let Some(g) = &mut self.grad_bias {
            g.fill(T::zero());
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel affine normalisation with running statistics.
///
/// Running averages follow `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::of(self.momentum);
        let one_minus = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = m * *r + one_minus * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(batch_var) {
            *r = (m * *r + one_minus * b).max(T::zero());
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(T::zero());
        self.grad_beta.fill(T::zero());
    }

    /// Learnable scalars only (gamma and beta); running statistics are buffers.
    pub fn parameter_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

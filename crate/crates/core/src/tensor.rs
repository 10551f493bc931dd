//! Rank-4 tensors in `(batch, height, width, channels)` order.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub const fn index(&self, b: usize, i: usize, j: usize, f: usize) -> usize {
        ((b * self.h + i) * self.w + j) * self.c + f
    }

    pub const fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    pub const fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Dense NHWC tensor with an optional gradient buffer of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
            grad: None,
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape4, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::of(v * std)
            })
            .collect();
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => {
                for (acc, d) in g.iter_mut().zip(delta) {
                    *acc += *d;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }

    #[inline]
    pub fn at(&self, b: usize, i: usize, j: usize, f: usize) -> T {
        self.data[self.shape.index(b, i, j, f)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, i: usize, j: usize, f: usize) -> &mut T {
        let idx = self.shape.index(b, i, j, f);
        &mut self.data[idx]
    }

    /// Fails with a numeric error when any value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::Numeric {
                context: context.to_string(),
                detail: format!("non-finite value {} at flat index {pos}", self.data[pos]),
            }),
        }
    }

    /// Copy of batch item `b` as a batch-of-one tensor.
    pub fn batch_item(&self, b: usize) -> Self {
        let per = self.shape.h * self.shape.w * self.shape.c;
        Self {
            shape: Shape4 { n: 1, ..self.shape },
            data: self.data[b * per..(b + 1) * per].to_vec(),
            grad: None,
        }
    }

    /// Stacks batch items along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let base = first.shape;
        let mut data = Vec::with_capacity(base.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.h, s.w, s.c) != (base.h, base.w, base.c) {
                return Err(Error::shape(format!("cannot stack {s} onto {base}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: Shape4 { n, ..base },
            data,
            grad: None,
        })
    }

    /// Element type conversion; drops the gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_data_length() {
        let err = Tensor4::<f64>::from_vec(Shape4::new(1, 2, 2, 1), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn row_major_nhwc_indexing() {
        let s = Shape4::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.index(1, 2, 3, 4), s.len() - 1);
    }

    #[test]
    fn finite_check_names_context() {
        let mut t = Tensor4::<f32>::zeros(Shape4::new(1, 1, 2, 1));
        assert!(t.check_finite("x").is_ok());
        t.data_mut()[1] = f32::NAN;
        match t.check_finite("conv1") {
            Err(Error::Numeric { context, .. }) => assert_eq!(context, "conv1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stack_and_split_are_inverse() {
        let mut rng = rand::rng();
        let a = Tensor4::<f64>::randn(Shape4::new(1, 2, 3, 2), 1.0, &mut rng);
        let b = Tensor4::<f64>::randn(Shape4::new(1, 2, 3, 2), 1.0, &mut rng);
        let s = Tensor4::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 2, 3, 2));
        assert_eq!(s.batch_item(0), a);
        assert_eq!(s.batch_item(1), b);
    }
}

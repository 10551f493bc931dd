//! Activation, concatenation, pooling and elementwise helpers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// Subgradient 0 at the kink.
pub fn relu_backward<T: Scalar>(x: &[T], upstream: &[T]) -> Vec<T> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// Concatenates along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::config("concat of an empty tensor list"))?
        .shape();
    for x in xs {
        let s = x.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::config(format!(
                "concat expects matching batch/spatial dims, got {first} and {s}"
            )));
        }
    }
    let total: usize = xs.iter().map(|x| x.shape().c).sum();
    let out_shape = first.with_channels(total);
    let mut out = Vec::with_capacity(out_shape.len());
    for p in 0..first.pixels() {
        for x in xs {
            let c = x.shape().c;
            out.extend_from_slice(&x.data()[p * c..(p + 1) * c]);
        }
    }
    Tensor4::from_vec(out_shape, out)
}

/// Splits a concatenated gradient back into per-input gradients.
pub fn concat_backward<T: Scalar>(channels: &[usize], upstream: &Tensor4<T>) -> Vec<Vec<T>> {
    let total = upstream.shape().c;
    let pixels = upstream.shape().pixels();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(c * pixels)).collect();
    for px in upstream.data().chunks_exact(total) {
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&px[off..off + c]);
            off += c;
        }
    }
    parts
}

/// Mean over the spatial axes, giving shape `(n, 1, 1, c)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let area = (s.h * s.w) as f64;
    let mut out = Vec::with_capacity(s.n * s.c);
    for b in 0..s.n {
        let mut acc = vec![0.0f64; s.c];
        let per = s.h * s.w * s.c;
        for px in x.data()[b * per..(b + 1) * per].chunks_exact(s.c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v.as_f64();
            }
        }
        out.extend(acc.into_iter().map(|a| T::of(a / area)));
    }
    Tensor4::from_vec(Shape4::new(s.n, 1, 1, s.c), out).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape4, upstream: &[T]) -> Vec<T> {
    let s = input_shape;
    let inv = T::of(1.0 / (s.h * s.w) as f64);
    let mut gx = Vec::with_capacity(s.len());
    for b in 0..s.n {
        let g = &upstream[b * s.c..(b + 1) * s.c];
        for _ in 0..s.h * s.w {
            gx.extend(g.iter().map(|&v| v * inv));
        }
    }
    gx
}

/// Softmax across channels at every pixel.
pub fn softmax_channels<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let c = x.shape().c;
    let mut out = x.data().to_vec();
    for px in out.chunks_exact_mut(c) {
        let m = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    Tensor4::from_vec(x.shape(), out).expect("same shape")
}

/// Gradient through softmax given its output `y`.
pub fn softmax_backward<T: Scalar>(y: &[T], upstream: &[T], channels: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for ((g, yp), up) in gx
        .chunks_exact_mut(channels)
        .zip(y.chunks_exact(channels))
        .zip(upstream.chunks_exact(channels))
    {
        let dot: T = yp.iter().zip(up).map(|(&a, &b)| a * b).sum();
        for f in 0..channels {
            g[f] = yp[f] * (up[f] - dot);
        }
    }
    gx
}

pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "cannot add {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor4::from_vec(a.shape(), data)
}

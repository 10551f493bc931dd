//! Dilated 2-D convolution, lowered to im2col + GEMM in row tiles.

use crate::error::{Error, Result};
use crate::params::{ConvKernel, KernelShape};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::{Shape4, Tensor4};

/// Upper bound on im2col scratch elements per tile.
const TILE_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape4,
    pub kernel: KernelShape,
    pub rate: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape4, kernel: KernelShape, rate: usize, zero_pad: bool) -> Result<Self> {
        if rate == 0 {
            return Err(Error::config("dilation rate must be at least 1"));
        }
        if input.c != kernel.cin {
            return Err(Error::config(format!(
                "convolution expects {} input channels, tensor {input} has {}",
                kernel.cin, input.c
            )));
        }
        if kernel.kh == 0 || kernel.kw == 0 || kernel.cout == 0 {
            return Err(Error::config(format!("degenerate kernel {kernel:?}")));
        }
        let span_h = rate * (kernel.kh - 1);
        let span_w = rate * (kernel.kw - 1);
        let (pad_h, pad_w) = if zero_pad {
            (span_h / 2, span_w / 2)
        } else {
            (0, 0)
        };
        let (out_h, out_w) = match (
            (input.h + 2 * pad_h).checked_sub(span_h),
            (input.w + 2 * pad_w).checked_sub(span_w),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => {
                return Err(Error::config(format!(
                    "input {input} too small for unpadded {}x{} kernel at rate {rate}",
                    kernel.kh, kernel.kw
                )))
            }
        };
        Ok(Self {
            input,
            kernel,
            rate,
            pad_h,
            pad_w,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> Shape4 {
        Shape4::new(self.input.n, self.out_h, self.out_w, self.kernel.cout)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel.kh == 1 && self.kernel.kw == 1
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_ELEMS / (self.out_w * self.kernel.patch_len()).max(1)).clamp(1, self.out_h)
    }

    /// Input row/col touched by kernel tap `k` for output position `o`.
    #[inline]
    fn source(o: usize, k: usize, rate: usize, pad: usize, limit: usize) -> Option<usize> {
        (o + k * rate).checked_sub(pad).filter(|&s| s < limit)
    }

    /// Fills `cols` (rows `i0..i1` of batch `b`) with the patch matrix.
    fn im2col<T: Scalar>(&self, x: &[T], b: usize, i0: usize, i1: usize, cols: &mut [T]) {
        let KernelShape { kh, kw, cin, .. } = self.kernel;
        let klen = self.kernel.patch_len();
        let s = self.input;
        for i in i0..i1 {
            for j in 0..self.out_w {
                let row = &mut cols[((i - i0) * self.out_w + j) * klen..][..klen];
                for ki in 0..kh {
                    let r = Self::source(i, ki, self.rate, self.pad_h, s.h);
                    for kj in 0..kw {
                        let dst = &mut row[(ki * kw + kj) * cin..][..cin];
                        match (r, Self::source(j, kj, self.rate, self.pad_w, s.w)) {
                            (Some(r), Some(c)) => {
                                dst.copy_from_slice(&x[s.index(b, r, c, 0)..][..cin]);
                            }
                            _ => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-gradient matrix back onto the input gradient.
    fn col2im<T: Scalar>(&self, cols: &[T], b: usize, i0: usize, i1: usize, gx: &mut [T]) {
        let KernelShape { kh, kw, cin, .. } = self.kernel;
        let klen = self.kernel.patch_len();
        let s = self.input;
        for i in i0..i1 {
            for j in 0..self.out_w {
                let row = &cols[((i - i0) * self.out_w + j) * klen..][..klen];
                for ki in 0..kh {
                    let Some(r) = Self::source(i, ki, self.rate, self.pad_h, s.h) else {
                        continue;
                    };
                    for kj in 0..kw {
                        let Some(c) = Self::source(j, kj, self.rate, self.pad_w, s.w) else {
                            continue;
                        };
                        let src = &row[(ki * kw + kj) * cin..][..cin];
                        let dst = &mut gx[s.index(b, r, c, 0)..][..cin];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Dilated convolution of an NHWC tensor.
///
/// With `zero_pad`, each side is padded by `rate * (k - 1) / 2` so the
/// spatial size is preserved for odd kernels. Rate 1 is a standard
/// convolution.
pub fn conv2d_dilated<T: Scalar>(
    x: &Tensor4<T>,
    k: &ConvKernel<T>,
    rate: usize,
    zero_pad: bool,
) -> Result<Tensor4<T>> {
    let geo = ConvGeometry::new(x.shape(), k.shape, rate, zero_pad)?;
    let out = conv_forward_raw(&geo, x.data(), &k.weights, k.bias.as_deref());
    let out = Tensor4::from_vec(geo.output_shape(), out)?;
    out.check_finite("conv2d_dilated")?;
    Ok(out)
}

pub(crate) fn conv_forward_raw<T: Scalar>(
    geo: &ConvGeometry,
    x: &[T],
    weights: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let out_shape = geo.output_shape();
    let cout = geo.kernel.cout;
    let klen = geo.kernel.patch_len();
    let mut out = vec![T::zero(); out_shape.len()];
    if geo.is_pointwise() && geo.pad_h == 0 && geo.pad_w == 0 {
        let rows = out_shape.pixels();
        gemm(rows, klen, cout, T::one(), x, Trans::No, weights, Trans::No, T::zero(), &mut out);
    } else {
        let tile = geo.rows_per_tile();
        let mut cols = vec![T::zero(); tile * geo.out_w * klen];
        for b in 0..out_shape.n {
            let mut i0 = 0;
            while i0 < geo.out_h {
                let i1 = (i0 + tile).min(geo.out_h);
                let p = (i1 - i0) * geo.out_w;
                geo.im2col(x, b, i0, i1, &mut cols);
                let start = out_shape.index(b, i0, 0, 0);
                gemm(
                    p,
                    klen,
                    cout,
                    T::one(),
                    &cols[..p * klen],
                    Trans::No,
                    weights,
                    Trans::No,
                    T::zero(),
                    &mut out[start..start + p * cout],
                );
                i0 = i1;
            }
        }
    }
    if let Some(bias) = bias {
        for px in out.chunks_exact_mut(cout) {
            for (v, b) in px.iter_mut().zip(bias) {
                *v += *b;
            }
        }
    }
    out
}

/// Accumulates kernel (and bias) gradients into the given buffers and
/// returns the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_raw<T: Scalar>(
    geo: &ConvGeometry,
    x: &[T],
    weights: &[T],
    upstream: &[T],
    grad_weights: &mut [T],
    grad_bias: Option<&mut [T]>,
    want_input: bool,
) -> Option<Vec<T>> {
    let out_shape = geo.output_shape();
    let cout = geo.kernel.cout;
    let klen = geo.kernel.patch_len();
    if let Some(gb) = grad_bias {
        for px in upstream.chunks_exact(cout) {
            for (g, u) in gb.iter_mut().zip(px) {
                *g += *u;
            }
        }
    }
    if geo.is_pointwise() && geo.pad_h == 0 && geo.pad_w == 0 {
        let rows = out_shape.pixels();
        gemm(klen, rows, cout, T::one(), x, Trans::Yes, upstream, Trans::No, T::one(), grad_weights);
        return want_input.then(|| {
            let mut gx = vec![T::zero(); geo.input.len()];
            gemm(rows, cout, klen, T::one(), upstream, Trans::No, weights, Trans::Yes, T::zero(), &mut gx);
            gx
        });
    }
    let tile = geo.rows_per_tile();
    let mut cols = vec![T::zero(); tile * geo.out_w * klen];
    let mut gx = want_input.then(|| vec![T::zero(); geo.input.len()]);
    for b in 0..out_shape.n {
        let mut i0 = 0;
        while i0 < geo.out_h {
            let i1 = (i0 + tile).min(geo.out_h);
            let p = (i1 - i0) * geo.out_w;
            let start = out_shape.index(b, i0, 0, 0);
            let up = &upstream[start..start + p * cout];
            geo.im2col(x, b, i0, i1, &mut cols);
            gemm(klen, p, cout, T::one(), &cols[..p * klen], Trans::Yes, up, Trans::No, T::one(), grad_weights);
            if let Some(gx) = gx.as_mut() {
                gemm(p, cout, klen, T::one(), up, Trans::No, weights, Trans::Yes, T::zero(), &mut cols[..p * klen]);
                geo.col2im(&cols, b, i0, i1, gx);
            }
            i0 = i1;
        }
    }
    gx
}

/// Gradients of a convolution with respect to its input and kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Adjoint of [`conv2d_dilated`] for a given upstream gradient.
pub fn conv2d_dilated_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &ConvKernel<T>,
    rate: usize,
    zero_pad: bool,
    upstream: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let geo = ConvGeometry::new(x.shape(), k.shape, rate, zero_pad)?;
    if upstream.shape() != geo.output_shape() {
        return Err(Error::config(format!(
            "upstream gradient {} does not match convolution output {}",
            upstream.shape(),
            geo.output_shape()
        )));
    }
    let mut gw = vec![T::zero(); k.shape.len()];
    let mut gb = k.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
    let gx = conv_backward_raw(&geo, x.data(), &k.weights, upstream.data(), &mut gw, gb.as_deref_mut(), true)
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: Tensor4::from_vec(x.shape(), gx)?,
        weights: gw,
        bias: gb,
    })
}

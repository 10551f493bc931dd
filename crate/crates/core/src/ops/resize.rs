use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Interpolation taps for one axis: `(lo, hi, weight_of_hi)`.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (align-corners false), clamped
/// at the edges. Resizing to the same size is the identity.
pub fn bilinear_resize<T: Scalar>(x: &Tensor4<T>, target_h: usize, target_w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if target_h == 0 || target_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::shape(format!(
            "cannot resize {s} to {target_h}x{target_w}"
        )));
    }
    let rows = axis_taps(s.h, target_h);
    let cols = axis_taps(s.w, target_w);
    let out_shape = Shape4::new(s.n, target_h, target_w, s.c);
    let mut out = vec![T::zero(); out_shape.len()];
    let data = x.data();
    for b in 0..s.n {
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            let (wr0, wr1) = (T::of(1.0 - fr), T::of(fr));
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let (wc0, wc1) = (T::of(1.0 - fc), T::of(fc));
                let dst = &mut out[out_shape.index(b, i, j, 0)..][..s.c];
                let taps = [
                    (s.index(b, r0, c0, 0), wr0 * wc0),
                    (s.index(b, r0, c1, 0), wr0 * wc1),
                    (s.index(b, r1, c0, 0), wr1 * wc0),
                    (s.index(b, r1, c1, 0), wr1 * wc1),
                ];
                for (base, wgt) in taps {
                    if wgt == T::zero() {
                        continue;
                    }
                    for (d, v) in dst.iter_mut().zip(&data[base..base + s.c]) {
                        *d += wgt * *v;
                    }
                }
            }
        }
    }
    Tensor4::from_vec(out_shape, out)
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward<T: Scalar>(input_shape: Shape4, upstream: &Tensor4<T>) -> Vec<T> {
    let s = input_shape;
    let o = upstream.shape();
    let rows = axis_taps(s.h, o.h);
    let cols = axis_taps(s.w, o.w);
    let mut gx = vec![T::zero(); s.len()];
    let up = upstream.data();
    for b in 0..s.n {
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            let (wr0, wr1) = (T::of(1.0 - fr), T::of(fr));
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let (wc0, wc1) = (T::of(1.0 - fc), T::of(fc));
                let src = &up[o.index(b, i, j, 0)..][..s.c];
                let taps = [
                    (s.index(b, r0, c0, 0), wr0 * wc0),
                    (s.index(b, r0, c1, 0), wr0 * wc1),
                    (s.index(b, r1, c0, 0), wr1 * wc0),
                    (s.index(b, r1, c1, 0), wr1 * wc1),
                ];
                for (base, wgt) in taps {
                    if wgt == T::zero() {
                        continue;
                    }
                    for (d, v) in gx[base..base + s.c].iter_mut().zip(src) {
                        *d += wgt * *v;
                    }
                }
            }
        }
    }
    gx
}

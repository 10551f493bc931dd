use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Output spatial size of a 2x2, stride-2 pool in ceil mode.
pub const fn pooled_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// 2x2 max pooling with stride 2 and ceil-mode output size.
///
/// Odd trailing rows/columns form partial windows (equivalent to padding
/// with negative infinity). Returns the flat input index of each winning
/// element; ties go to the first element in row-major window order.
pub fn maxpool_2x2_ceil<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape(format!("cannot pool empty spatial dims {s}")));
    }
    if s.len() > u32::MAX as usize {
        return Err(Error::shape(format!("tensor {s} too large to pool")));
    }
    let (oh, ow) = pooled_dims(s.h, s.w);
    let out_shape = Shape4::new(s.n, oh, ow, s.c);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = x.data();
    for b in 0..s.n {
        for i in 0..oh {
            for j in 0..ow {
                for f in 0..s.c {
                    let mut best = s.index(b, 2 * i, 2 * j, f);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let (r, c) = (2 * i + di, 2 * j + dj);
                        if r < s.h && c < s.w {
                            let idx = s.index(b, r, c, f);
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(out_shape, out)?, argmax))
}

/// Routes each upstream gradient to its recorded argmax location.
pub fn maxpool_backward<T: Scalar>(input_shape: Shape4, argmax: &[u32], upstream: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_shape.len()];
    for (&idx, &g) in argmax.iter().zip(upstream) {
        gx[idx as usize] += g;
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_gives_constant_output() {
        let x = Tensor4::filled(Shape4::new(1, 5, 4, 3), 2.5f64);
        let (y, _) = maxpool_2x2_ceil(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 2, 3));
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn odd_edge_keeps_lone_element() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 3, 1), vec![-5.0f64, -7.0, -3.0]).unwrap();
        let (y, idx) = maxpool_2x2_ceil(&x).unwrap();
        assert_eq!(y.data(), &[-5.0, -3.0]);
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn full_size_pooling_chain() {
        assert_eq!(pooled_dims(442, 440), (221, 220));
        assert_eq!(pooled_dims(221, 220), (111, 110));
        assert_eq!(pooled_dims(111, 110), (56, 55));
    }

    #[test]
    fn shape_law_exhaustive_up_to_16() {
        for h in 1..=16 {
            for w in 1..=16 {
                let x = Tensor4::<f32>::zeros(Shape4::new(1, h, w, 1));
                let (y, _) = maxpool_2x2_ceil(&x).unwrap();
                assert_eq!((y.shape().h, y.shape().w), (h.div_ceil(2), w.div_ceil(2)));
            }
        }
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor4::from_vec(Shape4::new(1, 2, 2, 1), vec![1.0f64, 4.0, 3.0, 2.0]).unwrap();
        let (_, idx) = maxpool_2x2_ceil(&x).unwrap();
        let gx = maxpool_backward(x.shape(), &idx, &[7.0]);
        assert_eq!(gx, vec![0.0, 7.0, 0.0, 0.0]);
    }
}

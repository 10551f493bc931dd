use crate::error::{Error, Result};
use crate::params::{BatchNormState, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    /// Normalised input before the affine transform.
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (training mode only, empty otherwise).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Normalises without touching the running statistics.
pub fn batchnorm_normalise<T: Scalar>(
    x: &Tensor4<T>,
    s: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let shape = x.shape();
    let c = shape.c;
    if c != s.channels() {
        return Err(Error::config(format!(
            "batch norm over {} channels applied to {shape}",
            s.channels()
        )));
    }
    let count = shape.pixels();
    if count == 0 {
        return Err(Error::shape(format!("batch norm over empty tensor {shape}")));
    }
    let (mean, var, batch_mean, batch_var) = match mode {
        Mode::Training => {
            let mut sum = vec![0.0f64; c];
            for px in x.data().chunks_exact(c) {
                for (acc, v) in sum.iter_mut().zip(px) {
                    *acc += v.as_f64();
                }
            }
            let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
            let mut sq = vec![0.0f64; c];
            for px in x.data().chunks_exact(c) {
                for ((acc, v), m) in sq.iter_mut().zip(px).zip(&mean) {
                    let d = v.as_f64() - m;
                    *acc += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|v| v / count as f64).collect();
            let bm = mean.iter().map(|&v| T::of(v)).collect();
            let bv = var.iter().map(|&v| T::of(v)).collect();
            (mean, var, bm, bv)
        }
        Mode::Inference => (
            s.running_mean.iter().map(|v| v.as_f64()).collect(),
            s.running_var.iter().map(|v| v.as_f64()).collect(),
            Vec::new(),
            Vec::new(),
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + s.epsilon).sqrt())).collect();
    let mean: Vec<T> = mean.into_iter().map(T::of).collect();
    let mut xhat = x.data().to_vec();
    let mut out = vec![T::zero(); shape.len()];
    for (xh, o) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
        for f in 0..c {
            let v = (xh[f] - mean[f]) * inv_std[f];
            xh[f] = v;
            o[f] = s.gamma[f] * v + s.beta[f];
        }
    }
    let out = Tensor4::from_vec(shape, out)?;
    out.check_finite("batchnorm")?;
    Ok((
        out,
        BatchNormCache {
            mode,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

/// Batch normalisation; in training mode the running statistics are updated.
pub fn batchnorm<T: Scalar>(
    x: &Tensor4<T>,
    s: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let (y, cache) = batchnorm_normalise(x, s, mode)?;
    if mode == Mode::Training {
        s.update_running(&cache.batch_mean, &cache.batch_var);
    }
    Ok((y, cache))
}

/// Returns the input gradient and accumulates into the gamma/beta gradients.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    upstream: &[T],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) -> Vec<T> {
    let c = gamma.len();
    let count = upstream.len() / c;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (dy, xh) in upstream.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for f in 0..c {
            sum_dy[f] += dy[f].as_f64();
            sum_dy_xhat[f] += (dy[f] * xh[f]).as_f64();
        }
    }
    for f in 0..c {
        grad_gamma[f] += T::of(sum_dy_xhat[f]);
        grad_beta[f] += T::of(sum_dy[f]);
    }
    let mut gx = vec![T::zero(); upstream.len()];
    match cache.mode {
        Mode::Training => {
            let n = count as f64;
            let scale: Vec<T> = (0..c).map(|f| gamma[f] * cache.inv_std[f]).collect();
            let mean_dy: Vec<T> = sum_dy.iter().map(|v| T::of(v / n)).collect();
            let mean_dy_xhat: Vec<T> = sum_dy_xhat.iter().map(|v| T::of(v / n)).collect();
            for ((g, dy), xh) in gx
                .chunks_exact_mut(c)
                .zip(upstream.chunks_exact(c))
                .zip(cache.xhat.chunks_exact(c))
            {
                for f in 0..c {
                    g[f] = scale[f] * (dy[f] - mean_dy[f] - xh[f] * mean_dy_xhat[f]);
                }
            }
        }
        Mode::Inference => {
            for (g, dy) in gx.chunks_exact_mut(c).zip(upstream.chunks_exact(c)) {
                for f in 0..c {
                    g[f] = dy[f] * gamma[f] * cache.inv_std[f];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn standardised(shape: Shape4, seed: u64) -> Tensor4<f64> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor4::<f64>::randn(shape, 3.0, &mut rng);
        let c = shape.c;
        let n = shape.pixels() as f64;
        for f in 0..c {
            let vals: Vec<f64> = x.data().iter().skip(f).step_by(c).copied().collect();
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
            for (idx, val) in x.data_mut().iter_mut().enumerate() {
                if idx % c == f {
                    *val = (*val - m) / v.sqrt();
                }
            }
        }
        x
    }

    #[test]
    fn standardised_input_is_a_fixed_point() {
        let x = standardised(Shape4::new(2, 4, 5, 3), 1);
        let mut s = BatchNormState::new(3);
        let (y, _) = batchnorm(&x, &mut s, Mode::Training).unwrap();
        // Only epsilon perturbs the output: y = x / sqrt(1 + eps).
        let shrink = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * shrink).abs() < 1e-9);
            assert!((a - b).abs() <= 0.5e-5 * b.abs() + 1e-9);
        }
    }

    #[test]
    fn training_output_is_zero_mean_unit_variance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = Tensor4::<f64>::randn(Shape4::new(2, 6, 6, 4), 2.0, &mut rng);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v += (i % 4) as f64 * 10.0;
        }
        let mut s = BatchNormState::new(4);
        let (y, _) = batchnorm(&x, &mut s, Mode::Training).unwrap();
        for f in 0..4 {
            let vals: Vec<f64> = y.data().iter().skip(f).step_by(4).copied().collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_channel_does_not_divide_by_zero() {
        let x = Tensor4::filled(Shape4::new(1, 3, 3, 1), 4.0f64);
        let mut s = BatchNormState::new(1);
        let (y, _) = batchnorm(&x, &mut s, Mode::Training).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_ignores_batch_statistics() {
        let mut s = BatchNormState::<f64>::new(1);
        s.running_mean[0] = 1.0;
        s.running_var[0] = 4.0;
        let before = s.clone();
        let x = Tensor4::from_vec(Shape4::new(1, 1, 2, 1), vec![3.0, 5.0]).unwrap();
        let (y, _) = batchnorm(&x, &mut s, Mode::Inference).unwrap();
        let k = 1.0 / (4.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - 2.0 * k).abs() < 1e-12);
        assert!((y.data()[1] - 4.0 * k).abs() < 1e-12);
        assert_eq!(s, before);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 2, 3));
        let mut s = BatchNormState::new(2);
        assert!(matches!(
            batchnorm(&x, &mut s, Mode::Training).unwrap_err(),
            Error::Config(_)
        ));
    }
}

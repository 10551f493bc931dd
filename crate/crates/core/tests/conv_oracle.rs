//! Dilated convolution against straightforward nested-loop references.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waferseg_core::ops::{conv2d_dilated, conv2d_dilated_backward};
use waferseg_core::{ConvKernel, KernelShape, Shape4, Tensor4};

struct Reference {
    out: Vec<f64>,
    /// Sum of absolute products per output, the scale of its rounding error.
    magnitude: Vec<f64>,
    shape: Shape4,
}

/// `out[b,i,j,g] = bias[g] + sum x[b, i + (u - kh/2) r, j + (v - kw/2) r, f] * w[u,v,f,g]`
/// with taps outside the input skipped (zero padding).
fn naive_forward(x: &Tensor4<f64>, k: &ConvKernel<f64>, rate: usize) -> Reference {
    let s = x.shape();
    let ks = k.shape;
    let shape = Shape4::new(s.n, s.h, s.w, ks.cout);
    let mut out = vec![0.0; shape.len()];
    let mut magnitude = vec![0.0; shape.len()];
    let (ch, cw) = ((ks.kh / 2) as i64, (ks.kw / 2) as i64);
    for b in 0..s.n {
        for i in 0..s.h {
            for j in 0..s.w {
                for g in 0..ks.cout {
                    let mut acc = k.bias.as_ref().map_or(0.0, |bias| bias[g]);
                    let mut mag = acc.abs();
                    for u in 0..ks.kh {
                        for v in 0..ks.kw {
                            let si = i as i64 + (u as i64 - ch) * rate as i64;
                            let sj = j as i64 + (v as i64 - cw) * rate as i64;
                            if si < 0 || sj < 0 || si >= s.h as i64 || sj >= s.w as i64 {
                                continue;
                            }
                            for f in 0..ks.cin {
                                let w = k.weights[((u * ks.kw + v) * ks.cin + f) * ks.cout + g];
                                let p = x.at(b, si as usize, sj as usize, f) * w;
                                acc += p;
                                mag += p.abs();
                            }
                        }
                    }
                    let idx = shape.index(b, i, j, g);
                    out[idx] = acc;
                    magnitude[idx] = mag;
                }
            }
        }
    }
    Reference { out, magnitude, shape }
}

/// Adjoint of [`naive_forward`]: scatters each upstream value back along
/// the taps that produced it.
fn naive_backward(x: &Tensor4<f64>, k: &ConvKernel<f64>, rate: usize, up: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let ks = k.shape;
    let out_shape = Shape4::new(s.n, s.h, s.w, ks.cout);
    let mut gx = vec![0.0; s.len()];
    let mut gw = vec![0.0; ks.len()];
    let mut gb = vec![0.0; ks.cout];
    let (ch, cw) = ((ks.kh / 2) as i64, (ks.kw / 2) as i64);
    for b in 0..s.n {
        for i in 0..s.h {
            for j in 0..s.w {
                for g in 0..ks.cout {
                    let dy = up[out_shape.index(b, i, j, g)];
                    gb[g] += dy;
                    for u in 0..ks.kh {
                        for v in 0..ks.kw {
                            let si = i as i64 + (u as i64 - ch) * rate as i64;
                            let sj = j as i64 + (v as i64 - cw) * rate as i64;
                            if si < 0 || sj < 0 || si >= s.h as i64 || sj >= s.w as i64 {
                                continue;
                            }
                            for f in 0..ks.cin {
                                let wi = ((u * ks.kw + v) * ks.cin + f) * ks.cout + g;
                                let xi = s.index(b, si as usize, sj as usize, f);
                                gx[xi] += k.weights[wi] * dy;
                                gw[wi] += x.data()[xi] * dy;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn random_case(rng: &mut ChaCha8Rng) -> (Tensor4<f64>, ConvKernel<f64>) {
    let n = rng.random_range(1..=2);
    let h = rng.random_range(1..=14);
    let w = rng.random_range(1..=14);
    let cin = rng.random_range(1..=4);
    let cout = rng.random_range(1..=4);
    let side = if rng.random_bool(0.85) { 3 } else { 1 };
    let x = Tensor4::randn(Shape4::new(n, h, w, cin), 1.0, rng);
    let mut k = ConvKernel::he_normal(KernelShape::new(side, side, cin, cout), rng.random_bool(0.5), rng);
    if let Some(b) = k.bias.as_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    (x, k)
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

#[test]
fn fifty_random_cases_per_rate_match_the_reference() {
    for rate in [1, 2, 6, 12] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + rate as u64);
        let mut worst = 0.0f64;
        for case in 0..50 {
            let (x, k) = random_case(&mut rng);
            let got = conv2d_dilated(&x, &k, rate, true).unwrap();
            let want = naive_forward(&x, &k, rate);
            assert_eq!(got.shape(), want.shape);
            for ((a, b), m) in got.data().iter().zip(&want.out).zip(&want.magnitude) {
                let e = rel_err(*a, *b, *m);
                worst = worst.max(e);
                assert!(e <= 1e-12, "rate {rate} case {case}: {a} vs {b}");
            }
        }
        println!("rate {rate}: worst relative error {worst:.2e}");
    }
}

#[test]
fn reference_example_seven_by_seven_rate_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor4::randn(Shape4::new(1, 7, 7, 2), 1.0, &mut rng);
    let k = ConvKernel::he_normal(KernelShape::new(3, 3, 2, 3), false, &mut rng);
    let got = conv2d_dilated(&x, &k, 2, true).unwrap();
    let want = naive_forward(&x, &k, 2);
    for ((a, b), m) in got.data().iter().zip(&want.out).zip(&want.magnitude) {
        assert!(rel_err(*a, *b, *m) <= 1e-12);
    }
}

#[test]
fn backward_matches_the_reference_adjoint() {
    for rate in [1, 2, 6, 12] {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + rate as u64);
        for _ in 0..20 {
            let (x, k) = random_case(&mut rng);
            let out_shape = x.shape().with_channels(k.shape.cout);
            let up: Vec<f64> = (0..out_shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up_t = Tensor4::from_vec(out_shape, up.clone()).unwrap();
            let grads = conv2d_dilated_backward(&x, &k, rate, true, &up_t).unwrap();
            let (gx, gw, gb) = naive_backward(&x, &k, rate, &up);
            let close = |a: &[f64], b: &[f64]| {
                let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * scale)
            };
            assert!(close(grads.input.data(), &gx), "rate {rate} input grad");
            assert!(close(&grads.weights, &gw), "rate {rate} weight grad");
            if let Some(b) = &grads.bias {
                assert!(close(b, &gb), "rate {rate} bias grad");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Integer-valued operands make every partial sum exact, so any
    /// summation order must agree bit for bit.
    #[test]
    fn rate_one_is_exactly_standard_convolution(
        seed in any::<u64>(),
        h in 1usize..10,
        w in 1usize..10,
        cin in 1usize..4,
        cout in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor4::from_vec(
            Shape4::new(1, h, w, cin),
            (0..h * w * cin).map(|_| rng.random_range(-8i32..=8) as f64).collect(),
        ).unwrap();
        let ks = KernelShape::new(3, 3, cin, cout);
        let weights = (0..ks.len()).map(|_| rng.random_range(-4i32..=4) as f64).collect();
        let k = ConvKernel::from_weights(ks, weights, None).unwrap();
        let got = conv2d_dilated(&x, &k, 1, true).unwrap();
        prop_assert_eq!(got.data(), &naive_forward(&x, &k, 1).out[..]);
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>(), rate in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, k) = random_case(&mut rng);
        let a = conv2d_dilated(&x, &k, rate, true).unwrap();
        let b = conv2d_dilated(&x, &k, rate, true).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let ga = conv2d_dilated_backward(&x, &k, rate, true, &a).unwrap();
        let gb = conv2d_dilated_backward(&x, &k, rate, true, &b).unwrap();
        prop_assert_eq!(ga.input.data(), gb.input.data());
        prop_assert_eq!(ga.weights, gb.weights);
    }
}

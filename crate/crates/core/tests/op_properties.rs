use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waferseg_core::nn::{AsppModule, DenseBlock};
use waferseg_core::ops::{
    batchnorm, bilinear_resize, concat_channels, global_avg_pool, maxpool_2x2_ceil, relu, softmax_channels,
};
use waferseg_core::{BatchNormState, Mode, Registry, Shape4, Tape, Tensor4};

fn random(seed: u64, shape: Shape4, std: f64) -> Tensor4<f64> {
    Tensor4::randn(shape, std, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn resize_up_then_average_keeps_the_mean() {
    for seed in 0..10 {
        let x = random(seed, Shape4::new(1, 2, 2, 3), 1.0);
        let up = bilinear_resize(&x, 4, 4).unwrap();
        let a = global_avg_pool(&up);
        let b = global_avg_pool(&x);
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}

#[test]
fn average_of_constant_map() {
    let x = Tensor4::filled(Shape4::new(2, 5, 3, 4), 2.5f64);
    let g = global_avg_pool(&x);
    assert_eq!(g.shape(), Shape4::new(2, 1, 1, 4));
    assert!(g.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
}

#[test]
fn aspp_pooling_branch_is_uniform_on_constant_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut reg = Registry::<f64>::new();
    let m = AsppModule::build(&mut reg, &mut rng, "aspp", 3, &[1, 2], 4).unwrap();
    let mut x = Tensor4::zeros(Shape4::new(1, 6, 5, 3));
    for i in 0..6 {
        for j in 0..5 {
            for c in 0..3 {
                *x.at_mut(0, i, j, c) = c as f64 - 0.7;
            }
        }
    }
    let mut tape = Tape::without_grad();
    let v = tape.leaf(x, false);
    let out = m.forward(&mut tape, &reg, v, Mode::Inference).unwrap();
    let y = tape.value(out);
    assert_eq!(y.shape().c, 3 + 3 * 4);
    for c in 11..15 {
        let first = y.at(0, 0, 0, c);
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(y.at(0, i, j, c), first);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(seed in any::<u64>(), c in 1usize..6, scale in 0.1f64..50.0) {
        let y = softmax_channels(&random(seed, Shape4::new(2, 3, 4, c), scale));
        for p in y.data().chunks_exact(c) {
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn maxpool_output_dims_and_values(seed in any::<u64>(), h in 1usize..=16, w in 1usize..=16) {
        let x = random(seed, Shape4::new(1, h, w, 2), 1.0);
        let (y, arg) = maxpool_2x2_ceil(&x).unwrap();
        prop_assert_eq!((y.shape().h, y.shape().w), (h.div_ceil(2), w.div_ceil(2)));
        for (k, &a) in arg.iter().enumerate() {
            prop_assert_eq!(y.data()[k], x.data()[a as usize]);
        }
    }

    #[test]
    fn relu_clamps_negatives(seed in any::<u64>()) {
        let x = random(seed, Shape4::new(1, 4, 4, 3), 1.0);
        let y = relu(&x);
        for (a, b) in x.data().iter().zip(y.data()) {
            prop_assert_eq!(*b, a.max(0.0));
        }
    }

    #[test]
    fn concat_keeps_input_order(seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4) {
        let a = random(seed, Shape4::new(1, 3, 2, c1), 1.0);
        let b = random(seed ^ 1, Shape4::new(1, 3, 2, c2), 1.0);
        let y = concat_channels(&[&a, &b]).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for c in 0..c1 {
                    prop_assert_eq!(y.at(0, i, j, c), a.at(0, i, j, c));
                }
                for c in 0..c2 {
                    prop_assert_eq!(y.at(0, i, j, c1 + c), b.at(0, i, j, c));
                }
            }
        }
    }

    /// Normalised variance is exactly s2 / (s2 + eps) for batch variance s2,
    /// which is within 1e-4 of one once s2 >= 0.1.
    #[test]
    fn training_normalisation_statistics(seed in any::<u64>(), shift in -50.0f64..50.0, std in 0.01f64..20.0) {
        let x = random(seed, Shape4::new(2, 4, 3, 2), std);
        let data = x.data().iter().map(|v| v + shift).collect();
        let x = Tensor4::from_vec(x.shape(), data).unwrap();
        let mut s = BatchNormState::<f64>::new(2);
        let (y, _) = batchnorm(&x, &mut s, Mode::Training).unwrap();
        let moments = |t: &Tensor4<f64>, c: usize| {
            let vals: Vec<f64> = t.data().iter().skip(c).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var)
        };
        for c in 0..2 {
            let (_, raw_var) = moments(&x, c);
            let (mean, var) = moments(&y, c);
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - raw_var / (raw_var + s.epsilon)).abs() <= 1e-9);
            if raw_var >= 0.1 {
                prop_assert!((var - 1.0).abs() <= 1e-4, "variance {var}");
            }
        }
        prop_assert!(s.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dense_block_channel_arithmetic(
        cin in 1usize..6,
        kernels in proptest::collection::vec(1usize..5, 1..4),
        keep in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reg = Registry::<f64>::new();
        let block = DenseBlock::build(&mut reg, &mut rng, "b", cin, &kernels, keep).unwrap();
        let total: usize = kernels.iter().sum();
        let want = if keep { cin + total } else { total };
        prop_assert_eq!(block.out_channels(), want);
        for (l, layer) in block.layers.iter().enumerate() {
            prop_assert_eq!(layer.in_channels, cin + kernels[..l].iter().sum::<usize>());
        }
        let mut tape = Tape::without_grad();
        let v = tape.leaf(random(1, Shape4::new(1, 5, 4, cin), 1.0), false);
        let y = block.forward(&mut tape, &reg, v, Mode::Inference).unwrap();
        prop_assert_eq!(tape.shape(y), Shape4::new(1, 5, 4, want));
    }

    #[test]
    fn aspp_channel_arithmetic(cin in 1usize..5, rates in proptest::collection::vec(1usize..8, 0..5), width in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reg = Registry::<f64>::new();
        let m = AsppModule::build(&mut reg, &mut rng, "a", cin, &rates, width).unwrap();
        prop_assert_eq!(m.out_channels(), cin + (rates.len() + 1) * width);
        let mut tape = Tape::without_grad();
        let v = tape.leaf(random(2, Shape4::new(2, 6, 7, cin), 1.0), false);
        let y = m.forward(&mut tape, &reg, v, Mode::Inference).unwrap();
        prop_assert_eq!(tape.shape(y), Shape4::new(2, 6, 7, m.out_channels()));
    }

    #[test]
    fn resize_maps_constants_to_constants(v in -100.0f64..100.0, h in 1usize..8, w in 1usize..8, th in 1usize..12, tw in 1usize..12) {
        let y = bilinear_resize(&Tensor4::filled(Shape4::new(1, h, w, 2), v), th, tw).unwrap();
        prop_assert!(y.data().iter().all(|&x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)));
    }
}

mod common;

use common::oracles::{bilinear, conv2d, random_tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rma_core::ops::{conv2d_forward, Conv2dSpec};
use rma_core::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conv_matches_direct_summation(
        seed in any::<u64>(),
        cin in 1usize..4,
        cout in 1usize..4,
        k in 1usize..5,
        stride in 1usize..4,
        pad in 0usize..3,
        h in 4usize..10,
        w in 4usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[2, cin, h, w], 1.0);
        let wt = random_tensor(&mut rng, &[cout, cin, k, k], 1.0);
        let b = random_tensor(&mut rng, &[cout], 1.0);
        let got = conv2d_forward(&x, &wt, Some(&b), Conv2dSpec::new(stride, pad)).unwrap();
        let want = conv2d(&x, &wt, Some(&b), stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn depthwise_conv_is_per_channel(seed in any::<u64>(), c in 1usize..5, k in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[1, c, 6, 7], 1.0);
        let wt = random_tensor(&mut rng, &[c, 1, k, k], 1.0);
        let got = conv2d_forward(&x, &wt, None, Conv2dSpec::depthwise(c, k / 2)).unwrap();
        for ch in 0..c {
            let xc = Tensor::new(&[1, 1, 6, 7], x.data()[ch * 42..][..42].to_vec()).unwrap();
            let wc = Tensor::new(&[1, 1, k, k], wt.data()[ch * k * k..][..k * k].to_vec()).unwrap();
            let want = conv2d(&xc, &wc, None, 1, k / 2);
            for (a, b) in got.data()[ch * 42..][..42].iter().zip(want.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn upsample_matches_half_pixel_interpolation(
        seed in any::<u64>(),
        h in 1usize..6,
        w in 1usize..6,
        oh in 1usize..13,
        ow in 1usize..13,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[1, 2, h, w], 1.0);
        let tape = Tape::inference();
        let got = tape.upsample_bilinear(&tape.constant(x.clone()), oh, ow).unwrap();
        prop_assert!(got.value().max_abs_diff(&bilinear(&x, oh, ow)).unwrap() <= 1e-12);
    }

    #[test]
    fn linear_is_a_dot_product_per_row(seed in any::<u64>(), din in 1usize..6, dout in 1usize..6, rows in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[rows, din], 1.0);
        let wt = random_tensor(&mut rng, &[dout, din], 1.0);
        let b = random_tensor(&mut rng, &[dout], 1.0);
        let tape = Tape::inference();
        let y = tape
            .linear(&tape.constant(x.clone()), &tape.constant(wt.clone()), Some(&tape.constant(b.clone())))
            .unwrap();
        for r in 0..rows {
            for o in 0..dout {
                let dot: f64 = (0..din).map(|i| wt.data()[o * din + i] * x.data()[r * din + i]).sum();
                prop_assert!((y.value().data()[r * dout + o] - (dot + b.data()[o])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_output_has_zero_mean_unit_variance(seed in any::<u64>(), c in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[2, c, 3, 3], 5.0);
        let tape = Tape::inference();
        let y = tape
            .layer_norm_axis(
                &tape.constant(x),
                &tape.constant(Tensor::ones(&[c])),
                &tape.constant(Tensor::zeros(&[c])),
                1,
                1e-15,
            )
            .unwrap();
        let v = y.value().data();
        for n in 0..2 {
            for p in 0..9 {
                let col: Vec<f64> = (0..c).map(|ch| v[(n * c + ch) * 9 + p]).collect();
                let mean = col.iter().sum::<f64>() / c as f64;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((var - 1.0).abs() <= 1e-8);
            }
        }
    }
}

mod common;

use common::net_and_box;
use lipcert::model::{lower_conv, random_point, ZeroRule};
use lipcert::oracle::finite_difference_check;
use lipcert::{forward, jacobian_at, ConvSpec, Error};
use ndarray::{Array1, Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct sliding-window convolution with implicit zero padding.
fn convolve(spec: &ConvSpec, x: &Array3<f64>) -> Array3<f64> {
    let (out_ch, in_ch, kh, kw) = spec.kernel.dim();
    let (_, h, w) = spec.input_shape;
    let (ph, pw) = spec.padding;
    let (sh, sw) = spec.stride;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    Array3::from_shape_fn((out_ch, oh, ow), |(o, r, c)| {
        let mut acc = spec.bias[o];
        for i in 0..in_ch {
            for dy in 0..kh {
                for dx in 0..kw {
                    let y = (r * sh + dy) as isize - ph as isize;
                    let xx = (c * sw + dx) as isize - pw as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        acc += spec.kernel[[o, i, dy, dx]] * x[[i, y as usize, xx as usize]];
                    }
                }
            }
        }
        acc
    })
}

fn conv_spec() -> impl Strategy<Value = ConvSpec> {
    (1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3, 1usize..=2, 1usize..=2, 0usize..=2, 0usize..=1, any::<u64>())
        .prop_flat_map(|(out_ch, in_ch, kh, kw, sh, sw, ph, pw, seed)| {
            (kh.saturating_sub(2 * ph).max(1)..=6, kw.saturating_sub(2 * pw).max(1)..=6).prop_map(move |(h, w)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                ConvSpec {
                    kernel: Array4::from_shape_simple_fn((out_ch, in_ch, kh, kw), || rng.random_range(-1.0..1.0)),
                    bias: Array1::from_shape_simple_fn(out_ch, || rng.random_range(-1.0..1.0)),
                    stride: (sh, sw),
                    padding: (ph, pw),
                    input_shape: (in_ch, h, w),
                }
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lowered_conv_matches_sliding_window(spec in conv_spec(), seed: u64) {
        let dense = lower_conv(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let (c, h, w) = spec.input_shape;
            let x = Array3::from_shape_simple_fn((c, h, w), || rng.random_range(-1.0..1.0));
            let flat = Array1::from_iter(x.iter().copied());
            let expected = convolve(&spec, &x);
            let got = dense.apply(flat.view());
            prop_assert_eq!(got.len(), expected.len());
            for (a, b) in got.iter().zip(expected.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences((net, _domain) in net_and_box(12), seed: u64) {
        let x = random_point(net.input_dim(), seed);
        let (_, pre) = forward(&net, x.view()).unwrap();
        prop_assume!(pre.iter().flatten().all(|z| z.abs() > 1e-3));
        let gap = finite_difference_check(&net, &x, 1e-6).unwrap();
        prop_assert!(gap < 1e-4, "gap {gap}");
    }

    #[test]
    fn network_is_locally_linear((net, _domain) in net_and_box(12), seed: u64, dir_seed: u64) {
        let x = random_point(net.input_dim(), seed);
        let (fx, pre) = forward(&net, x.view()).unwrap();
        let margin = pre.iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()));
        prop_assume!(margin > 1e-6);
        let j = jacobian_at(&net, x.view(), ZeroRule::One).unwrap();
        // A step small enough that no pre-activation can change sign.
        let lip: f64 = net.layers().iter().map(|l| lipcert::model::inf_norm(&l.weight)).product::<f64>().max(1.0);
        let h = random_point(net.input_dim(), dir_seed) * (0.5 * margin.min(1.0) / lip);
        let (fxh, pre_h) = forward(&net, (&x + &h).view()).unwrap();
        for (a, b) in pre.iter().flatten().zip(pre_h.iter().flatten()) {
            prop_assert!(a.signum() == b.signum());
        }
        let predicted = &fx + &j.dot(&h);
        for (a, b) in fxh.iter().zip(predicted.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn finite_difference_refuses_kinks() {
    let net = lipcert::parse_network(
        r#"{"version":1,"input_shape":[1],"layers":[
            {"type":"dense","weight":[[1.0]],"bias":[-1.0]},{"type":"relu"},
            {"type":"dense","weight":[[2.0]],"bias":[0.0]}]}"#,
    )
    .unwrap();
    let err = finite_difference_check(&net, &ndarray::array![1.0], 1e-6).unwrap_err();
    assert!(matches!(err, Error::NearKink { layer: 0, neuron: 0, .. }));
}

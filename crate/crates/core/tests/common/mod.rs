#![allow(dead_code)]

use lipcert::model::{forward, random_mlp, Network};
use lipcert::BoxDomain;
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer sizes `[d, h.., K]` with 1 to 3 affine layers and widths up to `max_width`.
pub fn sizes(max_width: usize) -> impl Strategy<Value = Vec<usize>> {
    (1usize..=3).prop_flat_map(move |layers| prop::collection::vec(1..=max_width, layers + 1))
}

pub fn net_and_box(max_width: usize) -> impl Strategy<Value = (Network, BoxDomain)> {
    (sizes(max_width), any::<u64>(), 0.0f64..1.0).prop_map(|(sizes, seed, eps)| {
        let net = random_mlp(&sizes, seed).unwrap();
        let center = lipcert::model::random_point(sizes[0], seed ^ 0x5eed);
        let domain = BoxDomain::ball(center.view(), eps).unwrap();
        (net, domain)
    })
}

pub fn uniform_points(domain: &BoxDomain, n: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Array1::from_shape_fn(domain.dim(), |m| {
                let (lo, hi) = (domain.lo()[m], domain.hi()[m]);
                (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
            })
        })
        .collect()
}

/// Hidden pre-activations at `x`.
pub fn preacts(net: &Network, x: &Array1<f64>) -> Vec<Array1<f64>> {
    forward(net, x.view()).unwrap().1
}

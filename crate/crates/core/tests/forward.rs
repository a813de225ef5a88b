mod common;

use common::{net_and_box, preacts, uniform_points};
use lipcert::forward_bounds::{
    preactivation_bounds_with, BoundOptions, IntermediateMethod, LowerSlopePolicy,
};
use lipcert::{preactivation_bounds, BoxDomain};
use ndarray::Array1;
use proptest::prelude::*;

fn methods() -> impl Strategy<Value = BoundOptions> {
    (
        prop_oneof![Just(IntermediateMethod::Linear), Just(IntermediateMethod::Interval)],
        prop_oneof![
            Just(LowerSlopePolicy::Adaptive),
            Just(LowerSlopePolicy::Zero),
            Just(LowerSlopePolicy::One)
        ],
    )
        .prop_map(|(intermediate, lower_slope)| BoundOptions { intermediate, lower_slope })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn intervals_contain_sampled_preactivations((net, domain) in net_and_box(16), opts in methods(), seed: u64) {
        let iv = preactivation_bounds_with(&net, &domain, None, &opts).unwrap();
        for x in uniform_points(&domain, 100, seed) {
            for (z, b) in preacts(&net, &x).iter().zip(&iv) {
                for j in 0..z.len() {
                    prop_assert!(b.l[j] - 1e-9 <= z[j] && z[j] <= b.u[j] + 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_width_box_is_exact((net, domain) in net_and_box(16)) {
        let x = domain.center();
        let point = BoxDomain::ball(x.view(), 0.0).unwrap();
        let iv = preactivation_bounds(&net, &point, None).unwrap();
        for (z, b) in preacts(&net, &x).iter().zip(&iv) {
            for j in 0..z.len() {
                prop_assert!((b.l[j] - z[j]).abs() <= 1e-9 && (b.u[j] - z[j]).abs() <= 1e-9);
            }
        }
    }

    // Holds for fixed lower slopes. The adaptive slope can flip between
    // 0 and 1 as a neuron's interval shrinks, which is sound but not monotone.
    #[test]
    fn shrinking_the_box_never_loosens(
        (net, domain) in net_and_box(12),
        shrink in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 12),
        policy in prop_oneof![Just(LowerSlopePolicy::Zero), Just(LowerSlopePolicy::One)],
        intermediate in prop_oneof![Just(IntermediateMethod::Linear), Just(IntermediateMethod::Interval)],
    ) {
        let opts = BoundOptions { intermediate, lower_slope: policy };
        let (lo, hi) = (domain.lo(), domain.hi());
        let mut sub_lo = Array1::zeros(domain.dim());
        let mut sub_hi = Array1::zeros(domain.dim());
        for m in 0..domain.dim() {
            let (a, b) = shrink[m];
            let (a, b) = (a.min(b), a.max(b));
            sub_lo[m] = (lo[m] + a * (hi[m] - lo[m])).clamp(lo[m], hi[m]);
            sub_hi[m] = (lo[m] + b * (hi[m] - lo[m])).clamp(sub_lo[m], hi[m]);
        }
        let sub = BoxDomain::new(sub_lo, sub_hi).unwrap();
        let outer = preactivation_bounds_with(&net, &domain, None, &opts).unwrap();
        let inner = preactivation_bounds_with(&net, &sub, None, &opts).unwrap();
        for (o, i) in outer.iter().zip(&inner) {
            for j in 0..o.width() {
                let scale = 1.0 + o.l[j].abs().max(o.u[j].abs());
                prop_assert!(i.l[j] >= o.l[j] - 1e-12 * scale, "l {} < {}", i.l[j], o.l[j]);
                prop_assert!(i.u[j] <= o.u[j] + 1e-12 * scale, "u {} > {}", i.u[j], o.u[j]);
            }
        }
    }
}

//! Ground-truth checks that do not go through the bound propagation code.
//!
//! [`sample_lower_bound`] evaluates true Jacobians and gives a lower bound
//! on the local Lipschitz constant. [`enumerate_pattern_upper_bound`] gives
//! an upper bound by trying every sign assignment of the unstable neurons.
//! [`recurjac_reference`] is a scalar, loop-by-loop transcription of the
//! RecurJac recursion, kept separate from the interval mode it checks.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward_bounds::{preactivation_bounds, BoxDomain, LayerIntervals};
use crate::model::{forward, inf_norm, jacobian_at, pattern_jacobian, Network, ZeroRule};

/// Box corners are added to the samples up to this input dimension.
pub const MAX_CORNER_DIM: usize = 12;
/// Pattern enumeration refuses more unstable neurons than this.
pub const MAX_ENUM_UNSTABLE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub lower_bound: f64,
    pub argmax_x: Array1<f64>,
    /// Points evaluated, including corners and the center.
    pub samples: usize,
    pub seed: u64,
}

/// Max of `‖J(x)‖∞` over seeded uniform samples, the box corners (for small
/// `d`) and the center.
pub fn sample_lower_bound(net: &Network, domain: &BoxDomain, n_samples: usize, seed: u64) -> Result<SampleReport> {
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if domain.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "input domain",
            expected: net.input_dim(),
            got: domain.dim(),
        });
    }
    let d = domain.dim();
    let (lo, hi) = (domain.lo(), domain.hi());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Array1<f64>> = (0..n_samples)
        .map(|_| Array1::from_shape_fn(d, |m| lerp(lo[m], hi[m], rng.random::<f64>())))
        .collect();
    if d <= MAX_CORNER_DIM {
        for mask in 0..1u64 << d {
            points.push(Array1::from_shape_fn(d, |m| if mask >> m & 1 == 1 { hi[m] } else { lo[m] }));
        }
    }
    points.push(domain.center());

    let norms = points
        .par_iter()
        .map(|x| jacobian_at(net, x.view(), ZeroRule::One).map(|j| inf_norm(&j)))
        .collect::<Result<Vec<f64>>>()?;
    // First index attaining the max, so the result does not depend on scheduling.
    let best = norms
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > norms[b] { i } else { b });
    Ok(SampleReport {
        lower_bound: norms[best],
        argmax_x: points.swap_remove(best),
        samples: norms.len(),
        seed,
    })
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + t * (b - a)).clamp(a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEnumReport {
    pub upper_bound: f64,
    pub unstable: usize,
    pub patterns_total: u64,
    /// Patterns consistent with interval stability; every enumerated
    /// pattern is, since stable neurons are fixed by their sign.
    pub patterns_feasible: u64,
}

/// Max of the exact pattern Jacobian norm over all gate assignments of the
/// unstable neurons, stable neurons fixed by sign.
pub fn enumerate_pattern_upper_bound(net: &Network, domain: &BoxDomain) -> Result<PatternEnumReport> {
    let intervals = preactivation_bounds(net, domain, None)?;
    enumerate_patterns(net, &intervals)
}

/// Pattern enumeration over given pre-activation intervals.
pub fn enumerate_patterns(net: &Network, intervals: &[LayerIntervals]) -> Result<PatternEnumReport> {
    let mut base: Vec<Array1<f64>> = Vec::with_capacity(intervals.len());
    let mut free: Vec<(usize, usize)> = Vec::new();
    for (k, iv) in intervals.iter().enumerate() {
        base.push(Array1::from_shape_fn(iv.width(), |j| {
            if iv.l[j] > 0.0 {
                1.0
            } else if iv.u[j] < 0.0 {
                0.0
            } else {
                free.push((k, j));
                0.0
            }
        }));
    }
    if free.len() > MAX_ENUM_UNSTABLE {
        return Err(Error::TooManyUnstable {
            count: free.len(),
            limit: MAX_ENUM_UNSTABLE,
        });
    }
    let total = 1u64 << free.len();
    let upper_bound = (0..total)
        .into_par_iter()
        .map(|mask| {
            let mut gates = base.clone();
            for (bit, &(k, j)) in free.iter().enumerate() {
                gates[k][j] = (mask >> bit & 1) as f64;
            }
            inf_norm(&pattern_jacobian(net, &gates))
        })
        .reduce(|| 0.0, f64::max);
    Ok(PatternEnumReport {
        upper_bound,
        unstable: free.len(),
        patterns_total: total,
        patterns_feasible: total,
    })
}

/// Largest entrywise gap between central differences and [`jacobian_at`].
pub fn finite_difference_check(net: &Network, x: &Array1<f64>, step: f64) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config("step must be positive".into()));
    }
    let (_, pre) = forward(net, x.view())?;
    for (layer, z) in pre.iter().enumerate() {
        if let Some(neuron) = z.iter().position(|v| v.abs() <= 10.0 * step) {
            return Err(Error::NearKink {
                layer,
                neuron,
                value: z[neuron],
            });
        }
    }
    let exact = jacobian_at(net, x.view(), ZeroRule::One)?;
    let mut numeric = Array2::zeros(exact.dim());
    for m in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[m] += step;
        minus[m] -= step;
        let diff = (forward(net, plus.view())?.0 - forward(net, minus.view())?.0) / (2.0 * step);
        numeric.column_mut(m).assign(&diff);
    }
    Ok((numeric - exact).iter().fold(0.0, |a, v| a.max(v.abs())))
}

/// Gradient range of each hidden neuron from its pre-activation interval.
fn gate_ranges(intervals: &[LayerIntervals]) -> Vec<Vec<(f64, f64)>> {
    intervals
        .iter()
        .map(|iv| {
            iv.l.iter()
                .zip(&iv.u)
                .map(|(&l, &u)| {
                    if u < 0.0 {
                        (0.0, 0.0)
                    } else if l > 0.0 {
                        (1.0, 1.0)
                    } else {
                        (0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Upper bound of `v · J · δ` as `(coefficient on J, constant)`.
fn recurjac_upper_term(v: f64, l: f64, u: f64, (d_min, d_max): (f64, f64)) -> (f64, f64) {
    if l < 0.0 && u > 0.0 {
        (0.0, if v >= 0.0 { v * u * d_max } else { v * l * d_max })
    } else if l >= 0.0 {
        (if v >= 0.0 { v * d_max } else { v * d_min }, 0.0)
    } else {
        (if v >= 0.0 { v * d_min } else { v * d_max }, 0.0)
    }
}

/// Upper bound of `a · J_start` for one output row, where `J_start` is the
/// Jacobian at layer `start` (0-based, so `start = 0` is `J_1`), by pushing
/// `a` up through the recursion and evaluating at the last weight row.
fn recurjac_upper(
    net: &Network,
    gates: &[Vec<(f64, f64)>],
    jac: &[(Vec<f64>, Vec<f64>)],
    row: usize,
    start: usize,
    a0: Vec<f64>,
) -> f64 {
    let layers = net.layers();
    let n = layers.len();
    let mut a = a0;
    let mut constant = 0.0;
    for i in start..n - 1 {
        let w = &layers[i].weight;
        let (lo, hi) = &jac[i + 1];
        let mut next = vec![0.0; w.nrows()];
        for j in 0..w.nrows() {
            let v: f64 = (0..w.ncols()).map(|m| w[[j, m]] * a[m]).sum();
            let (c, t) = recurjac_upper_term(v, lo[j], hi[j], gates[i][j]);
            next[j] = c;
            constant += t;
        }
        a = next;
    }
    let top = layers[n - 1].weight.row(row);
    a.iter().zip(top.iter()).map(|(x, y)| x * y).sum::<f64>() + constant
}

/// Interval bounds on every `J_k` for one row: the second-last layer in
/// closed form, the rest by the recursion.
fn recurjac_jacobian(net: &Network, gates: &[Vec<(f64, f64)>], row: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let layers = net.layers();
    let n = layers.len();
    let top: Vec<f64> = layers[n - 1].weight.row(row).to_vec();
    let mut jac: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
    jac[n - 1] = (top.clone(), top.clone());
    if n < 2 {
        return jac;
    }

    // J_{n-1} = W_n Δ W_{n-1}; (W_n)_+ and (W_n)_- pick the gate extreme.
    let w = &layers[n - 2].weight;
    let g = &gates[n - 2];
    let a_lo: Vec<f64> = (0..w.nrows())
        .map(|j| top[j].max(0.0) * g[j].0 + top[j].min(0.0) * g[j].1)
        .collect();
    let a_hi: Vec<f64> = (0..w.nrows())
        .map(|j| top[j].max(0.0) * g[j].1 + top[j].min(0.0) * g[j].0)
        .collect();
    let mut lo = vec![0.0; w.ncols()];
    let mut hi = vec![0.0; w.ncols()];
    for m in 0..w.ncols() {
        for j in 0..w.nrows() {
            let (p, q) = (w[[j, m]].max(0.0), w[[j, m]].min(0.0));
            lo[m] += a_lo[j] * p + a_hi[j] * q;
            hi[m] += a_hi[j] * p + a_lo[j] * q;
        }
    }
    jac[n - 2] = (lo, hi);

    for k in (0..n - 2).rev() {
        let width = layers[k].in_dim();
        let mut lo = vec![0.0; width];
        let mut hi = vec![0.0; width];
        for m in 0..width {
            let mut e = vec![0.0; width];
            e[m] = 1.0;
            let up = recurjac_upper(net, gates, &jac, row, k, e.clone());
            e[m] = -1.0;
            let down = -recurjac_upper(net, gates, &jac, row, k, e);
            lo[m] = down.min(up);
            hi[m] = down.max(up);
        }
        jac[k] = (lo, hi);
    }
    jac
}

/// RecurJac local Lipschitz bound, transcribed independently of the
/// interval mode in [`crate::jacobian_bounds`].
pub fn recurjac_reference(net: &Network, domain: &BoxDomain) -> Result<f64> {
    let intervals = preactivation_bounds(net, domain, None)?;
    let gates = gate_ranges(&intervals);
    let mut best = 0.0f64;
    for row in 0..net.output_dim() {
        let jac = recurjac_jacobian(net, &gates, row);
        let (lo, hi) = &jac[0];
        // Upper line of Σ|J| over the box [lo, hi].
        let mut a = vec![0.0; lo.len()];
        let mut bias = 0.0;
        for m in 0..lo.len() {
            let (l, u) = (lo[m], hi[m]);
            if u - l < 1e-12 {
                bias += l.abs().max(u.abs());
            } else {
                a[m] = (u.abs() - l.abs()) / (u - l);
                bias += l.abs() - a[m] * l;
            }
        }
        let value = if net.hidden_count() == 0 {
            lo.iter().zip(hi).map(|(l, u)| l.abs().max(u.abs())).sum()
        } else {
            recurjac_upper(net, &gates, &jac, row, 0, a) + bias
        };
        best = best.max(value);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AffineLayer;
    use ndarray::array;

    fn layer(w: Array2<f64>, b: Array1<f64>) -> AffineLayer {
        AffineLayer::new(w, b).unwrap()
    }

    fn toy() -> Network {
        Network::new(vec![layer(array![[1.0]], array![0.0]), layer(array![[1.0]], array![0.0])]).unwrap()
    }

    #[test]
    fn linear_net_sampling_is_exact() {
        let net = Network::new(vec![
            layer(array![[1.0, 2.0], [0.5, -1.0]], array![5.0, 5.0]),
            layer(array![[1.0, -1.0]], array![0.0]),
        ])
        .unwrap();
        let b = BoxDomain::ball(array![0.0, 0.0].view(), 0.1).unwrap();
        let r = sample_lower_bound(&net, &b, 10, 0).unwrap();
        assert!((r.lower_bound - 3.5).abs() < 1e-12);
        assert!(b.contains(r.argmax_x.view()));
        assert_eq!(r.samples, 10 + 4 + 1);
    }

    #[test]
    fn zero_width_box_samples_the_center() {
        let net = crate::model::random_mlp(&[3, 5, 2], 4).unwrap();
        let x = array![0.2, -0.3, 0.4];
        let b = BoxDomain::ball(x.view(), 0.0).unwrap();
        let r = sample_lower_bound(&net, &b, 3, 1).unwrap();
        let j = jacobian_at(&net, x.view(), ZeroRule::One).unwrap();
        assert_eq!(r.lower_bound, inf_norm(&j));
        assert!(sample_lower_bound(&net, &b, 0, 1).is_err());
    }

    #[test]
    fn single_unstable_neuron_enumeration() {
        let b = BoxDomain::new(array![-1.0], array![1.0]).unwrap();
        let r = enumerate_pattern_upper_bound(&toy(), &b).unwrap();
        assert_eq!(r.patterns_total, 2);
        assert_eq!(r.unstable, 1);
        assert_eq!(r.upper_bound, 1.0);
    }

    #[test]
    fn inactive_neuron_does_not_add_patterns() {
        let net = Network::new(vec![
            layer(array![[1.0], [1.0]], array![0.0, -5.0]),
            layer(array![[1.0, 1.0]], array![0.0]),
        ])
        .unwrap();
        let b = BoxDomain::new(array![-1.0], array![1.0]).unwrap();
        let r = enumerate_pattern_upper_bound(&net, &b).unwrap();
        assert_eq!(r.patterns_total, 2);
        assert_eq!(r.upper_bound, 1.0);
    }

    #[test]
    fn stable_net_has_one_pattern() {
        let b = BoxDomain::new(array![1.0], array![2.0]).unwrap();
        let r = enumerate_pattern_upper_bound(&toy(), &b).unwrap();
        assert_eq!((r.patterns_total, r.unstable), (1, 0));
        assert_eq!(r.upper_bound, 1.0);
    }

    #[test]
    fn too_many_unstable_is_refused() {
        let w = Array2::from_elem((25, 1), 1.0);
        let net = Network::new(vec![layer(w, Array1::zeros(25)), layer(Array2::ones((1, 25)), array![0.0])]).unwrap();
        let b = BoxDomain::new(array![-1.0], array![1.0]).unwrap();
        assert!(matches!(
            enumerate_pattern_upper_bound(&net, &b),
            Err(Error::TooManyUnstable { count: 25, limit: 20 })
        ));
    }

    #[test]
    fn finite_differences() {
        let lin = Network::new(vec![layer(array![[1.0, -2.0], [3.0, 4.0]], array![0.0, 0.0])]).unwrap();
        assert!(finite_difference_check(&lin, &array![0.3, 0.7], 1e-6).unwrap() < 1e-8);

        let net = crate::model::random_mlp(&[4, 8, 8, 3], 11).unwrap();
        let x = crate::model::random_point(4, 5);
        match finite_difference_check(&net, &x, 1e-6) {
            Ok(gap) => assert!(gap < 1e-4),
            Err(Error::NearKink { .. }) => {}
            Err(e) => panic!("{e}"),
        }

        assert!(matches!(
            finite_difference_check(&toy(), &array![0.0], 1e-6),
            Err(Error::NearKink { layer: 0, neuron: 0, .. })
        ));
    }

    #[test]
    fn recurjac_two_layer_closed_form() {
        // 2x2 example evaluated by hand: both hidden neurons unstable on
        // the box, so the gate range is [0, 1] for each.
        let net = Network::new(vec![
            layer(array![[1.0, -1.0], [2.0, 1.0]], array![0.0, 0.0]),
            layer(array![[1.0, -2.0]], array![0.0]),
        ])
        .unwrap();
        let b = BoxDomain::ball(array![0.0, 0.0].view(), 1.0).unwrap();
        // J_1 column m lies in [Σ_j min(0, c_j W_jm), Σ_j max(0, c_j W_jm)]
        // with c = [1, -2]: column 0 terms {1, -4} → [-4, 1];
        // column 1 terms {-1, -2} → [-3, 0].
        // |J| relaxation: column 0 slope (1-4)/5 = -0.6, intercept 4 - 2.4 = 1.6;
        // column 1 is nonpositive: slope -1, intercept 0.
        // Upper of -0.6 J_0 - J_1: fold v = W_1^T a per hidden neuron j:
        // j=0: v = -0.6·1 + -1·-1 = 0.4, J_2 = 1 → constant line 0.4·[0,1] → 0.4
        // j=1: v = -0.6·2 + -1·1 = -2.2, J_2 = -2 → -2.2·(-2)·1 = 4.4
        // total 0.4 + 4.4 + 1.6 = 6.4.
        let r = recurjac_reference(&net, &b).unwrap();
        assert!((r - 6.4).abs() < 1e-12, "{r}");
    }

    #[test]
    fn recurjac_all_stable_is_exact() {
        let net = Network::new(vec![
            layer(array![[1.0, 2.0], [-1.0, 1.0]], array![10.0, 10.0]),
            layer(array![[1.0, 1.0], [2.0, -3.0]], array![10.0, 30.0]),
            layer(array![[1.0, -1.0]], array![0.0]),
        ])
        .unwrap();
        let b = BoxDomain::ball(array![0.0, 0.0].view(), 0.5).unwrap();
        let exact = inf_norm(&jacobian_at(&net, array![0.0, 0.0].view(), ZeroRule::One).unwrap());
        assert!((recurjac_reference(&net, &b).unwrap() - exact).abs() < 1e-12);
    }
}

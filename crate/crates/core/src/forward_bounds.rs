//! Pre-activation bounds by backward linear bound propagation on the
//! forward graph.
//!
//! For each hidden layer the pre-activation `z_i` is expressed as a linear
//! form over the previous layer's output, then pushed back one layer at a
//! time through the ReLU relaxations of the layers below it until it is a
//! linear function of the input, where it is concretized over the box.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::bab::SplitConstraints;
use crate::error::{Error, Result};
use crate::model::{relu, AffineLayer, Network};

/// Axis-aligned input region `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl BoxDomain {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidDomain("box has no dimensions".into()));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box bounds"));
        }
        if let Some(index) = lo.iter().zip(&hi).position(|(l, h)| l > h) {
            return Err(Error::InvertedInterval {
                index,
                lower: lo[index],
                upper: hi[index],
            });
        }
        Ok(Self { lo, hi })
    }

    /// The ℓ∞ ball `B∞(center, eps)`.
    pub fn ball(center: ArrayView1<'_, f64>, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "radius must be finite and non-negative, got {eps}"
            )));
        }
        Self::new(center.mapv(|c| c - eps), center.mapv(|c| c + eps))
    }

    pub fn lo(&self) -> &Array1<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &Array1<f64> {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Array1<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    /// Largest half-width over all dimensions.
    pub fn radius(&self) -> f64 {
        Zip::from(&self.lo)
            .and(&self.hi)
            .fold(0.0, |acc, l, h| f64::max(acc, 0.5 * (h - l)))
    }

    pub fn contains(&self, x: ArrayView1<'_, f64>) -> bool {
        x.len() == self.dim()
            && Zip::from(&x)
                .and(&self.lo)
                .and(&self.hi)
                .all(|v, l, h| *l <= *v && *v <= *h)
    }

    /// Same box with a single dimension widened to `[lo, hi]`.
    pub fn with_dimension(&self, dim: usize, lo: f64, hi: f64) -> Result<Self> {
        if dim >= self.dim() {
            return Err(Error::DimensionMismatch {
                context: "box dimension",
                expected: self.dim(),
                got: dim,
            });
        }
        let mut out = self.clone();
        out.lo[dim] = lo;
        out.hi[dim] = hi;
        Self::new(out.lo, out.hi)
    }
}

/// Which side of a bound is being propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upper,
    Lower,
}

/// Coefficients plus accumulated bias: `coeff · h + bias_acc`, one row per
/// quantity being bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub coeff: Array2<f64>,
    pub bias_acc: Array1<f64>,
}

impl LinearForm {
    pub fn new(coeff: Array2<f64>, bias_acc: Array1<f64>) -> Result<Self> {
        if coeff.nrows() != bias_acc.len() {
            return Err(Error::DimensionMismatch {
                context: "linear form bias",
                expected: coeff.nrows(),
                got: bias_acc.len(),
            });
        }
        Ok(Self { coeff, bias_acc })
    }

    /// Identity coefficients over `width` entries.
    pub fn identity(width: usize) -> Self {
        Self {
            coeff: Array2::eye(width),
            bias_acc: Array1::zeros(width),
        }
    }

    pub fn rows(&self) -> usize {
        self.coeff.nrows()
    }

    pub fn width(&self) -> usize {
        self.coeff.ncols()
    }
}

/// Per-neuron lines `lower_slope·z + lower_intercept <= σ(z) <= upper_slope·z + upper_intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluRelaxation {
    pub lower_slope: Array1<f64>,
    pub lower_intercept: Array1<f64>,
    pub upper_slope: Array1<f64>,
    pub upper_intercept: Array1<f64>,
}

/// Lower-line slope for unstable ReLU neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LowerSlopePolicy {
    /// 1 when `u >= -l`, else 0.
    #[default]
    Adaptive,
    Zero,
    One,
}

/// How intermediate pre-activation bounds are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntermediateMethod {
    /// Full backward linear propagation per layer.
    #[default]
    Linear,
    /// Plain interval arithmetic.
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundOptions {
    pub intermediate: IntermediateMethod,
    pub lower_slope: LowerSlopePolicy,
}

/// Pre-activation bounds `l <= z <= u` for one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIntervals {
    pub l: Array1<f64>,
    pub u: Array1<f64>,
}

impl LayerIntervals {
    pub fn new(l: Array1<f64>, u: Array1<f64>) -> Result<Self> {
        check_interval(&l, &u)?;
        Ok(Self { l, u })
    }

    pub fn width(&self) -> usize {
        self.l.len()
    }
}

pub(crate) fn check_interval(l: &Array1<f64>, u: &Array1<f64>) -> Result<()> {
    if l.len() != u.len() {
        return Err(Error::DimensionMismatch {
            context: "interval bounds",
            expected: l.len(),
            got: u.len(),
        });
    }
    if let Some(index) = l.iter().zip(u).position(|(a, b)| !(a <= b)) {
        return Err(Error::InvertedInterval {
            index,
            lower: l[index],
            upper: u[index],
        });
    }
    Ok(())
}

/// Linear relaxation of ReLU over `[l, u]`, per neuron.
pub fn relu_relaxation(
    l: &Array1<f64>,
    u: &Array1<f64>,
    policy: LowerSlopePolicy,
) -> Result<ReluRelaxation> {
    check_interval(l, u)?;
    let n = l.len();
    let mut out = ReluRelaxation {
        lower_slope: Array1::zeros(n),
        lower_intercept: Array1::zeros(n),
        upper_slope: Array1::zeros(n),
        upper_intercept: Array1::zeros(n),
    };
    for j in 0..n {
        let (lj, uj) = (l[j], u[j]);
        if lj == uj {
            // both lines are the constant σ(l); avoids 0/0 in the chord
            out.lower_intercept[j] = relu(lj);
            out.upper_intercept[j] = relu(lj);
        } else if lj >= 0.0 {
            out.lower_slope[j] = 1.0;
            out.upper_slope[j] = 1.0;
        } else if uj <= 0.0 {
            // both lines zero
        } else {
            let slope = uj / (uj - lj);
            out.upper_slope[j] = slope;
            out.upper_intercept[j] = -lj * slope;
            out.lower_slope[j] = match policy {
                LowerSlopePolicy::Adaptive if uj >= -lj => 1.0,
                LowerSlopePolicy::Adaptive | LowerSlopePolicy::Zero => 0.0,
                LowerSlopePolicy::One => 1.0,
            };
        }
    }
    Ok(out)
}

/// Linear bounds on `h_i` in terms of `h_{i-1}`: `P̲ h + q̲ <= h_i <= P̄ h + q̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRelaxation {
    pub lower_p: Array2<f64>,
    pub lower_q: Array1<f64>,
    pub upper_p: Array2<f64>,
    pub upper_q: Array1<f64>,
}

impl AffineRelaxation {
    /// A plain affine layer with no activation.
    pub fn affine(layer: &AffineLayer) -> Self {
        Self {
            lower_p: layer.weight.clone(),
            lower_q: layer.bias.clone(),
            upper_p: layer.weight.clone(),
            upper_q: layer.bias.clone(),
        }
    }

    /// `σ(W h + b)` relaxed with per-neuron lines.
    pub fn through_relu(layer: &AffineLayer, relax: &ReluRelaxation) -> Self {
        let scale = |s: &Array1<f64>| &layer.weight * &s.view().insert_axis(Axis(1));
        Self {
            lower_p: scale(&relax.lower_slope),
            lower_q: &relax.lower_slope * &layer.bias + &relax.lower_intercept,
            upper_p: scale(&relax.upper_slope),
            upper_q: &relax.upper_slope * &layer.bias + &relax.upper_intercept,
        }
    }
}

#[inline]
fn pos(v: f64) -> f64 {
    v.max(0.0)
}

#[inline]
fn neg(v: f64) -> f64 {
    v.min(0.0)
}

/// One step of backward substitution: `A h_i <= A' h_{i-1} + c`.
pub fn backward_substitute(
    form: &LinearForm,
    relax: &AffineRelaxation,
    direction: Direction,
) -> Result<LinearForm> {
    if form.width() != relax.upper_p.nrows() {
        return Err(Error::DimensionMismatch {
            context: "backward substitution",
            expected: relax.upper_p.nrows(),
            got: form.width(),
        });
    }
    let (for_pos_p, for_pos_q, for_neg_p, for_neg_q) = match direction {
        Direction::Upper => (&relax.upper_p, &relax.upper_q, &relax.lower_p, &relax.lower_q),
        Direction::Lower => (&relax.lower_p, &relax.lower_q, &relax.upper_p, &relax.upper_q),
    };
    let a_pos = form.coeff.mapv(pos);
    let a_neg = form.coeff.mapv(neg);
    let coeff = a_pos.dot(for_pos_p) + a_neg.dot(for_neg_p);
    let bias_acc = &form.bias_acc + &a_pos.dot(for_pos_q) + &a_neg.dot(for_neg_q);
    Ok(LinearForm { coeff, bias_acc })
}

/// Bounds `coeff · x + bias_acc` over the box.
pub fn concretize(form: &LinearForm, domain: &BoxDomain, direction: Direction) -> Result<Array1<f64>> {
    if form.width() != domain.dim() {
        return Err(Error::DimensionMismatch {
            context: "concretization",
            expected: domain.dim(),
            got: form.width(),
        });
    }
    let a_pos = form.coeff.mapv(pos);
    let a_neg = form.coeff.mapv(neg);
    let (for_pos, for_neg) = match direction {
        Direction::Upper => (domain.hi(), domain.lo()),
        Direction::Lower => (domain.lo(), domain.hi()),
    };
    Ok(a_pos.dot(for_pos) + a_neg.dot(for_neg) + &form.bias_acc)
}

/// Pre-activation intervals for every hidden layer over `domain`, with
/// default options.
pub fn preactivation_bounds(
    net: &Network,
    domain: &BoxDomain,
    overrides: Option<&SplitConstraints>,
) -> Result<Vec<LayerIntervals>> {
    preactivation_bounds_with(net, domain, overrides, &BoundOptions::default())
}

pub fn preactivation_bounds_with(
    net: &Network,
    domain: &BoxDomain,
    overrides: Option<&SplitConstraints>,
    opts: &BoundOptions,
) -> Result<Vec<LayerIntervals>> {
    compute_intervals(net, domain, overrides, opts, &[], None)
}

/// Recomputes intervals for layers `from_layer..` under `constraints`,
/// reusing `parent[..from_layer]` and intersecting every recomputed
/// layer with the parent's interval.
pub fn refine_preactivation_bounds(
    net: &Network,
    domain: &BoxDomain,
    constraints: &SplitConstraints,
    parent: &[LayerIntervals],
    from_layer: usize,
    opts: &BoundOptions,
) -> Result<Vec<LayerIntervals>> {
    if parent.len() != net.hidden_count() || from_layer > parent.len() {
        return Err(Error::DimensionMismatch {
            context: "parent intervals",
            expected: net.hidden_count(),
            got: parent.len(),
        });
    }
    compute_intervals(
        net,
        domain,
        Some(constraints),
        opts,
        &parent[..from_layer],
        Some(parent),
    )
}

fn compute_intervals(
    net: &Network,
    domain: &BoxDomain,
    overrides: Option<&SplitConstraints>,
    opts: &BoundOptions,
    prefix: &[LayerIntervals],
    envelope: Option<&[LayerIntervals]>,
) -> Result<Vec<LayerIntervals>> {
    if domain.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "input domain",
            expected: net.input_dim(),
            got: domain.dim(),
        });
    }
    if let Some(c) = overrides {
        c.validate(net)?;
    }
    let layers = net.layers();
    let hidden = net.hidden_count();
    let mut out: Vec<LayerIntervals> = prefix.to_vec();
    let mut relaxations: Vec<AffineRelaxation> = Vec::with_capacity(hidden);
    for (k, iv) in prefix.iter().enumerate() {
        let r = relu_relaxation(&iv.l, &iv.u, opts.lower_slope)?;
        relaxations.push(AffineRelaxation::through_relu(&layers[k], &r));
    }

    for i in prefix.len()..hidden {
        let layer = &layers[i];
        let (mut l, mut u) = match opts.intermediate {
            IntermediateMethod::Linear => {
                let start = LinearForm {
                    coeff: layer.weight.clone(),
                    bias_acc: layer.bias.clone(),
                };
                let mut upper = start.clone();
                let mut lower = start;
                for relax in relaxations[..i].iter().rev() {
                    upper = backward_substitute(&upper, relax, Direction::Upper)?;
                    lower = backward_substitute(&lower, relax, Direction::Lower)?;
                }
                (
                    concretize(&lower, domain, Direction::Lower)?,
                    concretize(&upper, domain, Direction::Upper)?,
                )
            }
            IntermediateMethod::Interval => {
                let (h_lo, h_hi) = match i {
                    0 => (domain.lo().clone(), domain.hi().clone()),
                    _ => (out[i - 1].l.mapv(relu), out[i - 1].u.mapv(relu)),
                };
                interval_affine(layer, &h_lo, &h_hi)
            }
        };

        if let Some(env) = envelope {
            Zip::from(&mut l).and(&env[i].l).for_each(|a, &b| *a = a.max(b));
            Zip::from(&mut u).and(&env[i].u).for_each(|a, &b| *a = a.min(b));
        }
        if let Some(c) = overrides {
            c.clamp_layer(i, &mut l, &mut u);
        }
        if let Some(neuron) = l.iter().zip(&u).position(|(a, b)| !(a <= b)) {
            return Err(Error::Infeasible { layer: i, neuron });
        }

        let r = relu_relaxation(&l, &u, opts.lower_slope)?;
        relaxations.push(AffineRelaxation::through_relu(layer, &r));
        out.push(LayerIntervals { l, u });
    }
    Ok(out)
}

/// Interval image of `[lo, hi]` under an affine layer.
pub(crate) fn interval_affine(
    layer: &AffineLayer,
    lo: &Array1<f64>,
    hi: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let w_pos = layer.weight.mapv(pos);
    let w_neg = layer.weight.mapv(neg);
    let l = w_pos.dot(lo) + w_neg.dot(hi) + &layer.bias;
    let u = w_pos.dot(hi) + w_neg.dot(lo) + &layer.bias;
    (l, u)
}

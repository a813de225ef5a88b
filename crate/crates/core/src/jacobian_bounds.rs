//! Bound propagation on the backward (Clarke-Jacobian) graph.
//!
//! For one output row, `J_n = W_n[row]` and `J_i = J_{i+1} Δ_i W_i`. A
//! linear form `J_i · a + c` bounding a quantity of interest is pushed
//! towards `J_n` one layer at a time: `a` is first folded through `W_i`
//! (`v = W_i a`), then each product `[J_{i+1}]_j [Δ_i]_jj` is replaced by
//! a line in `[J_{i+1}]_j` chosen by the sign of `v_j`. Once the form sits
//! at `J_n` it is evaluated exactly.
//!
//! Entrywise intervals on every `J_i` are obtained the same way, starting
//! from identity coefficients, and feed the relaxations of the layer below.
//! The ℓ∞ norm at the top is relaxed by one line per entry of `J_1`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::bab::SplitConstraints;
use crate::error::{Error, Result};
use crate::forward_bounds::{
    check_interval, preactivation_bounds_with, BoundOptions, BoxDomain, Direction, LayerIntervals,
    LinearForm,
};
use crate::model::{inf_norm, relu, AffineLayer, Network};

/// Width below which an interval is treated as a single point.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

/// Clarke gradient of one ReLU neuron over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeltaState {
    /// `u < 0`: gradient is 0.
    Zero,
    /// `l > 0`: gradient is 1.
    One,
    /// Gradient may be anywhere in `[0, 1]`.
    Unstable,
}

impl DeltaState {
    pub fn from_bounds(l: f64, u: f64) -> Self {
        if u < 0.0 {
            Self::Zero
        } else if l > 0.0 {
            Self::One
        } else {
            Self::Unstable
        }
    }

    /// Smallest and largest gradient value.
    pub fn range(self) -> (f64, f64) {
        match self {
            Self::Zero => (0.0, 0.0),
            Self::One => (1.0, 1.0),
            Self::Unstable => (0.0, 1.0),
        }
    }
}

pub fn delta_states(iv: &LayerIntervals) -> Vec<DeltaState> {
    iv.l
        .iter()
        .zip(&iv.u)
        .map(|(&l, &u)| DeltaState::from_bounds(l, u))
        .collect()
}

/// Entrywise bounds `lower <= J_i(x) <= upper` on one row of a Clarke Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct JacRowIntervals {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl JacRowIntervals {
    pub fn exact(row: ArrayView1<'_, f64>) -> Self {
        Self {
            lower: row.to_owned(),
            upper: row.to_owned(),
        }
    }

    pub fn width(&self) -> usize {
        self.lower.len()
    }
}

/// Per-neuron lines bounding `J · δ` for `J ∈ [L, U]` and `δ` in the
/// neuron's Clarke set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarkeRelaxation {
    pub lower_slope: Array1<f64>,
    pub lower_intercept: Array1<f64>,
    pub upper_slope: Array1<f64>,
    pub upper_intercept: Array1<f64>,
}

impl ClarkeRelaxation {
    fn zeros(n: usize) -> Self {
        Self {
            lower_slope: Array1::zeros(n),
            lower_intercept: Array1::zeros(n),
            upper_slope: Array1::zeros(n),
            upper_intercept: Array1::zeros(n),
        }
    }

    fn set_identity(&mut self, j: usize) {
        self.lower_slope[j] = 1.0;
        self.upper_slope[j] = 1.0;
        self.lower_intercept[j] = 0.0;
        self.upper_intercept[j] = 0.0;
    }

    fn set_constant(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower_slope[j] = 0.0;
        self.upper_slope[j] = 0.0;
        self.lower_intercept[j] = lower;
        self.upper_intercept[j] = upper;
    }
}

/// How the product `J · δ` is relaxed for neurons with uncertain gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClarkeMode {
    /// Optimal linear lines.
    #[default]
    Linear,
    /// Constant (interval) lines whenever `L < 0 < U`; reproduces RecurJac.
    Interval,
}

/// What [`lipschitz_upper_bound`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundMode {
    #[default]
    Linear,
    Interval,
    Naive,
}

impl BoundMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Interval => "interval",
            Self::Naive => "naive",
        }
    }

    fn clarke(self) -> Option<ClarkeMode> {
        match self {
            Self::Linear => Some(ClarkeMode::Linear),
            Self::Interval => Some(ClarkeMode::Interval),
            Self::Naive => None,
        }
    }
}

impl std::str::FromStr for BoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "interval" => Ok(Self::Interval),
            "naive" => Ok(Self::Naive),
            other => Err(Error::Config(format!("unknown mode \"{other}\""))),
        }
    }
}

/// Bound on `‖J_1(x) row‖₁` for one output row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBound {
    pub bound: f64,
    /// `jacobian[k]` bounds `J_{k+1}`; empty in naive mode.
    pub jacobian: Vec<JacRowIntervals>,
    /// `top_coefficients[k][j]` multiplies `[J_{k+2} Δ_{k+1}]_j` in the
    /// final norm propagation; empty in naive mode.
    pub top_coefficients: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub mode: BoundMode,
    pub bound: f64,
    pub rows: Vec<RowBound>,
    /// Pre-activation intervals the bound was computed from; empty in naive mode.
    pub intervals: Vec<LayerIntervals>,
    pub runtime_s: f64,
}

impl BoundReport {
    pub fn row_bounds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.bound).collect()
    }

    /// Index of the row attaining the overall bound (lowest index on ties).
    pub fn worst_row(&self) -> usize {
        let mut best = 0;
        for (i, r) in self.rows.iter().enumerate() {
            if r.bound > self.rows[best].bound {
                best = i;
            }
        }
        best
    }
}

/// Upper line for `|J|` over `[L, U]`, summed over entries:
/// `Σ_j |J_j| <= coeff · J + bias`.
pub fn abs_norm_relaxation(lower: &Array1<f64>, upper: &Array1<f64>) -> Result<(Array1<f64>, f64)> {
    check_interval(lower, upper)?;
    let mut coeff = Array1::zeros(lower.len());
    let mut bias = 0.0;
    for (j, (&l, &u)) in lower.iter().zip(upper).enumerate() {
        if u - l < DEGENERATE_WIDTH {
            bias += l.abs().max(u.abs());
        } else {
            let c = (u.abs() - l.abs()) / (u - l);
            coeff[j] = c;
            bias += -c * l + l.abs();
        }
    }
    Ok((coeff, bias))
}

/// Optimal linear relaxation of `J · δ` per neuron.
pub fn clarke_relaxation(
    lower: &Array1<f64>,
    upper: &Array1<f64>,
    deltas: &[DeltaState],
) -> Result<ClarkeRelaxation> {
    check_relaxation_inputs(lower, upper, deltas)?;
    let mut out = ClarkeRelaxation::zeros(lower.len());
    for (j, &state) in deltas.iter().enumerate() {
        let (l, u) = (lower[j], upper[j]);
        match state {
            DeltaState::Zero => {}
            DeltaState::One => out.set_identity(j),
            DeltaState::Unstable if u - l < DEGENERATE_WIDTH => {
                out.set_constant(j, l.min(0.0), u.max(0.0));
            }
            DeltaState::Unstable => {
                let width = u - l;
                let up = (relu(u) - relu(l)) / width;
                let lo = (relu(-l) - relu(-u)) / width;
                out.upper_slope[j] = up;
                out.upper_intercept[j] = -up * l + relu(l);
                out.lower_slope[j] = lo;
                out.lower_intercept[j] = -lo * l - relu(-l);
            }
        }
    }
    Ok(out)
}

/// RecurJac-style relaxation: constant lines `[L·δ_max, U·δ_max]` whenever
/// the Jacobian entry straddles zero, the linear lines otherwise.
pub fn interval_clarke_relaxation(
    lower: &Array1<f64>,
    upper: &Array1<f64>,
    deltas: &[DeltaState],
) -> Result<ClarkeRelaxation> {
    let mut out = clarke_relaxation(lower, upper, deltas)?;
    for (j, &state) in deltas.iter().enumerate() {
        let (l, u) = (lower[j], upper[j]);
        if l < 0.0 && 0.0 < u {
            let (_, d_max) = state.range();
            out.set_constant(j, l * d_max, u * d_max);
        }
    }
    Ok(out)
}

fn check_relaxation_inputs(lower: &Array1<f64>, upper: &Array1<f64>, deltas: &[DeltaState]) -> Result<()> {
    check_interval(lower, upper)?;
    if deltas.len() != lower.len() {
        return Err(Error::DimensionMismatch {
            context: "clarke relaxation",
            expected: lower.len(),
            got: deltas.len(),
        });
    }
    Ok(())
}

fn build_relaxation(
    mode: ClarkeMode,
    jac: &JacRowIntervals,
    deltas: &[DeltaState],
) -> Result<ClarkeRelaxation> {
    match mode {
        ClarkeMode::Linear => clarke_relaxation(&jac.lower, &jac.upper, deltas),
        ClarkeMode::Interval => interval_clarke_relaxation(&jac.lower, &jac.upper, deltas),
    }
}

/// Moves a form from `J_i` to `J_{i+1}` through `W_i` and the relaxation of `Δ_i`.
pub fn jacobian_backward_step(
    form: &LinearForm,
    layer: &AffineLayer,
    relax: &ClarkeRelaxation,
    direction: Direction,
) -> Result<LinearForm> {
    step_with_fold(form, layer, relax, direction).map(|(f, _)| f)
}

/// Like [`jacobian_backward_step`], also returning the folded coefficients `W_i a`.
fn step_with_fold(
    form: &LinearForm,
    layer: &AffineLayer,
    relax: &ClarkeRelaxation,
    direction: Direction,
) -> Result<(LinearForm, Array2<f64>)> {
    if form.width() != layer.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian step",
            expected: layer.in_dim(),
            got: form.width(),
        });
    }
    if relax.upper_slope.len() != layer.out_dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian step relaxation",
            expected: layer.out_dim(),
            got: relax.upper_slope.len(),
        });
    }
    let folded = form.coeff.dot(&layer.weight.t());
    let (pos_s, pos_t, neg_s, neg_t) = match direction {
        Direction::Upper => (
            &relax.upper_slope,
            &relax.upper_intercept,
            &relax.lower_slope,
            &relax.lower_intercept,
        ),
        Direction::Lower => (
            &relax.lower_slope,
            &relax.lower_intercept,
            &relax.upper_slope,
            &relax.upper_intercept,
        ),
    };
    let mut coeff = Array2::zeros(folded.dim());
    let mut bias_acc = form.bias_acc.clone();
    for (r, row) in folded.outer_iter().enumerate() {
        let mut acc = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if v >= 0.0 {
                coeff[[r, j]] = v * pos_s[j];
                acc += v * pos_t[j];
            } else {
                coeff[[r, j]] = v * neg_s[j];
                acc += v * neg_t[j];
            }
        }
        bias_acc[r] += acc;
    }
    Ok((LinearForm { coeff, bias_acc }, folded))
}

/// Entrywise bounds on `J_1, ..., J_n` for one output row (linear relaxation).
pub fn jacobian_interval_bounds(
    net: &Network,
    intervals: &[LayerIntervals],
    row: usize,
) -> Result<Vec<JacRowIntervals>> {
    jacobian_interval_bounds_in(net, intervals, row, ClarkeMode::Linear)
}

pub fn jacobian_interval_bounds_in(
    net: &Network,
    intervals: &[LayerIntervals],
    row: usize,
    mode: ClarkeMode,
) -> Result<Vec<JacRowIntervals>> {
    let deltas = checked_deltas(net, intervals, row)?;
    let (jac, _) = row_jacobian_bounds(net, &deltas, row, mode)?;
    Ok(jac)
}

fn checked_deltas(net: &Network, intervals: &[LayerIntervals], row: usize) -> Result<Vec<Vec<DeltaState>>> {
    if intervals.len() != net.hidden_count() {
        return Err(Error::DimensionMismatch {
            context: "hidden layer intervals",
            expected: net.hidden_count(),
            got: intervals.len(),
        });
    }
    for (iv, width) in intervals.iter().zip(net.hidden_widths()) {
        if iv.width() != width {
            return Err(Error::DimensionMismatch {
                context: "layer interval width",
                expected: width,
                got: iv.width(),
            });
        }
    }
    if row >= net.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "output row",
            expected: net.output_dim(),
            got: row,
        });
    }
    Ok(intervals.iter().map(delta_states).collect())
}

/// Returns the intervals on every `J_i` and the relaxation used at each hidden layer.
fn row_jacobian_bounds(
    net: &Network,
    deltas: &[Vec<DeltaState>],
    row: usize,
    mode: ClarkeMode,
) -> Result<(Vec<JacRowIntervals>, Vec<ClarkeRelaxation>)> {
    let layers = net.layers();
    let n = layers.len();
    let w_row = layers[n - 1].weight.row(row);

    let mut jac: Vec<JacRowIntervals> = Vec::with_capacity(n);
    jac.push(JacRowIntervals::exact(w_row));
    // Built from the top down, reversed at the end.
    let mut relax_rev: Vec<ClarkeRelaxation> = Vec::with_capacity(n - 1);

    for k in (0..n - 1).rev() {
        let above = jac.last().expect("J_{k+2} computed");
        relax_rev.push(build_relaxation(mode, above, &deltas[k])?);

        let width = layers[k].in_dim();
        let mut upper = LinearForm::identity(width);
        let mut lower = LinearForm::identity(width);
        for (m, relax) in (k..n - 1).zip(relax_rev.iter().rev()) {
            upper = jacobian_backward_step(&upper, &layers[m], relax, Direction::Upper)?;
            lower = jacobian_backward_step(&lower, &layers[m], relax, Direction::Lower)?;
        }
        let hi = upper.coeff.dot(&w_row) + &upper.bias_acc;
        let lo = lower.coeff.dot(&w_row) + &lower.bias_acc;
        // Exact entries can come out crossed by rounding.
        let (lo, hi): (Vec<f64>, Vec<f64>) = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| (a.min(b), a.max(b)))
            .unzip();
        jac.push(JacRowIntervals {
            lower: Array1::from(lo),
            upper: Array1::from(hi),
        });
    }
    jac.reverse();
    relax_rev.reverse();
    Ok((jac, relax_rev))
}

fn row_bound(net: &Network, deltas: &[Vec<DeltaState>], row: usize, mode: ClarkeMode) -> Result<RowBound> {
    let layers = net.layers();
    let n = layers.len();
    let (jacobian, relax) = row_jacobian_bounds(net, deltas, row, mode)?;

    let (coeff, bias) = abs_norm_relaxation(&jacobian[0].lower, &jacobian[0].upper)?;
    let mut form = LinearForm {
        coeff: coeff.insert_axis(ndarray::Axis(0)),
        bias_acc: Array1::from_elem(1, bias),
    };
    let mut top_coefficients = Vec::with_capacity(n - 1);
    for (layer, r) in layers[..n - 1].iter().zip(&relax) {
        let (next, folded) = step_with_fold(&form, layer, r, Direction::Upper)?;
        top_coefficients.push(folded.row(0).to_owned());
        form = next;
    }
    let value = form.coeff.row(0).dot(&layers[n - 1].weight.row(row)) + form.bias_acc[0];
    Ok(RowBound {
        bound: value.max(0.0),
        jacobian,
        top_coefficients,
    })
}

/// Product of induced ∞-norms of the weight matrices.
pub fn naive_upper_bound(net: &Network) -> f64 {
    net.layers().iter().map(|l| inf_norm(&l.weight)).product()
}

fn naive_report(net: &Network, started: Instant) -> BoundReport {
    let layers = net.layers();
    let n = layers.len();
    let hidden: f64 = layers[..n - 1].iter().map(|l| inf_norm(&l.weight)).product();
    let rows: Vec<RowBound> = layers[n - 1]
        .weight
        .rows()
        .into_iter()
        .map(|r| RowBound {
            bound: r.iter().map(|v| v.abs()).sum::<f64>() * hidden,
            jacobian: Vec::new(),
            top_coefficients: Vec::new(),
        })
        .collect();
    let bound = rows.iter().map(|r| r.bound).fold(0.0, f64::max);
    BoundReport {
        mode: BoundMode::Naive,
        bound,
        rows,
        intervals: Vec::new(),
        runtime_s: started.elapsed().as_secs_f64(),
    }
}

/// Certified upper bound on the ℓ∞ local Lipschitz constant over `domain`.
pub fn lipschitz_upper_bound(
    net: &Network,
    domain: &BoxDomain,
    mode: BoundMode,
    overrides: Option<&SplitConstraints>,
) -> Result<BoundReport> {
    lipschitz_upper_bound_with(net, domain, mode, overrides, &BoundOptions::default())
}

pub fn lipschitz_upper_bound_with(
    net: &Network,
    domain: &BoxDomain,
    mode: BoundMode,
    overrides: Option<&SplitConstraints>,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let started = Instant::now();
    let Some(clarke) = mode.clarke() else {
        if domain.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input domain",
                expected: net.input_dim(),
                got: domain.dim(),
            });
        }
        return Ok(naive_report(net, started));
    };
    let intervals = preactivation_bounds_with(net, domain, overrides, opts)?;
    let mut report = bound_from_intervals(net, intervals, clarke)?;
    report.runtime_s = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Bound for fixed pre-activation intervals.
pub fn bound_from_intervals(
    net: &Network,
    intervals: Vec<LayerIntervals>,
    mode: ClarkeMode,
) -> Result<BoundReport> {
    let started = Instant::now();
    let deltas = checked_deltas(net, &intervals, 0)?;
    let rows = (0..net.output_dim())
        .into_par_iter()
        .map(|row| row_bound(net, &deltas, row, mode))
        .collect::<Result<Vec<_>>>()?;
    let bound = rows.iter().map(|r| r.bound).fold(0.0, f64::max);
    Ok(BoundReport {
        mode: match mode {
            ClarkeMode::Linear => BoundMode::Linear,
            ClarkeMode::Interval => BoundMode::Interval,
        },
        bound,
        rows,
        intervals,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Entrywise bounds `(L_1, U_1)` on the full Clarke Jacobian, `K × d`.
pub fn jacobian_entry_bounds(net: &Network, domain: &BoxDomain) -> Result<(Array2<f64>, Array2<f64>)> {
    jacobian_entry_bounds_in(net, domain, ClarkeMode::Linear)
}

pub fn jacobian_entry_bounds_in(
    net: &Network,
    domain: &BoxDomain,
    mode: ClarkeMode,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let intervals = preactivation_bounds_with(net, domain, None, &BoundOptions::default())?;
    let deltas = checked_deltas(net, &intervals, 0)?;
    let per_row = (0..net.output_dim())
        .into_par_iter()
        .map(|row| row_jacobian_bounds(net, &deltas, row, mode).map(|(j, _)| j.into_iter().next().expect("J_1")))
        .collect::<Result<Vec<_>>>()?;
    let (k, d) = (net.output_dim(), net.input_dim());
    let mut lower = Array2::zeros((k, d));
    let mut upper = Array2::zeros((k, d));
    for (r, j) in per_row.into_iter().enumerate() {
        lower.row_mut(r).assign(&j.lower);
        upper.row_mut(r).assign(&j.upper);
    }
    Ok((lower, upper))
}

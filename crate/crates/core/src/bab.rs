//! Branch-and-bound over unstable ReLU neurons.
//!
//! Each domain fixes the sign of some hidden neurons. Splitting a neuron
//! clamps its pre-activation interval to `(l, -ε̃)` on one side and
//! `(ε̃, u)` on the other, which fixes its Clarke gradient to 0 or 1 and
//! lets the backward-graph relaxation drop that neuron's gap. The loosest
//! domains are split first; the global bound is the loosest bound left.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rayon::prelude::*;
use tracing::debug;

use crate::error::{Error, Result};
use crate::forward_bounds::{
    preactivation_bounds_with, refine_preactivation_bounds, BoundOptions, BoxDomain, LayerIntervals,
};
use crate::jacobian_bounds::{bound_from_intervals, ClarkeMode, DeltaState, JacRowIntervals};
use crate::model::Network;

/// Default split margin ε̃.
pub const DEFAULT_SPLIT_MARGIN: f64 = 1e-9;

/// A hidden neuron: `layer` is the 0-based hidden layer (pre-activation
/// `z_{layer+1}`), `neuron` the index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeuronRef {
    pub layer: usize,
    pub neuron: usize,
}

impl NeuronRef {
    pub fn new(layer: usize, neuron: usize) -> Self {
        Self { layer, neuron }
    }
}

impl fmt::Display for NeuronRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.neuron)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Negative,
    Positive,
}

/// Per-neuron sign constraints plus the split margin ε̃.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConstraints {
    signs: BTreeMap<NeuronRef, Sign>,
    margin: f64,
}

impl Default for SplitConstraints {
    fn default() -> Self {
        Self::new(DEFAULT_SPLIT_MARGIN)
    }
}

impl SplitConstraints {
    pub fn new(margin: f64) -> Self {
        Self {
            signs: BTreeMap::new(),
            margin,
        }
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn insert(&mut self, neuron: NeuronRef, sign: Sign) -> Result<()> {
        if self.signs.contains_key(&neuron) {
            return Err(Error::AlreadyConstrained(neuron));
        }
        self.signs.insert(neuron, sign);
        Ok(())
    }

    pub fn get(&self, neuron: NeuronRef) -> Option<Sign> {
        self.signs.get(&neuron).copied()
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronRef, Sign)> + '_ {
        self.signs.iter().map(|(k, v)| (*k, *v))
    }

    pub(crate) fn validate(&self, net: &Network) -> Result<()> {
        let widths = net.hidden_widths();
        for n in self.signs.keys() {
            if n.layer >= widths.len() || n.neuron >= widths[n.layer] {
                return Err(Error::Config(format!("neuron {n} is out of range")));
            }
        }
        Ok(())
    }

    /// Intersects the intervals of one layer with the constrained signs.
    pub(crate) fn clamp_layer(&self, layer: usize, l: &mut Array1<f64>, u: &mut Array1<f64>) {
        let range = NeuronRef::new(layer, 0)..NeuronRef::new(layer + 1, 0);
        for (n, sign) in self.signs.range(range) {
            let (lo, hi) = clamp_interval(l[n.neuron], u[n.neuron], *sign, self.margin);
            l[n.neuron] = lo;
            u[n.neuron] = hi;
        }
    }
}

/// `(l, u) ∩ (-∞, -ε̃]` or `(l, u) ∩ [ε̃, ∞)`; may come out empty.
pub fn clamp_interval(l: f64, u: f64, sign: Sign, margin: f64) -> (f64, f64) {
    match sign {
        Sign::Negative => (l, u.min(-margin)),
        Sign::Positive => (l.max(margin), u),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BabConfig {
    pub batch_size: usize,
    pub time_limit: Duration,
    pub max_domains: usize,
    pub split_margin: f64,
}

impl Default for BabConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            time_limit: Duration::from_secs(60),
            max_domains: 100_000,
            split_margin: DEFAULT_SPLIT_MARGIN,
        }
    }
}

impl BabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_domains == 0 {
            return Err(Error::Config("batch size and max domains must be positive".into()));
        }
        if !(self.split_margin > 0.0) || !self.split_margin.is_finite() {
            return Err(Error::Config("split margin must be positive".into()));
        }
        Ok(())
    }
}

/// One subdomain: sign constraints and a bound valid on it.
#[derive(Debug, Clone)]
pub struct BabDomain {
    pub constraints: SplitConstraints,
    pub bound: f64,
    pub depth: usize,
    pub intervals: Vec<LayerIntervals>,
    /// Jacobian intervals of the row attaining `bound`.
    pub jacobian: Vec<JacRowIntervals>,
    /// Final-propagation coefficients of the row attaining `bound`.
    pub top_coefficients: Vec<Array1<f64>>,
}

impl BabDomain {
    /// The unconstrained domain covering the whole box.
    pub fn root(net: &Network, domain: &BoxDomain, margin: f64) -> Result<Self> {
        let intervals = preactivation_bounds_with(net, domain, None, &BoundOptions::default())?;
        Self::bounded(net, SplitConstraints::new(margin), 0, intervals)
    }

    fn bounded(net: &Network, constraints: SplitConstraints, depth: usize, intervals: Vec<LayerIntervals>) -> Result<Self> {
        let report = bound_from_intervals(net, intervals, ClarkeMode::Linear)?;
        let worst = report.worst_row();
        let bound = report.bound;
        let row = report.rows.into_iter().nth(worst).expect("at least one row");
        Ok(Self {
            constraints,
            bound,
            depth,
            intervals: report.intervals,
            jacobian: row.jacobian,
            top_coefficients: row.top_coefficients,
        })
    }

    pub fn state(&self, neuron: NeuronRef) -> DeltaState {
        let iv = &self.intervals[neuron.layer];
        DeltaState::from_bounds(iv.l[neuron.neuron], iv.u[neuron.neuron])
    }

    pub fn unstable_neurons(&self) -> Vec<NeuronRef> {
        let mut out = Vec::new();
        for (k, iv) in self.intervals.iter().enumerate() {
            for j in 0..iv.width() {
                if DeltaState::from_bounds(iv.l[j], iv.u[j]) == DeltaState::Unstable {
                    out.push(NeuronRef::new(k, j));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BabResult {
    pub bound: f64,
    pub initial_bound: f64,
    pub domains_explored: usize,
    pub domains_pruned: usize,
    /// Global bound after initialization and after every batch.
    pub history: Vec<f64>,
    /// Every live domain was either resolved (no unstable neuron left)
    /// or dominated by a resolved one, so further splitting cannot help.
    pub complete: bool,
    pub runtime_s: f64,
}

/// Estimated improvement from splitting `neuron`:
/// `½ (U - L)² · |coefficient|`, where `[L, U]` bounds the Jacobian entry
/// multiplied by the neuron's gradient and the coefficient is the weight
/// of that product in the final norm propagation.
pub fn branch_score(
    dom: &BabDomain,
    neuron: NeuronRef,
    jacobian: &[JacRowIntervals],
    top_coeff: &[Array1<f64>],
) -> Result<f64> {
    if neuron.layer >= dom.intervals.len() || neuron.neuron >= dom.intervals[neuron.layer].width() {
        return Err(Error::Config(format!("neuron {neuron} is out of range")));
    }
    if dom.state(neuron) != DeltaState::Unstable {
        return Err(Error::NotUnstable(neuron));
    }
    let jac = &jacobian[neuron.layer + 1];
    let gap = jac.upper[neuron.neuron] - jac.lower[neuron.neuron];
    Ok(0.5 * gap * gap * top_coeff[neuron.layer][neuron.neuron].abs())
}

/// Highest-scoring unstable neuron; ties go to the lowest `(layer, neuron)`.
pub fn select_neuron(dom: &BabDomain) -> Option<NeuronRef> {
    let mut best: Option<(NeuronRef, f64)> = None;
    for n in dom.unstable_neurons() {
        let score = branch_score(dom, n, &dom.jacobian, &dom.top_coefficients).unwrap_or(0.0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((n, score));
        }
    }
    best.map(|(n, _)| n)
}

/// Two children constraining `neuron` negative and positive.
///
/// The children inherit the parent's bound and intervals until re-bounded.
pub fn split_domain(dom: &BabDomain, neuron: NeuronRef, margin: f64) -> Result<(BabDomain, BabDomain)> {
    if dom.constraints.get(neuron).is_some() {
        return Err(Error::AlreadyConstrained(neuron));
    }
    if neuron.layer >= dom.intervals.len() || neuron.neuron >= dom.intervals[neuron.layer].width() {
        return Err(Error::Config(format!("neuron {neuron} is out of range")));
    }
    if dom.state(neuron) != DeltaState::Unstable {
        return Err(Error::NotUnstable(neuron));
    }
    let child = |sign| -> Result<BabDomain> {
        let mut constraints = dom.constraints.clone();
        constraints.margin = margin;
        constraints.insert(neuron, sign)?;
        Ok(BabDomain {
            constraints,
            depth: dom.depth + 1,
            ..dom.clone()
        })
    };
    Ok((child(Sign::Negative)?, child(Sign::Positive)?))
}

/// Re-bounds a freshly split child. Layers below the branched neuron keep
/// the parent's intervals; the rest are recomputed and intersected with
/// the parent's. The child never reports a looser bound than its parent.
pub fn bound_child(
    net: &Network,
    domain: &BoxDomain,
    parent: &BabDomain,
    child: BabDomain,
    branched: NeuronRef,
) -> Result<BabDomain> {
    let intervals = refine_preactivation_bounds(
        net,
        domain,
        &child.constraints,
        &parent.intervals,
        branched.layer,
        &BoundOptions::default(),
    )?;
    let mut out = BabDomain::bounded(net, child.constraints, child.depth, intervals)?;
    out.bound = out.bound.min(parent.bound);
    Ok(out)
}

struct Queued {
    bound: f64,
    seq: u64,
    domain: BabDomain,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Max-heap on bound; earlier insertion wins ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Tightens the linear-mode bound by splitting unstable neurons.
pub fn run_bab(net: &Network, domain: &BoxDomain, cfg: &BabConfig) -> Result<BabResult> {
    cfg.validate()?;
    let started = Instant::now();
    let root = BabDomain::root(net, domain, cfg.split_margin)?;
    let initial_bound = root.bound;

    let mut pool: BinaryHeap<Queued> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut leaf_bound = f64::NEG_INFINITY;
    let mut explored = 1usize;
    let mut pruned = 0usize;

    if root.unstable_neurons().is_empty() {
        leaf_bound = root.bound;
    } else {
        pool.push(Queued {
            bound: root.bound,
            seq,
            domain: root,
        });
        seq += 1;
    }

    let global = |pool: &BinaryHeap<Queued>, leaf: f64| {
        let live = pool.peek().map_or(f64::NEG_INFINITY, |q| q.bound);
        live.max(leaf)
    };
    let mut history = vec![initial_bound];

    while !pool.is_empty() && explored < cfg.max_domains && started.elapsed() < cfg.time_limit {
        let batch: Vec<BabDomain> = (0..cfg.batch_size)
            .map_while(|_| pool.pop().map(|q| q.domain))
            .collect();

        let outcomes: Vec<Result<Vec<Option<BabDomain>>>> = batch
            .par_iter()
            .map(|parent| {
                let neuron = select_neuron(parent).expect("pooled domains have an unstable neuron");
                let (neg, pos) = split_domain(parent, neuron, cfg.split_margin)?;
                [neg, pos]
                    .into_iter()
                    .map(|child| match bound_child(net, domain, parent, child, neuron) {
                        Ok(d) => Ok(Some(d)),
                        Err(Error::Infeasible { .. }) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect();

        for (parent, outcome) in batch.into_iter().zip(outcomes) {
            let children = outcome?;
            explored += children.len();
            if children.iter().all(Option::is_none) {
                // Only reachable when the neuron's interval lies inside
                // (-ε̃, ε̃); keep the parent as a leaf rather than drop it.
                pruned += children.len();
                leaf_bound = leaf_bound.max(parent.bound);
                continue;
            }
            for child in children {
                match child {
                    None => pruned += 1,
                    Some(d) if d.unstable_neurons().is_empty() => leaf_bound = leaf_bound.max(d.bound),
                    Some(d) => {
                        pool.push(Queued {
                            bound: d.bound,
                            seq,
                            domain: d,
                        });
                        seq += 1;
                    }
                }
            }
        }
        // A domain no looser than a resolved leaf cannot change the maximum.
        let before = pool.len();
        pool.retain(|q| q.bound > leaf_bound);
        pruned += before - pool.len();
        let g = global(&pool, leaf_bound);
        debug!(bound = g, live = pool.len(), explored, "bab batch");
        history.push(g);
    }

    let bound = *history.last().expect("history starts with the initial bound");
    Ok(BabResult {
        bound,
        initial_bound,
        domains_explored: explored,
        domains_pruned: pruned,
        history,
        complete: pool.is_empty(),
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

//! Certified ℓ∞ local Lipschitz upper bounds for feedforward ReLU networks.
//!
//! Bounds are obtained by linear bound propagation over the backward graph
//! of the Clarke Jacobian `J_1 = W_n Δ_{n-1} W_{n-1} ⋯ Δ_1 W_1`:
//!
//! 1. [`forward_bounds`] computes pre-activation intervals over an input box,
//!    which fix the range of every ReLU gradient `Δ_i`.
//! 2. [`jacobian_bounds`] bounds each Jacobian row entrywise, relaxes
//!    `‖J_1 row‖₁` by a linear upper line, and propagates that line back
//!    to the last weight row.
//! 3. [`bab`] optionally splits unstable neurons to tighten the result.
//!
//! [`oracle`] holds independent checks (sampling, pattern enumeration,
//! finite differences, a RecurJac transcription).
//!
//! ```
//! use lipcert::{lipschitz_upper_bound, AffineLayer, BoundMode, BoxDomain, Network};
//! use ndarray::array;
//!
//! let net = Network::new(vec![
//!     AffineLayer::new(array![[1.0]], array![0.0]).unwrap(),
//!     AffineLayer::new(array![[1.0]], array![0.0]).unwrap(),
//! ])
//! .unwrap();
//! let domain = BoxDomain::new(array![-1.0], array![1.0]).unwrap();
//! let report = lipschitz_upper_bound(&net, &domain, BoundMode::Linear, None).unwrap();
//! assert!((report.bound - 1.0).abs() < 1e-12);
//! ```

pub mod bab;
pub mod error;
pub mod forward_bounds;
pub mod jacobian_bounds;
pub mod model;
pub mod oracle;

pub use bab::{run_bab, BabConfig, BabResult, NeuronRef, Sign, SplitConstraints};
pub use error::{Error, Result};
pub use forward_bounds::{preactivation_bounds, BoundOptions, BoxDomain, LayerIntervals};
pub use jacobian_bounds::{
    jacobian_entry_bounds, lipschitz_upper_bound, naive_upper_bound, BoundMode, BoundReport,
};
pub use model::{
    forward, jacobian_at, load_network, parse_network, AffineLayer, ConvSpec, Network, ZeroRule,
};

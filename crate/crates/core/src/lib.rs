//! Extreme (min/max) trajectories of parameterized power-system DAE
//! simulations over a box of uncertain parameters.
//!
//! The pieces, bottom-up:
//!
//! - [`dae`]: semi-explicit DAE systems, backward-Euler integration with events.
//! - [`sensitivity`]: first/second-order trajectory sensitivities sharing the
//!   integrator's step factorizations.
//! - [`models`]: generator, exciter, governor, ZIP and induction-motor loads,
//!   network assembly and the bundled case studies.
//! - [`trust_region`]: box-constrained trust-region minimizer over a quadratic
//!   surrogate built from sensitivities.
//! - [`extremes`]: per-time-step envelopes and the nominal-Taylor baseline.
//! - [`oracle`]: grid / Monte Carlo ground truth.
//! - [`par`]: the rayon-backed parallel map and its sequential fallback.

pub mod bounds;
pub mod dae;
pub mod error;
pub mod extremes;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod par;
pub mod sensitivity;
pub mod trust_region;

pub use bounds::ParameterBox;
pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

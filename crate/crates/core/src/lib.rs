//! Optimal bid/ask quoting for a dealer answering RFQs on a universe of bonds.
//!
//! Two families of solvers live here:
//!
//! * exact grid solvers for a handful of bonds ([`tabular`], [`fd`]): linear
//!   policy evaluation, value iteration on the per-RFQ Bellman operator, and
//!   an implicit operator-splitting scheme for the stationary HJB equation;
//! * a model-based actor-critic ([`actor_critic`]) that represents the value
//!   function and the fill probabilities with small feedforward networks
//!   ([`neural`]) and learns from simulated RFQ flow ([`simulator`]).
//!
//! [`harness`] ties them together for comparisons and reproducible runs.

pub mod actor_critic;
pub mod data;
pub mod error;
pub mod fd;
pub mod grid;
pub mod harness;
pub mod intensity;
pub mod model;
pub mod neural;
pub mod normal;
pub mod optimize;
pub mod simulator;
pub mod tabular;

pub use error::{Error, Result};
pub use intensity::SuJohnsonCurve;
pub use model::{BondSpec, InventoryState, MarketSpec, PenaltyKind, PenaltySpec, RiskLimits, Side};

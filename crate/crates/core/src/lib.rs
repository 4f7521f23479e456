//! Portfolio optimization under first-order stochastic dominance constraints.
//!
//! Returns are modelled by equiprobable scenarios. A portfolio must dominate
//! a step reference distribution; the constrained problem is turned into an
//! unconstrained one with exact penalties and solved by stochastic smoothing
//! inside a box branch and bound.

pub mod bnb;
pub mod distribution;
pub mod dominance;
pub mod error;
pub mod harness;
pub mod penalty;
pub mod smoother;

pub use distribution::{Objective, ScenarioMatrix, SortedReturns, StepCdf, StepQuantile, Weights};
pub use dominance::{FeasibleBox, ReferenceProfile, Shift};
pub use error::{Error, Result};
pub use penalty::{PenalizedObjective, PenaltySpec, PenaltyVariant};
pub use smoother::{OptimizeResult, SmootherConfig};

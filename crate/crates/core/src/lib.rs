//! Layerwise-Wasserstein (LW) optimal transport for mass distributions on
//! `R^d x R>=0`, where the last coordinate is a height (depth below ground).
//!
//! The LW distance compares two measures by first matching their vertical
//! marginals with one-dimensional optimal transport, then comparing the
//! horizontal layers of the vertically rescaled measures level by level:
//!
//! ```text
//! d_LW^2(mu, nu) = W_2^2(mu^V/|mu^V|, nu^V/|nu^V|) + int_0^1 W_2^2(mu~_l, nu~_l) dl
//! ```
//!
//! Everything computational runs on finite atomic measures, where the
//! integrand over `l` is piecewise constant and the integral reduces to an
//! exact sum over a common refinement of cumulative-mass breakpoints.
//!
//! Modules:
//!
//! - [`measures`]: atomic, gridded and layered representations.
//! - [`ot1d`]: closed-form one-dimensional transport and barycenters.
//! - [`discrete_ot`]: exact transport and multi-marginal linear programs.
//! - [`layerwise`]: rescaling, LW distance, LW barycenters, rotation search,
//!   Knothe-Rosenblatt coupling.
//! - [`skeleton`]: skeletal root measures, W3 validation, ghosts, skeletal
//!   barycenters and root length.
//! - [`phenotypes`]: entropy, vertical moments, quantiles, internal energy
//!   and a convexity harness.

pub mod discrete_ot;
pub mod error;
pub mod layerwise;
pub mod measures;
pub mod ot1d;
pub mod phenotypes;
pub mod skeleton;

mod weights;

pub use error::{Error, Result};
pub use weights::Weights;

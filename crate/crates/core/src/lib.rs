//! Robust multi-item screening under support-only information.
//!
//! A monopolist sells `J` products to a single buyer whose valuation vector is
//! known only to lie in a box `V = [lo_1, hi_1] x ... x [lo_J, hi_J]`. The
//! seller's objective is the competitive ratio: revenue divided by the
//! hindsight-optimal revenue, in the worst case over every valuation
//! distribution supported on `V`.
//!
//! The optimal mechanism is *semi-separable*: each item is sold by a
//! one-dimensional threshold mechanism whose design uses the joint support
//! box. The whole family is parametrized by a scalar `gamma in [0, 1]`, and
//! the optimal `gamma*` (which equals the optimal competitive ratio) is the
//! unique root of a monotone scalar function `phi`. Nature's matching
//! worst-case strategy is a co-monotonic ray distribution: valuations move
//! together along `v(xi) = min(omega * xi, hi)` with the scaling factor `xi`
//! drawn from a piecewise log/reciprocal law. This crate computes both sides
//! and certifies numerically that they form a saddle point.
//!
//! Module map:
//! - [`model`]: instances, valuations, quotes, price laws, partitions.
//! - [`scalar`]: Lambert-W and bracketed root finding.
//! - [`separable`]: the separate-selling baseline and its joint ratio.
//! - [`semi_separable`]: `phi`, `gamma*`, the mechanism, two-item closed forms.
//! - [`adversary`]: worst-case ray distributions, sampling, best responses.
//! - [`bundles`]: partition-level mechanisms and best-partition search.
//! - [`verify`]: IC/IR grid checks, worst-case grids, saddle certificates.
//! - [`sweep`]: bound sweeps comparing separable vs semi-separable ratios.

pub mod adversary;
pub mod bundles;
pub mod model;
pub mod scalar;
pub mod semi_separable;
pub mod separable;
pub mod sweep;
pub mod verify;

pub use model::{Instance, Item, Mechanism, MechanismQuote, ModelError, PriceLaw, Valuation};
pub use semi_separable::{solve_gamma_star, GammaSolution};

//! Numerical laboratory for rank-based equity market models in their
//! mean-field limit.
//!
//! The model: n stocks whose log capitalizations move as diffusions with
//! drift and variance assigned by rank (smallest stock gets the coefficients
//! at relative rank near 0, largest near 1).  As n grows, the empirical law
//! of the centered log capitalizations converges to a deterministic flow,
//! and under a stability condition that flow settles into an equilibrium
//! described entirely by one increasing function: the quantile `Psi` of the
//! fluctuation law.
//!
//! This crate computes both sides of that limit.  The closed-form side
//! builds `Psi` and everything derived from it: weighted capital measures,
//! capital distribution curves, and the long-run growth rates of diversity-
//! weighted portfolios, with the phase transition (in the weighting exponent
//! p against the critical index p_c) handled explicitly.  The Monte Carlo
//! side simulates the finite-n particle system with rank-frozen Euler steps
//! and measures the same quantities empirically, so each formula can be
//! checked against the dynamics it is supposed to summarize.
//!
//! Layout:
//! - [`coefficients`]: coefficient presets, initial laws, model assembly
//!   and assumption validation.
//! - [`equilibrium`]: the quantile `Psi`, weighted measures, capital
//!   curves, growth rates, phase classification.
//! - [`simulator`]: the finite-n particle system.
//! - [`measures`]: empirical weighted measures, portfolio tracking, and
//!   distances between simulation and equilibrium.
//! - [`experiments`]: batch experiments combining the two sides, with
//!   reproducible manifests.
//! - [`numerics`]: adaptive quadrature, monotone grids, Wasserstein
//!   distances, log-log slope fits.
//!
//! Generic over the scalar type through [`Scalar`] (f64 throughout in
//! practice; f32 exists to make precision loss measurable).  The aliases
//! at the crate root fix F = f64.

pub mod coefficients;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod measures;
pub mod numerics;
pub mod scalar;
pub mod simulator;

pub use error::{Assumption, CoreError, Result};
pub use scalar::Scalar;

/// f64 coefficient profile.
pub type Coefficient = coefficients::CoefficientFunction<f64>;
/// f64 initial law.
pub type InitialLaw = coefficients::InitialDistribution<f64>;
/// f64 market model.
pub type Model = coefficients::MarketModel<f64>;
/// f64 equilibrium engine.
pub type Equilibrium = equilibrium::EquilibriumModel<f64>;

//! Equilibria, linear stability, fold bifurcations and time integration for
//! a size-structured population with a nonlocal birth law and a constant
//! inflow `C` of minimal-size individuals:
//!
//! ```text
//! p_t + (gamma(s, P) p)_s = -mu(s, P) p,               0 < s < m
//! gamma(0, P) p(0, t)     = C + ∫_0^m beta(s, P) p ds,   P = ∫_0^m p ds
//! ```
//!
//! The modules build on each other bottom-up: [`numerics`] provides
//! quadrature and root finding, [`model`] the vital rates, [`equilibrium`]
//! the net growth rate `Q_C` and its roots, [`spectral`] the characteristic
//! function and the stability verdicts, [`bifurcation`] the sweep in `C`,
//! and [`simulator`] the upwind time integration.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod expr;
pub mod model;
pub mod numerics;
pub mod simulator;
pub mod spectral;
pub mod study;

pub use config::{Numerics, SizeGrid};
pub use error::{Error, NumericsError, ParseError, Result};
pub use model::{builtin_example, Inflow, ModelIngredients};

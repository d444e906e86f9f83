//! Interacting-particle toolkit for McKean-Vlasov SDEs with kernel
//! coefficients.
//!
//! * [`coeffs`]: kernel coefficients, mean-field averages, mollification and
//!   sample-based hypothesis checks.
//! * [`simulate`]: Euler-Maruyama particle integration, stopping and moment
//!   diagnostics.
//! * [`sqrtlift`]: reduction of a rectangular diffusion to its symmetric root.
//! * [`girsanov`]: stochastic exponents, density-ratio bounds and the
//!   total-variation contraction.
//! * [`timechange`]: radial time change, reflected comparison process and
//!   Gaussian sup moments.
//! * [`experiment`]: config-driven runs with reproducible outputs.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod error;
pub mod experiment;
pub mod girsanov;
pub mod rng;
pub mod simulate;
pub mod sqrtlift;
pub mod stats;
pub mod timechange;

pub use error::{Error, Result};

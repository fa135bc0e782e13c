//! Numerical laboratory for rank-based interacting diffusions.
//!
//! n particles evolve as dX_i = b(F(t, X_i)) dt + sigma(F(t, X_i)) dB_i,
//! where F(t, .) is the empirical CDF of the system, so each particle's
//! coefficients depend only on its rank. The crate simulates the particle
//! system together with its mean-field coupling, solves the scaling-limit
//! PDE for the cumulative distribution R(t, x), samples the Gaussian
//! fluctuation field around the limit, and evaluates market-weight
//! observables, their hitting times, and functionally generated portfolios
//! with concentration-based performance bounds.

// `!(x > 0.0)` is the validation idiom throughout: it rejects NaN together
// with the out-of-range values, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil loops index several aligned arrays at matching offsets; explicit
// indices read better than zipped iterators there.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod fluct;
pub mod hitting;
pub mod model;
pub mod observables;
pub mod pde;
pub mod portfolio;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};

//! Entropy-regularized stochastic optimal control: soft policy iteration
//! with physics-informed neural approximators, grid-based oracles, and
//! numerical checks of the underlying error analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod optim;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod rollout;
pub mod spi;

pub use error::{Error, Result};

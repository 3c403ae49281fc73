//! Numerical toolkit for nonautonomous linear evolution equations
//! `u'(t) = (A + B(t)) u(t)` in finite dimensions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dichotomy;
pub mod error;
pub mod evofam;
pub mod examples;
pub mod linop;
pub mod metrics;
pub mod semigroup;
pub mod verify;

pub use error::{Error, Result};
pub use linop::{NormKind, Operator};

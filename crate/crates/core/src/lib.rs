// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod domain;
pub mod equipartition;
pub mod error;
pub mod experiment;
pub mod function;
pub mod gp;
pub mod klrate;
pub mod noise;
pub mod numeric;
pub mod posterior;
pub mod quadrature;
pub mod sieve;

pub use error::{Error, Result};

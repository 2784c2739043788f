//! Minimum-norm interpolators and the interpolating information criterion (IIC).

// `!(x > 0.0)` is used on purpose so that NaN lands in the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod lp;
pub mod interpolate;
pub mod iic;
pub mod oracle;
pub mod features;
pub mod experiment;

pub use error::{Error, Result};

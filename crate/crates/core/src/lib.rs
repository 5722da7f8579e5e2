// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataset;
pub mod discriminators;
pub mod dvec;
pub mod error;
pub mod mission;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};

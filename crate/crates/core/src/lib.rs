//! Continuous face aging by adversarial image-to-image translation, with the
//! pooled encoder feature split into an age magnitude and an identity
//! direction.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod networks;
pub mod training;

pub use error::{Error, Result};

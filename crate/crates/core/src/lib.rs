//! Cross-subject decoding toolkit.
//!
//! Weighted L1-penalized logistic regression, importance weighting by a
//! domain classifier, per-subject stacked generalization and a
//! leave-one-subject-out evaluation harness, plus a synthetic multi-subject
//! generator with a closed-form Bayes oracle.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN
pub mod data;
pub mod decoders;
pub mod error;
pub mod evaluation;
pub mod glm;
pub mod io;
pub mod rng;
pub mod shift;
pub mod stacking;
pub mod standardize;
pub mod synth;

pub use error::{Error, Result};

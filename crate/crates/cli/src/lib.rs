//! Command-line pipelines around `consensus-core`: synthetic sweeps, model
//! fitting, inverse inference and model comparison, all driven by a single
//! JSON config document per run.

// Validation guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`
// they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

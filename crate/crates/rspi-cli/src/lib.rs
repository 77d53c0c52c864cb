//! Experiment harness for risk-sensitive path integral control: strict JSON
//! configuration, deterministic seed derivation and CSV emission.

// negated comparisons (`!(x > 0.0)`) are deliberate NaN-rejecting guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;

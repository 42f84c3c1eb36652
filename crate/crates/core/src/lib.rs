// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod nn;
pub mod robot;
pub mod stability;

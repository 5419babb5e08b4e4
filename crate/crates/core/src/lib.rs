#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN.

//! Click-driven interactive segmentation: masks, environment, expert
//! simulator, trajectory generation, policies, self-improvement, search and
//! evaluation.

pub mod edt;
pub mod env;
pub mod error;
pub mod eval;
pub mod expert;
pub mod grammar;
pub mod improve;
pub mod mask;
pub mod pnm;
pub mod policy;
pub mod remote;
pub mod rle;
pub mod search;
pub mod seed;
pub mod segment;
pub mod sft;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};

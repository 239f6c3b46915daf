//! Minimal reverse-mode autodiff over dense f64 matrices.
//!
//! Design: parameters live in a [`ParamStore`]; each optimization sub-step
//! builds a fresh [`Tape`], runs forward through the ops it needs, calls
//! [`Tape::backward`], and applies [`adam_step`]. Freezing a parameter in the
//! store stops gradient accumulation without touching the graph code.

pub mod gradcheck;
pub mod mat;
pub mod param;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mat::{log_softmax_rows, pairwise_sq_dists, softmax_rows, Mat};
pub use param::{adam_step, AdamConfig, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Tensor};

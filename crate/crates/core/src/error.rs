//! Error type shared across the toolkit.
//!
//! Numeric contract violations (shape mismatches, non-finite values, degenerate
//! features) are hard errors everywhere: silently propagating a NaN through an
//! adversarial objective produces runs that look plausible and mean nothing.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum DirlError {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// L2 row normalization hit a (near-)zero feature vector. Downstream
    /// neighbor distributions would be meaningless, so callers abort instead.
    #[error("degenerate feature: row {row} has L2 norm {norm:.3e} (below 1e-12)")]
    DegenerateFeature { row: usize, norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke a documented precondition (empty dataset, unnormalized
    /// distribution, label out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("class {class} has only {available} candidates, {needed} required")]
    ClassShortage {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("training aborted at iteration {iteration} while computing {term}: {detail}")]
    TrainingAborted {
        iteration: usize,
        term: String,
        detail: String,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, DirlError>;

//! Domain-invariant representation learning on small dense networks.
//!
//! The toolkit trains a shared feature extractor against three kinds of
//! alignment pressure — a marginal domain discriminator, per-class conditional
//! discriminators, and a metric-style triplet distribution loss — plus plain
//! supervised cross entropy, in an alternating minimax loop. Everything runs
//! on 2D synthetic two-Gaussian scenarios designed to expose when marginal
//! alignment alone is not just insufficient but actively harmful.
//!
//! Layering, bottom up:
//! - [`autodiff`]: tape-based reverse-mode AD over dense f64 matrices
//! - [`data`]: synthetic scenario generation and CSV import/export
//! - [`nets`]: the four-network model bundle and checkpointing
//! - [`batch`]: mixed and per-class mini-batch samplers
//! - [`losses`]: the adversarial, supervised, and triplet loss terms
//! - [`trainer`]: the alternating optimization loop with mode ablations
//! - [`eval`]: accuracy, silhouette, domain probes, and exports

pub mod autodiff;
pub mod batch;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod report;
pub mod trainer;

pub use error::{DirlError, Result};

//! Training artifacts: per-iteration loss records, periodic evaluation
//! snapshots, and the final metric block. Everything is plain data so runs
//! can be compared field-for-field (the determinism guarantee is bitwise
//! equality of these records for identical config and seed).

use serde::Serialize;

use crate::autodiff::Mat;

/// Loss values of one iteration. Absent terms (masked by the training mode,
/// or a conditional step with every class skipped) are `None`, never zero:
/// a zero would be indistinguishable from a genuinely converged loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub ce: Option<f64>,
    pub marginal_disc: Option<f64>,
    pub marginal_gen: Option<f64>,
    /// Summed over the classes that actually ran this iteration.
    pub conditional_disc: Option<f64>,
    pub conditional_gen: Option<f64>,
    pub triplet: Option<f64>,
    /// The weighted generator objective minimized in the final sub-step.
    pub total: f64,
    /// Classes whose conditional step was skipped for lack of target
    /// representatives.
    pub skipped_classes: usize,
}

/// Periodic evaluation state. Probe fields are filled only when the probe
/// schedule asks for them (they train a fresh classifier and are much more
/// expensive than an accuracy pass).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSnapshot {
    pub iteration: usize,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    /// Silhouette of predicted clusters over combined (subsampled) source +
    /// target-test embeddings; `None` when predictions collapse to one class.
    pub silhouette: Option<f64>,
    pub marginal_probe: Option<f64>,
    pub conditional_probes: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub iteration: usize,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    /// Recall per class on the target test set.
    pub target_recall: Vec<f64>,
    pub silhouette: Option<f64>,
    pub silhouette_source: Option<f64>,
    pub silhouette_target: Option<f64>,
    /// Holdout accuracy of a domain classifier trained on frozen features;
    /// 0.5 means marginally indistinguishable domains.
    pub marginal_probe: Option<f64>,
    /// Same probe restricted to each class (needs true labels on both
    /// sides); `None` entries mark classes unrepresented in a domain.
    pub conditional_probes: Vec<Option<f64>>,
}

/// Everything `run_training` produces besides the trained bundle.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub records: Vec<LossRecord>,
    pub snapshots: Vec<EvalSnapshot>,
    /// Iterations actually executed (less than configured on early stop).
    pub completed_iterations: usize,
    pub early_stopped: bool,
    pub stop_reason: String,
    pub final_metrics: FinalMetrics,
    /// Parameter snapshots taken at each evaluation point (name -> values),
    /// written to disk by callers that want restartable runs.
    #[serde(skip)]
    pub checkpoints: Vec<(usize, Vec<(String, Mat)>)>,
}

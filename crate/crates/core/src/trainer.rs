//! The alternating training loop.
//!
//! Each iteration runs up to three sub-steps on its own short-lived tapes,
//! all sharing one parameter store:
//!
//!  A. domain discriminator ascent (marginal alignment modes only): D learns
//!     to tell source features from target features;
//!  B. one step per class discriminator C_k on class-matched feature batches
//!     (full objective only);
//!  C. generator + classifier descent on the weighted sum of cross entropy,
//!     discriminator confusions, and the triplet term.
//!
//! Freezing is handled through the store's trainable flags: each sub-step
//! marks exactly its own parameters trainable, so gradients from the shared
//! forward passes accumulate only where that sub-step may write. All modes
//! draw mini-batches from the same RNG stream in the same order, which makes
//! ablations differ only in which losses act, not in which data they see.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, softmax_rows, AdamConfig, Mat, ParamId, Tape};
use crate::batch::{sample_classwise_batch, sample_mixed_batch, ClassBatch, ClasswisePool, MiniBatch};
use crate::data::{select_labeled_target, DomainDataset, ScenarioDatasets};
use crate::error::{DirlError, Result};
use crate::eval::{accuracy, conditional_probe, embedding_silhouette, marginal_probe, per_class_recall, ProbeConfig};
use crate::losses::{
    conditional_disc_loss, conditional_gen_loss, marginal_disc_loss, marginal_gen_loss, supervised_ce_loss,
    total_dirl_loss, triplet_distribution_loss, GeneratorTerms, LossWeights, TripletConfig,
};
use crate::nets::{init_bundle, ModelBundle, NetConfig};
use crate::report::{EvalSnapshot, FinalMetrics, LossRecord, RunReport};

/// Which loss terms act on the generator. Every mode keeps the supervised
/// source loss; the rest build up to the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross entropy only; the no-adaptation baseline.
    SourceOnly,
    /// Cross entropy + marginal adversarial alignment.
    MarginalOnly,
    /// Cross entropy + triplet distribution loss.
    TripletOnly,
    /// The full objective: all four terms.
    Dirl,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::SourceOnly,
        TrainMode::MarginalOnly,
        TrainMode::TripletOnly,
        TrainMode::Dirl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::SourceOnly => "source_only",
            TrainMode::MarginalOnly => "marginal_only",
            TrainMode::TripletOnly => "triplet_only",
            TrainMode::Dirl => "dirl",
        }
    }

    fn uses_marginal(&self) -> bool {
        matches!(self, TrainMode::MarginalOnly | TrainMode::Dirl)
    }

    fn uses_conditional(&self) -> bool {
        matches!(self, TrainMode::Dirl)
    }

    fn uses_triplet(&self) -> bool {
        matches!(self, TrainMode::TripletOnly | TrainMode::Dirl)
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = DirlError;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DirlError::Parse(format!("unknown training mode '{s}' (expected one of source_only, marginal_only, triplet_only, dirl)")))
    }
}

/// Self-training on confident target predictions. Off by default: the 2D
/// benchmark protocol relies on the labeled few-shot examples alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub enabled: bool,
    /// Iterations before the first pseudo-label assignment.
    pub warmup_iterations: usize,
    /// Most-confident examples kept per predicted class.
    pub top_n: usize,
    /// Reassignment period after warmup.
    pub refresh_every: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            enabled: false,
            warmup_iterations: 4000,
            top_n: 50,
            refresh_every: 500,
        }
    }
}

/// Stop when target-test accuracy has not improved by `min_delta` over the
/// best seen before the last `window` iterations. Off by default: the
/// adversarial runs spend thousands of iterations on a flat 0.5 before the
/// alignment kicks in, which a plateau rule mistakes for convergence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    /// Plateau length, in iterations (rounded down to whole evaluations).
    pub window: usize,
    pub min_iterations: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            enabled: false,
            window: 2000,
            min_iterations: 6000,
            min_delta: 0.004,
        }
    }
}

/// When to run the (comparatively expensive) domain probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSchedule {
    /// Probe once on the final model.
    pub final_probes: bool,
    /// Probe at every evaluation point (slow; for diagnostics).
    pub every_eval: bool,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        ProbeSchedule {
            final_probes: true,
            every_eval: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Fraction of the target half drawn from the labeled pool. Forced to 0
    /// when no target labels survive masking, and to 1 when nothing is left
    /// unlabeled.
    pub labeled_target_fraction: f64,
    /// Labeled target examples kept per class; the rest are masked.
    pub k_shot: usize,
    /// Examples per side and class for the conditional steps; 0 means
    /// batch_size / 2 (each class discriminator sees its own half-source,
    /// half-target mini-batch of the configured size).
    pub per_class_count: usize,
    /// Include the labeled-target batch in the supervised loss (off in the
    /// benchmark protocol; the labeled examples still steer the class
    /// discriminators and the triplet term).
    pub target_labels_in_ce: bool,
    pub hidden: Vec<usize>,
    pub triplet: TripletConfig,
    pub pseudo: PseudoLabelConfig,
    pub eval_every: usize,
    pub early_stop: EarlyStopConfig,
    pub probes: ProbeSchedule,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Dirl,
            weights: LossWeights::default(),
            lr: 1e-4,
            iterations: 10_000,
            batch_size: 80,
            labeled_target_fraction: 0.25,
            k_shot: 5,
            per_class_count: 0,
            target_labels_in_ce: false,
            hidden: vec![7, 7, 7],
            triplet: TripletConfig::default(),
            pseudo: PseudoLabelConfig::default(),
            eval_every: 100,
            early_stop: EarlyStopConfig::default(),
            probes: ProbeSchedule::default(),
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.triplet.validate()?;
        self.probe.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DirlError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.iterations == 0 {
            return Err(DirlError::Config("iterations must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(DirlError::Config(format!(
                "batch_size must be positive and even, got {}",
                self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.labeled_target_fraction) {
            return Err(DirlError::Config(format!(
                "labeled_target_fraction must be in [0, 1], got {}",
                self.labeled_target_fraction
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DirlError::Config("hidden widths must be non-empty and positive".into()));
        }
        if self.eval_every == 0 {
            return Err(DirlError::Config("eval_every must be positive".into()));
        }
        if self.pseudo.enabled && (self.pseudo.top_n == 0 || self.pseudo.refresh_every == 0) {
            return Err(DirlError::Config(
                "pseudo-labeling needs positive top_n and refresh_every".into(),
            ));
        }
        if self.early_stop.enabled {
            if self.early_stop.window == 0 {
                return Err(DirlError::Config("early-stop window must be positive".into()));
            }
            if !(self.early_stop.min_delta.is_finite() && self.early_stop.min_delta >= 0.0) {
                return Err(DirlError::Config(format!(
                    "early-stop min_delta must be non-negative, got {}",
                    self.early_stop.min_delta
                )));
            }
        }
        Ok(())
    }
}

/// Derives purpose-specific seeds from the run seed, so that e.g. the label
/// mask does not shift when the batch stream is consumed differently.
fn salted(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const SALT_KSHOT: u64 = 1;
const SALT_INIT: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_CLASSWISE: u64 = 4;
const SALT_PROBE: u64 = 5;
const SALT_SILHOUETTE: u64 = 6;

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub report: RunReport,
}

fn abort(iteration: usize, term: &'static str, err: DirlError, bundle: &ModelBundle) -> DirlError {
    DirlError::TrainingAborted {
        iteration,
        term: term.to_string(),
        detail: format!("{err}; param norms: {}", bundle.store.norm_summary()),
    }
}

/// Confident predictions on the unlabeled target pool: per predicted class,
/// the `top_n` examples with the highest softmax confidence (ties broken by
/// dataset index, for determinism). Classes the model never predicts simply
/// contribute nothing.
pub fn assign_pseudo_labels(bundle: &ModelBundle, target: &DomainDataset, top_n: usize) -> Result<(Mat, Vec<usize>)> {
    let pool = target.unlabeled_indices();
    let dim = target.feature_dim();
    if pool.is_empty() {
        return Ok((Mat::zeros(0, dim), Vec::new()));
    }
    let x = target.features_of(&pool)?;
    let probs = softmax_rows(&bundle.eval_class_logits(&x)?);
    // (confidence, dataset index, row in x) per predicted class.
    let mut by_class: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); bundle.num_classes()];
    for (row, &idx) in pool.iter().enumerate() {
        let p = probs.row(row);
        let mut best = 0;
        for (j, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = j;
            }
        }
        by_class[best].push((p[best], idx, row));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, mut entries) in by_class.into_iter().enumerate() {
        entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (_, _, row) in entries.into_iter().take(top_n) {
            rows.push(x.row(row).to_vec());
            labels.push(class);
        }
    }
    if rows.is_empty() {
        return Ok((Mat::zeros(0, dim), Vec::new()));
    }
    Ok((Mat::from_rows(&rows)?, labels))
}

/// Rebuilds the conditional-step target pool from the labeled examples plus
/// the current pseudo-labeled set.
fn build_classwise_pool(target: &DomainDataset, pseudo: Option<&(Mat, Vec<usize>)>) -> ClasswisePool {
    let mut pool = ClasswisePool::from_dataset(target);
    if let Some((x, y)) = pseudo {
        for (row, &class) in y.iter().enumerate() {
            pool.push(class, x.row(row).to_vec());
        }
    }
    pool
}

struct StepOutcome {
    marginal_disc: Option<f64>,
    conditional_disc: Option<f64>,
    skipped_classes: usize,
}

/// One domain-discriminator ascent step (sub-step A).
fn discriminator_step(
    bundle: &mut ModelBundle,
    batch: &MiniBatch,
    adam: &AdamConfig,
) -> Result<f64> {
    let ids = bundle.domain_disc_params();
    bundle.train_only(&ids);
    let mut tape = Tape::new();
    let xs = tape.constant(batch.source_x.clone())?;
    let xt = tape.constant(batch.target_x()?)?;
    let fs = bundle.features(&mut tape, xs)?;
    let ft = bundle.features(&mut tape, xt)?;
    let ls = bundle.discriminate_domain(&mut tape, fs)?;
    let lt = bundle.discriminate_domain(&mut tape, ft)?;
    let loss = marginal_disc_loss(&mut tape, ls, lt)?;
    tape.backward(loss, &mut bundle.store)?;
    adam_step(&mut bundle.store, &ids, adam)?;
    Ok(tape.scalar_value(loss))
}

/// Per-class discriminator steps (sub-step B). Returns the summed loss over
/// the classes that ran, or `None` when every class was skipped.
fn class_discriminator_steps(
    bundle: &mut ModelBundle,
    class_batch: &ClassBatch,
    adam: &AdamConfig,
) -> Result<Option<f64>> {
    let mut total = None;
    for pair in &class_batch.pairs {
        let ids = bundle.class_disc_params(pair.class);
        bundle.train_only(&ids);
        let mut tape = Tape::new();
        let xs = tape.constant(pair.source_x.clone())?;
        let xt = tape.constant(pair.target_x.clone())?;
        let fs = bundle.features(&mut tape, xs)?;
        let ft = bundle.features(&mut tape, xt)?;
        let ls = bundle.discriminate_class(&mut tape, pair.class, fs)?;
        let lt = bundle.discriminate_class(&mut tape, pair.class, ft)?;
        let loss = conditional_disc_loss(&mut tape, ls, lt)?;
        tape.backward(loss, &mut bundle.store)?;
        adam_step(&mut bundle.store, &ids, adam)?;
        *total.get_or_insert(0.0) += tape.scalar_value(loss);
    }
    Ok(total)
}

struct GeneratorOutcome {
    ce: f64,
    marginal_gen: Option<f64>,
    conditional_gen: Option<f64>,
    triplet: Option<f64>,
    total: f64,
}

/// Generator + classifier descent (sub-step C). Every term runs its own
/// forward pass through g on the shared tape; the per-parameter gradients
/// sum across passes exactly as they would for one stacked input.
fn generator_step(
    bundle: &mut ModelBundle,
    batch: &MiniBatch,
    class_batch: Option<&ClassBatch>,
    cfg: &TrainConfig,
    adam: &AdamConfig,
) -> Result<GeneratorOutcome> {
    let mut gen_ids: Vec<ParamId> = bundle.generator_params();
    gen_ids.extend(bundle.classifier_params());
    bundle.train_only(&gen_ids);

    let mut tape = Tape::new();
    let mut terms = GeneratorTerms::default();

    // Supervised term, always present.
    let xs = tape.constant(batch.source_x.clone())?;
    let fs = bundle.features(&mut tape, xs)?;
    let source_logits = bundle.classify(&mut tape, fs)?;
    let labeled_target = if cfg.target_labels_in_ce && !batch.labeled_target_x.is_empty() {
        let xt = tape.constant(batch.labeled_target_x.clone())?;
        let ft = bundle.features(&mut tape, xt)?;
        Some((bundle.classify(&mut tape, ft)?, batch.labeled_target_y.as_slice()))
    } else {
        None
    };
    terms.ce = Some(supervised_ce_loss(&mut tape, source_logits, &batch.source_y, labeled_target)?);

    // Marginal confusion: push target features toward the discriminator's
    // "source" verdict. D's parameters are frozen here, so the gradient
    // flows through it into g.
    if cfg.mode.uses_marginal() {
        let xt = tape.constant(batch.target_x()?)?;
        let ft = bundle.features(&mut tape, xt)?;
        let lt = bundle.discriminate_domain(&mut tape, ft)?;
        terms.marginal = Some(marginal_gen_loss(&mut tape, lt)?);
    }

    // Conditional confusion, summed over the classes that have a batch.
    if let Some(cb) = class_batch {
        let mut sum = None;
        for pair in &cb.pairs {
            let xt = tape.constant(pair.target_x.clone())?;
            let ft = bundle.features(&mut tape, xt)?;
            let lt = bundle.discriminate_class(&mut tape, pair.class, ft)?;
            let gen_k = conditional_gen_loss(&mut tape, lt)?;
            sum = Some(match sum {
                Some(acc) => tape.add(acc, gen_k)?,
                None => gen_k,
            });
        }
        terms.conditional = sum;
    }

    // Triplet term over everything that carries a label. Examples whose
    // features have died (every ReLU off, so the row cannot be normalized
    // and carries no geometry) are dropped from the pool for this iteration
    // rather than aborting the run.
    if cfg.mode.uses_triplet() {
        let (pool_x, pool_y) = batch.triplet_pool()?;
        let feats = bundle.eval_features(&pool_x)?;
        let alive: Vec<usize> = (0..feats.rows())
            .filter(|&r| feats.row(r).iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-9)
            .collect();
        if alive.len() < pool_x.rows() {
            log::debug!(
                "triplet pool: dropping {} dead-feature rows of {}",
                pool_x.rows() - alive.len(),
                pool_x.rows()
            );
        }
        if alive.len() >= 2 {
            let rows: Vec<Vec<f64>> = alive.iter().map(|&r| pool_x.row(r).to_vec()).collect();
            let labels: Vec<usize> = alive.iter().map(|&r| pool_y[r]).collect();
            let xp = tape.constant(Mat::from_rows(&rows)?)?;
            let fp = bundle.features(&mut tape, xp)?;
            let out = triplet_distribution_loss(&mut tape, fp, &labels, &cfg.triplet)?;
            terms.triplet = Some(out.loss);
        }
    }

    let total = total_dirl_loss(&mut tape, &terms, &cfg.weights)?;
    tape.backward(total, &mut bundle.store)?;
    adam_step(&mut bundle.store, &gen_ids, adam)?;

    Ok(GeneratorOutcome {
        ce: tape.scalar_value(terms.ce.expect("ce term always present")),
        marginal_gen: terms.marginal.map(|t| tape.scalar_value(t)),
        conditional_gen: terms.conditional.map(|t| tape.scalar_value(t)),
        triplet: terms.triplet.map(|t| tape.scalar_value(t)),
        total: tape.scalar_value(total),
    })
}

fn snapshot_params(bundle: &ModelBundle) -> Vec<(String, Mat)> {
    bundle
        .store
        .ids()
        .iter()
        .map(|id| {
            let p = bundle.store.get(*id);
            (p.name.clone(), p.value.clone())
        })
        .collect()
}

/// Plateau test over the recorded target accuracies: true when the best of
/// the last `window_snaps` evaluations beats the best before them by less
/// than `min_delta`.
fn plateaued(accs: &[f64], window_snaps: usize, min_delta: f64) -> bool {
    if accs.len() <= window_snaps {
        return false;
    }
    let split = accs.len() - window_snaps;
    let best = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best(&accs[split..]) <= best(&accs[..split]) + min_delta
}

/// Trains one model under the given mode and protocol. `data.target_train`
/// must carry its true labels; the k-shot mask is applied here so that every
/// mode and seed derives the same labeled subset from the same draw.
/// Builds the model bundle exactly as `run_training` would for this data and
/// config: same architecture, same salted init seed. Loading a checkpoint
/// into the result reproduces a trained model for offline evaluation.
pub fn init_training_bundle(data: &ScenarioDatasets, cfg: &TrainConfig) -> Result<ModelBundle> {
    init_bundle(&NetConfig {
        input_dim: data.source.feature_dim(),
        hidden: cfg.hidden.clone(),
        num_classes: data.source.num_classes,
        seed: salted(cfg.seed, SALT_INIT),
    })
}

/// The full final-metrics block for a trained bundle: accuracies, per-class
/// recall, silhouettes over the complete point sets, and (optionally) the
/// domain probes. Seed derivations match `run_training`, so re-evaluating a
/// reloaded checkpoint reproduces the metrics its run reported.
pub fn evaluate_bundle(
    bundle: &ModelBundle,
    data: &ScenarioDatasets,
    cfg: &TrainConfig,
    iteration: usize,
    with_probes: bool,
) -> Result<FinalMetrics> {
    let probe_cfg = ProbeConfig {
        seed: salted(cfg.seed, SALT_PROBE),
        ..cfg.probe.clone()
    };
    let silhouette_seed = salted(cfg.seed, SALT_SILHOUETTE);
    let all_points = data.source.len() + data.target_test.len();
    let (marginal_probe_acc, conditional_probes) = if with_probes {
        let m = marginal_probe(bundle, &data.source, &data.target_train, &probe_cfg)?;
        let c = conditional_probe(bundle, &data.source, &data.target_train, &probe_cfg)?;
        (Some(m), c)
    } else {
        (None, vec![None; data.source.num_classes])
    };
    Ok(FinalMetrics {
        iteration,
        source_accuracy: accuracy(bundle, &data.source)?,
        target_accuracy: accuracy(bundle, &data.target_test)?,
        target_recall: per_class_recall(bundle, &data.target_test)?,
        silhouette: embedding_silhouette(bundle, &[&data.source, &data.target_test], all_points, silhouette_seed)?,
        silhouette_source: embedding_silhouette(bundle, &[&data.source], data.source.len(), silhouette_seed)?,
        silhouette_target: embedding_silhouette(bundle, &[&data.target_test], data.target_test.len(), silhouette_seed)?,
        marginal_probe: marginal_probe_acc,
        conditional_probes,
    })
}

pub fn run_training(data: &ScenarioDatasets, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.source.validate()?;
    data.target_train.validate()?;
    data.target_test.validate()?;
    if data.source.num_classes != data.target_train.num_classes {
        return Err(DirlError::Contract(format!(
            "source has {} classes, target {}",
            data.source.num_classes, data.target_train.num_classes
        )));
    }

    let target = select_labeled_target(&data.target_train, cfg.k_shot, salted(cfg.seed, SALT_KSHOT))?;
    let labeled_fraction = if target.labeled_indices().is_empty() {
        0.0
    } else if target.unlabeled_indices().is_empty() {
        1.0
    } else {
        cfg.labeled_target_fraction
    };
    if labeled_fraction != cfg.labeled_target_fraction {
        log::info!(
            "labeled_target_fraction forced to {labeled_fraction} ({} labeled / {} unlabeled target examples)",
            target.labeled_indices().len(),
            target.unlabeled_indices().len()
        );
    }

    let mut bundle = init_training_bundle(data, cfg)?;
    let adam = AdamConfig::with_lr(cfg.lr);

    let per_class_count = if cfg.per_class_count == 0 {
        (cfg.batch_size / 2).max(1)
    } else {
        cfg.per_class_count
    };

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(STREAM_BATCH);
    let mut classwise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    classwise_rng.set_stream(STREAM_CLASSWISE);
    let probe_cfg = ProbeConfig {
        seed: salted(cfg.seed, SALT_PROBE),
        ..cfg.probe.clone()
    };
    let silhouette_seed = salted(cfg.seed, SALT_SILHOUETTE);

    let mut pseudo_state: Option<(Mat, Vec<usize>)> = None;
    let mut classwise_pool = build_classwise_pool(&target, None);

    let mut records: Vec<LossRecord> = Vec::with_capacity(cfg.iterations);
    let mut snapshots: Vec<EvalSnapshot> = Vec::new();
    let mut checkpoints: Vec<(usize, Vec<(String, Mat)>)> = Vec::new();
    let mut acc_trace: Vec<f64> = Vec::new();
    let mut early_stopped = false;
    let mut stop_reason = String::from("completed all iterations");
    let mut completed = 0;

    let window_snaps = (cfg.early_stop.window / cfg.eval_every).max(1);
    let eval_points = |it: usize| it % cfg.eval_every == 0 || it == cfg.iterations;

    for it in 1..=cfg.iterations {
        // Refresh pseudo-labels on schedule (first assignment right after
        // warmup, then every refresh_every iterations).
        if cfg.pseudo.enabled && it > cfg.pseudo.warmup_iterations {
            let since = it - cfg.pseudo.warmup_iterations - 1;
            if since % cfg.pseudo.refresh_every == 0 {
                let assigned = assign_pseudo_labels(&bundle, &target, cfg.pseudo.top_n)
                    .map_err(|e| abort(it, "pseudo_labels", e, &bundle))?;
                log::debug!("iteration {it}: {} pseudo-labels assigned", assigned.1.len());
                pseudo_state = Some(assigned);
                classwise_pool = build_classwise_pool(&target, pseudo_state.as_ref());
            }
        }

        let mut batch = sample_mixed_batch(&data.source, &target, cfg.batch_size, labeled_fraction, &mut batch_rng)
            .map_err(|e| abort(it, "batch", e, &bundle))?;
        if let Some((x, y)) = &pseudo_state {
            if !y.is_empty() {
                batch
                    .attach_pseudo(x.clone(), y.clone())
                    .map_err(|e| abort(it, "batch", e, &bundle))?;
            }
        }
        let class_batch = if cfg.mode.uses_conditional() {
            Some(
                sample_classwise_batch(&data.source, &classwise_pool, per_class_count, &mut classwise_rng)
                    .map_err(|e| abort(it, "class_batch", e, &bundle))?,
            )
        } else {
            None
        };

        let step = StepOutcome {
            marginal_disc: if cfg.mode.uses_marginal() {
                Some(discriminator_step(&mut bundle, &batch, &adam).map_err(|e| abort(it, "marginal_disc", e, &bundle))?)
            } else {
                None
            },
            conditional_disc: match &class_batch {
                Some(cb) => class_discriminator_steps(&mut bundle, cb, &adam)
                    .map_err(|e| abort(it, "conditional_disc", e, &bundle))?,
                None => None,
            },
            skipped_classes: class_batch.as_ref().map_or(0, |cb| cb.skipped.len()),
        };

        let gen = generator_step(&mut bundle, &batch, class_batch.as_ref(), cfg, &adam)
            .map_err(|e| abort(it, "generator", e, &bundle))?;

        records.push(LossRecord {
            iteration: it,
            ce: Some(gen.ce),
            marginal_disc: step.marginal_disc,
            marginal_gen: gen.marginal_gen,
            conditional_disc: step.conditional_disc,
            conditional_gen: gen.conditional_gen,
            triplet: gen.triplet,
            total: gen.total,
            skipped_classes: step.skipped_classes,
        });
        completed = it;

        if eval_points(it) {
            let source_accuracy = accuracy(&bundle, &data.source).map_err(|e| abort(it, "eval", e, &bundle))?;
            let target_accuracy = accuracy(&bundle, &data.target_test).map_err(|e| abort(it, "eval", e, &bundle))?;
            let silhouette = embedding_silhouette(&bundle, &[&data.source, &data.target_test], 600, silhouette_seed)
                .map_err(|e| abort(it, "eval", e, &bundle))?;
            let (marginal, conditional) = if cfg.probes.every_eval {
                let m = marginal_probe(&bundle, &data.source, &data.target_train, &probe_cfg)
                    .map_err(|e| abort(it, "probe", e, &bundle))?;
                let c = conditional_probe(&bundle, &data.source, &data.target_train, &probe_cfg)
                    .map_err(|e| abort(it, "probe", e, &bundle))?;
                (Some(m), Some(c))
            } else {
                (None, None)
            };
            snapshots.push(EvalSnapshot {
                iteration: it,
                source_accuracy,
                target_accuracy,
                silhouette,
                marginal_probe: marginal,
                conditional_probes: conditional,
            });
            checkpoints.push((it, snapshot_params(&bundle)));
            acc_trace.push(target_accuracy);

            if cfg.early_stop.enabled
                && it >= cfg.early_stop.min_iterations
                && plateaued(&acc_trace, window_snaps, cfg.early_stop.min_delta)
            {
                early_stopped = true;
                stop_reason = format!(
                    "target accuracy plateaued: best of last {window_snaps} evaluations within {} of prior best",
                    cfg.early_stop.min_delta
                );
                log::info!("stopping at iteration {it}: {stop_reason}");
                break;
            }
        }
    }

    // Leave the bundle in a clean state for whoever uses it next.
    bundle.store.set_all_trainable(true);

    let final_metrics = evaluate_bundle(&bundle, data, cfg, completed, cfg.probes.final_probes)
        .map_err(|e| abort(completed, "final_eval", e, &bundle))?;

    Ok(TrainOutcome {
        bundle,
        report: RunReport {
            mode: cfg.mode.to_string(),
            records,
            snapshots,
            completed_iterations: completed,
            early_stopped,
            stop_reason,
            final_metrics,
            checkpoints,
        },
    })
}

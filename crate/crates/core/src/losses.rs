//! The loss terms of the joint alignment objective.
//!
//! Domain adversarial convention: discriminators emit two logits with index 0
//! = source, 1 = target. A discriminator minimizes cross entropy against the
//! true domain; the generator minimizes cross entropy of *target* features
//! against the source label — the non-saturating confusion form, which keeps
//! gradients alive when the discriminator is winning. The conditional
//! (per-class) losses are the same two kernels applied to class-filtered
//! batches against that class's own discriminator, so marginal and
//! conditional losses agree bitwise on identical inputs by construction.
//!
//! The triplet distribution loss is metric-style alignment without any
//! discriminator: each example's "neighbor distribution" is a softmax over
//! negated scaled squared distances to the whole batch in L2-normalized
//! feature space, and anchors are pushed to have small KL to same-class
//! neighbors and large KL to other-class ones, hinged at a margin.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Tensor};
use crate::error::{DirlError, Result};

/// Weights of the generator-side objective. The discriminator steps are
/// separate minimizations and take no weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ce: f64,
    pub lambda_marginal: f64,
    pub lambda_conditional: f64,
    pub lambda_triplet: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ce: 1.0,
            lambda_marginal: 1.0,
            lambda_conditional: 1.0,
            lambda_triplet: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ce", self.lambda_ce),
            ("lambda_marginal", self.lambda_marginal),
            ("lambda_conditional", self.lambda_conditional),
            ("lambda_triplet", self.lambda_triplet),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DirlError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletConfig {
    /// Hinge margin between positive and negative mean divergences.
    pub margin: f64,
    /// Bandwidth of the neighbor softmax (divides squared distances).
    pub sigma_sq: f64,
    /// Drop the anchor itself from its neighbor distribution. Off by
    /// default: the self term is shared by every distribution in the batch
    /// and mostly cancels in the KL differences.
    pub exclude_anchor: bool,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: 1.0,
            sigma_sq: 0.5,
            exclude_anchor: false,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(DirlError::Config(format!(
                "triplet margin must be non-negative, got {}",
                self.margin
            )));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq > 0.0) {
            return Err(DirlError::Config(format!(
                "triplet sigma_sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        Ok(())
    }
}

fn expect_logits(name: &'static str, t: Tensor) -> Result<()> {
    if t.cols != 2 {
        return Err(DirlError::ShapeMismatch {
            op: name,
            left_rows: t.rows,
            left_cols: t.cols,
            right_rows: t.rows,
            right_cols: 2,
        });
    }
    if t.rows == 0 {
        return Err(DirlError::Contract(format!("{name}: empty batch")));
    }
    Ok(())
}

/// Discriminator objective: classify source features as 0 and target
/// features as 1.
fn adversarial_disc_kernel(tape: &mut Tape, source_logits: Tensor, target_logits: Tensor) -> Result<Tensor> {
    expect_logits("adversarial_disc", source_logits)?;
    expect_logits("adversarial_disc", target_logits)?;
    let src_logp = tape.log_softmax(source_logits)?;
    let src_nll = tape.nll_mean(src_logp, &vec![0; source_logits.rows])?;
    let tgt_logp = tape.log_softmax(target_logits)?;
    let tgt_nll = tape.nll_mean(tgt_logp, &vec![1; target_logits.rows])?;
    tape.add(src_nll, tgt_nll)
}

/// Generator confusion objective: make *target* features look like source
/// (label 0) to the discriminator. Non-saturating: this is cross entropy
/// against the inverted label, not the negated discriminator loss.
fn adversarial_gen_kernel(tape: &mut Tape, target_logits: Tensor) -> Result<Tensor> {
    expect_logits("adversarial_gen", target_logits)?;
    let logp = tape.log_softmax(target_logits)?;
    tape.nll_mean(logp, &vec![0; target_logits.rows])
}

/// Marginal domain discriminator loss over the full source/target halves.
pub fn marginal_disc_loss(tape: &mut Tape, source_logits: Tensor, target_logits: Tensor) -> Result<Tensor> {
    adversarial_disc_kernel(tape, source_logits, target_logits)
}

/// Marginal confusion loss for the generator.
pub fn marginal_gen_loss(tape: &mut Tape, target_logits: Tensor) -> Result<Tensor> {
    adversarial_gen_kernel(tape, target_logits)
}

/// Class-k discriminator loss; `source_logits`/`target_logits` must come
/// from class-k examples pushed through discriminator C_k. Identical kernel
/// to the marginal loss, on purpose.
pub fn conditional_disc_loss(tape: &mut Tape, source_logits: Tensor, target_logits: Tensor) -> Result<Tensor> {
    adversarial_disc_kernel(tape, source_logits, target_logits)
}

/// Class-k confusion loss for the generator.
pub fn conditional_gen_loss(tape: &mut Tape, target_logits: Tensor) -> Result<Tensor> {
    adversarial_gen_kernel(tape, target_logits)
}

/// Supervised cross entropy: the source batch mean, plus the labeled-target
/// batch mean when that protocol is enabled (the 2D benchmark trains with
/// source labels only and uses labeled target examples in the alignment
/// losses instead).
pub fn supervised_ce_loss(
    tape: &mut Tape,
    source_logits: Tensor,
    source_labels: &[usize],
    labeled_target: Option<(Tensor, &[usize])>,
) -> Result<Tensor> {
    let src_logp = tape.log_softmax(source_logits)?;
    let src = tape.nll_mean(src_logp, source_labels)?;
    match labeled_target {
        Some((logits, labels)) => {
            let tgt_logp = tape.log_softmax(logits)?;
            let tgt = tape.nll_mean(tgt_logp, labels)?;
            tape.add(src, tgt)
        }
        None => Ok(src),
    }
}

/// Reference (non-tape) neighbor distribution of one anchor: softmax over
/// -||z_a - z_i||^2 / sigma_sq across the whole batch, the anchor's own
/// (zero-distance) entry included unless `exclude_anchor`.
pub fn neighbor_distribution(
    features_norm: &Mat,
    anchor: usize,
    cfg: &TripletConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let m = features_norm.rows();
    if m < 2 {
        return Err(DirlError::Contract(format!(
            "neighbor_distribution needs at least 2 rows, got {m}"
        )));
    }
    if anchor >= m {
        return Err(DirlError::Contract(format!("anchor {anchor} out of range for {m} rows")));
    }
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut d = 0.0;
        for (a, b) in features_norm.row(anchor).iter().zip(features_norm.row(i)) {
            d += (a - b) * (a - b);
        }
        let mut s = -d / cfg.sigma_sq;
        if cfg.exclude_anchor && i == anchor {
            s = f64::NEG_INFINITY;
        }
        scores.push(s);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// KL(p || q) for categorical distributions. Both must be normalized within
/// 1e-6; a zero q entry under p-mass is undefined and rejected.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(DirlError::Contract(format!(
            "kl_categorical: lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DirlError::Contract(format!("kl_categorical: {name} has invalid entries")));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(DirlError::Contract(format!(
                "kl_categorical: {name} sums to {sum}, expected 1"
            )));
        }
    }
    let mut acc = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi == 0.0 {
            continue;
        }
        if *qi == 0.0 {
            return Err(DirlError::Contract(
                "kl_categorical: q is zero where p has mass".into(),
            ));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

/// The triplet loss node plus bookkeeping about which anchors took part.
#[derive(Debug)]
pub struct TripletOutput {
    pub loss: Tensor,
    /// Anchors with at least one same-class companion.
    pub active_anchors: usize,
    /// Anchors masked out for lack of positives.
    pub skipped_anchors: usize,
}

/// Triplet distribution loss over a labeled feature batch.
///
/// Features are L2-row-normalized internally (so the loss is exactly
/// invariant to positive rescaling of its input), each row gets a neighbor
/// distribution q_a over the batch, and every anchor contributes
///
///   max(0, mean_p KL(q_a || q_p) - mean_n KL(q_a || q_n) + margin)
///
/// with p ranging over same-class rows (anchor excluded) and n over
/// other-class rows. The total is the sum over contributing anchors. Anchors
/// without a positive are masked; a single-class batch has no negatives at
/// all and yields a zero loss with a warning rather than an error, because
/// small few-shot batches can legitimately collapse to one class.
pub fn triplet_distribution_loss(
    tape: &mut Tape,
    features: Tensor,
    labels: &[usize],
    cfg: &TripletConfig,
) -> Result<TripletOutput> {
    cfg.validate()?;
    let m = features.rows;
    if labels.len() != m {
        return Err(DirlError::Contract(format!(
            "triplet_distribution_loss: {} labels for {} rows",
            labels.len(),
            m
        )));
    }
    if m < 2 {
        return Err(DirlError::Contract(format!(
            "triplet_distribution_loss needs at least 2 rows, got {m}"
        )));
    }
    let distinct = {
        let first = labels[0];
        labels.iter().any(|y| *y != first)
    };
    if !distinct {
        log::warn!("triplet batch contains a single class; contributing zero loss");
        return Ok(TripletOutput {
            loss: tape.scalar(0.0)?,
            active_anchors: 0,
            skipped_anchors: m,
        });
    }

    // Pair weights: +1/|positives| and -1/|negatives| per anchor row, zero
    // elsewhere; anchors without positives get an all-zero row and a zero
    // mask entry.
    let mut weights = Mat::zeros(m, m);
    let mut mask = Mat::zeros(m, 1);
    let mut active = 0usize;
    for a in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&i| i != a && labels[i] == labels[a]).collect();
        let negatives: Vec<usize> = (0..m).filter(|&i| labels[i] != labels[a]).collect();
        if positives.is_empty() {
            continue;
        }
        for &p in &positives {
            weights.set(a, p, 1.0 / positives.len() as f64);
        }
        for &n in &negatives {
            weights.set(a, n, -1.0 / negatives.len() as f64);
        }
        mask.set(a, 0, 1.0);
        active += 1;
    }

    let z = tape.l2_normalize_rows(features)?;
    let dists = tape.pairwise_sq_dist(z)?;
    let mut scores = tape.scale(dists, -1.0 / cfg.sigma_sq)?;
    if cfg.exclude_anchor {
        // A huge diagonal penalty underflows the anchor's own softmax weight
        // to exactly zero while keeping log-space values finite.
        let mut diag = Mat::zeros(m, m);
        for i in 0..m {
            diag.set(i, i, -1e6);
        }
        let diag = tape.constant(diag)?;
        scores = tape.add(scores, diag)?;
    }
    let logq = tape.log_softmax(scores)?;
    let kl = tape.pairwise_kl_from_log(logq)?;
    let weighted = tape.elem_mul_const(kl, weights)?;
    let per_anchor = tape.row_sum(weighted)?;
    let with_margin = tape.add_scalar(per_anchor, cfg.margin)?;
    let masked = tape.elem_mul_const(with_margin, mask)?;
    let hinged = tape.relu(masked)?;
    let loss = tape.sum_all(hinged)?;
    Ok(TripletOutput {
        loss,
        active_anchors: active,
        skipped_anchors: m - active,
    })
}

/// The generator-side terms that exist for the current mode; absent terms
/// are simply skipped in the weighted total.
#[derive(Debug, Default, Clone, Copy)]
pub struct GeneratorTerms {
    pub ce: Option<Tensor>,
    pub marginal: Option<Tensor>,
    pub conditional: Option<Tensor>,
    pub triplet: Option<Tensor>,
}

/// Weighted sum of the present generator terms:
/// lambda_ce * CE + lambda_marginal * confusion + lambda_conditional * sum_k
/// class confusion + lambda_triplet * triplet. All zero weights (or no terms)
/// give an exact zero.
pub fn total_dirl_loss(tape: &mut Tape, terms: &GeneratorTerms, weights: &LossWeights) -> Result<Tensor> {
    weights.validate()?;
    let parts = [
        (terms.ce, weights.lambda_ce),
        (terms.marginal, weights.lambda_marginal),
        (terms.conditional, weights.lambda_conditional),
        (terms.triplet, weights.lambda_triplet),
    ];
    let mut total: Option<Tensor> = None;
    for (term, weight) in parts {
        if let Some(t) = term {
            if t.rows != 1 || t.cols != 1 {
                return Err(DirlError::Contract(format!(
                    "total_dirl_loss: term is {}x{}, expected scalar",
                    t.rows, t.cols
                )));
            }
            let scaled = tape.scale(t, weight)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, scaled)?,
                None => scaled,
            });
        }
    }
    match total {
        Some(t) => Ok(t),
        None => tape.scalar(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamStore};

    const LN2: f64 = std::f64::consts::LN_2;

    fn logits(tape: &mut Tape, rows: &[[f64; 2]]) -> Tensor {
        let data: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        tape.constant(Mat::from_rows(&data).unwrap()).unwrap()
    }

    #[test]
    fn uninformative_discriminator_scores_two_ln_two() {
        let mut tape = Tape::new();
        let src = logits(&mut tape, &[[0.0, 0.0], [0.0, 0.0]]);
        let tgt = logits(&mut tape, &[[0.0, 0.0]]);
        let loss = marginal_disc_loss(&mut tape, src, tgt).unwrap();
        assert!((tape.scalar_value(loss) - 2.0 * LN2).abs() < 1e-15);
        let gen = marginal_gen_loss(&mut tape, tgt).unwrap();
        assert!((tape.scalar_value(gen) - LN2).abs() < 1e-15);
    }

    #[test]
    fn confident_discriminator_flips_the_two_losses() {
        let mut tape = Tape::new();
        let src = logits(&mut tape, &[[10.0, -10.0]]);
        let tgt = logits(&mut tape, &[[-10.0, 10.0]]);
        let disc = marginal_disc_loss(&mut tape, src, tgt).unwrap();
        assert!(tape.scalar_value(disc) < 1e-8);
        let gen = marginal_gen_loss(&mut tape, tgt).unwrap();
        assert!((tape.scalar_value(gen) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn conditional_kernels_match_marginal_bitwise() {
        let rows_s = [[0.3, -1.2], [2.0, 0.1], [-0.5, 0.5]];
        let rows_t = [[1.1, 0.4], [-0.2, -0.9]];
        let mut tape = Tape::new();
        let (s1, t1) = (logits(&mut tape, &rows_s), logits(&mut tape, &rows_t));
        let marginal = marginal_disc_loss(&mut tape, s1, t1).unwrap();
        let (s2, t2) = (logits(&mut tape, &rows_s), logits(&mut tape, &rows_t));
        let conditional = conditional_disc_loss(&mut tape, s2, t2).unwrap();
        assert_eq!(tape.scalar_value(marginal).to_bits(), tape.scalar_value(conditional).to_bits());

        let g1 = marginal_gen_loss(&mut tape, t1).unwrap();
        let g2 = conditional_gen_loss(&mut tape, t2).unwrap();
        assert_eq!(tape.scalar_value(g1).to_bits(), tape.scalar_value(g2).to_bits());
    }

    #[test]
    fn supervised_ce_sums_source_and_target_means() {
        let mut tape = Tape::new();
        let src = logits(&mut tape, &[[0.0, 0.0], [0.0, 0.0]]);
        let src_only = supervised_ce_loss(&mut tape, src, &[0, 1], None).unwrap();
        assert!((tape.scalar_value(src_only) - LN2).abs() < 1e-15);

        let tgt = logits(&mut tape, &[[0.0, 0.0]]);
        let both = supervised_ce_loss(&mut tape, src, &[0, 1], Some((tgt, &[1]))).unwrap();
        assert!((tape.scalar_value(both) - 2.0 * LN2).abs() < 1e-15);
    }

    #[test]
    fn kl_categorical_matches_closed_form_and_validates() {
        let p = [0.5, 0.5];
        let q = [0.75, 0.25];
        let expect = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        let got = kl_categorical(&p, &q).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.14384103622589045).abs() < 1e-15);
        assert_eq!(kl_categorical(&p, &p).unwrap(), 0.0);

        assert!(kl_categorical(&[0.5, 0.6], &q).is_err());
        assert!(kl_categorical(&p, &[1.0]).is_err());
        assert!(kl_categorical(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn neighbor_distribution_two_points_closed_form() {
        let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cfg = TripletConfig::default();
        let q = neighbor_distribution(&z, 0, &cfg).unwrap();
        // Squared distance between the unit vectors is 2; scores are 0 and
        // -2 / sigma_sq.
        let e = (-2.0 / cfg.sigma_sq).exp();
        assert!((q[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((q[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighbor_distribution_flattens_to_uniform_for_huge_bandwidth() {
        let z = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.6, 0.8],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let cfg = TripletConfig {
            sigma_sq: 1e12,
            ..Default::default()
        };
        let q = neighbor_distribution(&z, 2, &cfg).unwrap();
        for v in &q {
            assert!((v - 0.25).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn tape_neighbor_rows_match_reference_implementation() {
        // The triplet pipeline's log_softmax rows must agree with the
        // standalone neighbor_distribution to floating-point accuracy.
        let feats = Mat::from_rows(&[
            vec![0.9, 0.3, 0.1],
            vec![-0.2, 1.4, 0.5],
            vec![0.4, -0.6, 1.0],
        ])
        .unwrap();
        let cfg = TripletConfig::default();
        let mut tape = Tape::new();
        let x = tape.constant(feats.clone()).unwrap();
        let z = tape.l2_normalize_rows(x).unwrap();
        let d = tape.pairwise_sq_dist(z).unwrap();
        let s = tape.scale(d, -1.0 / cfg.sigma_sq).unwrap();
        let logq = tape.log_softmax(s).unwrap();
        let znorm = tape.values(z).clone();
        for a in 0..3 {
            let reference = neighbor_distribution(&znorm, a, &cfg).unwrap();
            for i in 0..3 {
                assert!((tape.values(logq).get(a, i).exp() - reference[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_features_cost_margin_per_anchor() {
        // All rows equal: every KL is zero, so each of the M anchors
        // contributes exactly the margin.
        let feats = Mat::from_rows(&vec![vec![0.5, 0.5]; 6]).unwrap();
        let labels = [0, 0, 0, 1, 1, 1];
        let cfg = TripletConfig::default();
        let mut tape = Tape::new();
        let x = tape.constant(feats).unwrap();
        let out = triplet_distribution_loss(&mut tape, x, &labels, &cfg).unwrap();
        assert_eq!(out.active_anchors, 6);
        assert!((tape.scalar_value(out.loss) - 6.0 * cfg.margin).abs() < 1e-12);
    }

    #[test]
    fn single_class_batch_is_zero_loss_not_error() {
        let feats = Mat::from_rows(&[vec![1.0, 0.0], vec![0.8, 0.6]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(feats).unwrap();
        let out = triplet_distribution_loss(&mut tape, x, &[1, 1], &TripletConfig::default()).unwrap();
        assert_eq!(tape.scalar_value(out.loss), 0.0);
        assert_eq!(out.skipped_anchors, 2);
    }

    #[test]
    fn lone_anchor_of_a_class_is_masked() {
        // Label 0 appears once: that anchor has negatives but no positive and
        // must not contribute. The two label-1 anchors still do.
        let feats = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(feats).unwrap();
        let out = triplet_distribution_loss(&mut tape, x, &[0, 1, 1], &TripletConfig::default()).unwrap();
        assert_eq!(out.active_anchors, 2);
        assert_eq!(out.skipped_anchors, 1);
        assert!(tape.scalar_value(out.loss).is_finite());
    }

    #[test]
    fn triplet_is_invariant_to_feature_rescaling() {
        let rows = vec![
            vec![0.9, 0.3],
            vec![-0.2, 1.4],
            vec![0.4, -0.6],
            vec![1.1, 0.2],
        ];
        let labels = [0, 1, 0, 1];
        let cfg = TripletConfig::default();
        let value = |scale: f64| {
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let mut tape = Tape::new();
            let x = tape.constant(Mat::from_rows(&scaled).unwrap()).unwrap();
            let out = triplet_distribution_loss(&mut tape, x, &labels, &cfg).unwrap();
            tape.scalar_value(out.loss)
        };
        let base = value(1.0);
        assert!((value(7.3) - base).abs() < 1e-12);
        assert!((value(0.02) - base).abs() < 1e-12);
    }

    #[test]
    fn triplet_gradients_pass_finite_differences() {
        let labels = [0, 1, 0, 1, 1];
        let feats = Mat::from_rows(&[
            vec![0.9, 0.3, -0.5],
            vec![-0.2, 1.4, 0.8],
            vec![0.4, -0.6, 0.3],
            vec![1.1, 0.2, -0.9],
            vec![-0.7, -0.3, 1.2],
        ])
        .unwrap();
        for exclude_anchor in [false, true] {
            let cfg = TripletConfig {
                exclude_anchor,
                ..Default::default()
            };
            let mut store = ParamStore::new();
            let w = store.add("w", Mat::from_vec(3, 3, vec![1.0, 0.1, 0.0, -0.1, 0.9, 0.2, 0.05, 0.0, 1.1]).unwrap());
            let report = grad_check(
                &mut store,
                &[w],
                |tape, store| {
                    let x = tape.constant(feats.clone())?;
                    let wt = tape.param(store, w)?;
                    let z = tape.matmul(x, wt)?;
                    let out = triplet_distribution_loss(tape, z, &labels, &cfg)?;
                    Ok(out.loss)
                },
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.passed(), "exclude_anchor={exclude_anchor}:\n{}", report.describe_failures());
        }
    }

    #[test]
    fn total_loss_weights_and_skips_terms() {
        let mut tape = Tape::new();
        let a = tape.scalar(2.0).unwrap();
        let b = tape.scalar(3.0).unwrap();
        let terms = GeneratorTerms {
            ce: Some(a),
            marginal: None,
            conditional: Some(b),
            triplet: None,
        };
        let w = LossWeights {
            lambda_ce: 0.5,
            lambda_conditional: 2.0,
            ..Default::default()
        };
        let total = total_dirl_loss(&mut tape, &terms, &w).unwrap();
        assert!((tape.scalar_value(total) - (0.5 * 2.0 + 2.0 * 3.0)).abs() < 1e-15);

        let zeroed = LossWeights {
            lambda_ce: 0.0,
            lambda_marginal: 0.0,
            lambda_conditional: 0.0,
            lambda_triplet: 0.0,
        };
        let z = total_dirl_loss(&mut tape, &terms, &zeroed).unwrap();
        assert_eq!(tape.scalar_value(z), 0.0);

        let none = total_dirl_loss(&mut tape, &GeneratorTerms::default(), &w).unwrap();
        assert_eq!(tape.scalar_value(none), 0.0);

        let bad = LossWeights {
            lambda_ce: -1.0,
            ..Default::default()
        };
        assert!(total_dirl_loss(&mut tape, &terms, &bad).is_err());
    }
}

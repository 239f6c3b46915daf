//! Evaluation: accuracy, cluster quality, domain probes, and exports.
//!
//! The two probes quantify what the losses are supposed to achieve, from the
//! outside: a *marginal* probe trains a fresh classifier to tell domains
//! apart on frozen features (high holdout accuracy = domains still
//! separable), and a *conditional* probe does the same within each class.
//! The marginal probe can sit at chance while a conditional probe stays high
//! — that combination is the signature of aligned marginals with mismatched
//! classes. Probes build their own parameter stores and read features
//! through the no-tape forward path, so they can never perturb the model
//! under evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, softmax_rows, AdamConfig, Mat, ParamStore, Tape};
use crate::data::DomainDataset;
use crate::error::{DirlError, Result};
use crate::nets::{Mlp, ModelBundle};

/// Argmax per row; ties go to the lowest index.
pub fn argmax_rows(scores: &Mat) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predict_labels(bundle: &ModelBundle, x: &Mat) -> Result<Vec<usize>> {
    Ok(argmax_rows(&bundle.eval_class_logits(x)?))
}

/// Classification accuracy on a fully labeled dataset.
pub fn accuracy(bundle: &ModelBundle, ds: &DomainDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(DirlError::Contract(format!("{}: accuracy of an empty dataset", ds.name)));
    }
    let labels = ds.labels()?;
    let preds = predict_labels(bundle, &ds.features_mat()?)?;
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Recall per class. Every class must appear in the dataset.
pub fn per_class_recall(bundle: &ModelBundle, ds: &DomainDataset) -> Result<Vec<f64>> {
    let labels = ds.labels()?;
    let preds = predict_labels(bundle, &ds.features_mat()?)?;
    let mut correct = vec![0usize; ds.num_classes];
    let mut count = vec![0usize; ds.num_classes];
    for (p, y) in preds.iter().zip(&labels) {
        count[*y] += 1;
        if p == y {
            correct[*y] += 1;
        }
    }
    count
        .iter()
        .zip(&correct)
        .enumerate()
        .map(|(class, (n, c))| {
            if *n == 0 {
                Err(DirlError::Contract(format!(
                    "{}: class {class} has no examples for recall",
                    ds.name
                )))
            } else {
                Ok(*c as f64 / *n as f64)
            }
        })
        .collect()
}

/// Mean silhouette coefficient over Euclidean distances: per point,
/// (b - a) / max(a, b) with a = mean distance to its own cluster and b = the
/// best other cluster's mean distance. Singleton clusters contribute 0, the
/// usual convention. Needs at least two distinct labels.
pub fn silhouette_score(embeddings: &Mat, labels: &[usize]) -> Result<f64> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(DirlError::Contract(format!(
            "silhouette: {} labels for {n} rows",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(DirlError::Contract("silhouette needs at least 2 points".into()));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(DirlError::Contract(
            "silhouette needs at least 2 distinct clusters".into(),
        ));
    }
    let clusters: Vec<usize> = distinct.into_iter().collect();
    let sizes: Vec<usize> = clusters
        .iter()
        .map(|c| labels.iter().filter(|y| *y == c).count())
        .collect();

    let mut total = 0.0;
    for i in 0..n {
        // Mean distance from i to each cluster, own cluster excluding i.
        let mut sums = vec![0.0; clusters.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d = 0.0;
            for (a, b) in embeddings.row(i).iter().zip(embeddings.row(j)) {
                d += (a - b) * (a - b);
            }
            let d = d.sqrt();
            let cj = clusters.iter().position(|c| *c == labels[j]).unwrap();
            sums[cj] += d;
        }
        let own = clusters.iter().position(|c| *c == labels[i]).unwrap();
        if sizes[own] == 1 {
            continue; // contributes s_i = 0
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_steps: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub holdout_fraction: f64,
    /// Cap per domain before balancing, to bound probe cost on big datasets.
    pub max_per_domain: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_steps: 2000,
            lr: 1e-3,
            hidden: vec![7, 7, 7],
            holdout_fraction: 0.2,
            max_per_domain: 512,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_steps == 0 {
            return Err(DirlError::Config("probe train_steps must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DirlError::Config(format!("probe lr must be positive, got {}", self.lr)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DirlError::Config("probe hidden widths must be non-empty and positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(DirlError::Config(format!(
                "probe holdout_fraction must be in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.max_per_domain == 0 {
            return Err(DirlError::Config("probe max_per_domain must be positive".into()));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        ProbeConfig {
            seed,
            hidden: self.hidden.clone(),
            ..*self
        }
    }
}

/// Trains a throwaway domain classifier on the given feature sets (balanced
/// by subsampling the larger side) and returns its holdout accuracy.
pub fn domain_probe_on_features(source_features: &Mat, target_features: &Mat, cfg: &ProbeConfig) -> Result<f64> {
    cfg.validate()?;
    if source_features.is_empty() || target_features.is_empty() {
        return Err(DirlError::Contract("domain probe: empty feature set".into()));
    }
    if source_features.cols() != target_features.cols() {
        return Err(DirlError::ShapeMismatch {
            op: "domain_probe",
            left_rows: source_features.rows(),
            left_cols: source_features.cols(),
            right_rows: target_features.rows(),
            right_cols: target_features.cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = source_features
        .rows()
        .min(target_features.rows())
        .min(cfg.max_per_domain);

    let mut pool: Vec<(Vec<f64>, usize)> = Vec::with_capacity(2 * n);
    for (feats, domain) in [(source_features, 0usize), (target_features, 1usize)] {
        let mut idx: Vec<usize> = (0..feats.rows()).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(n) {
            pool.push((feats.row(i).to_vec(), domain));
        }
    }
    pool.shuffle(&mut rng);

    let n_holdout = ((pool.len() as f64 * cfg.holdout_fraction).round() as usize).max(1);
    if n_holdout >= pool.len() {
        return Err(DirlError::Contract(format!(
            "domain probe: holdout {} swallows all {} examples",
            n_holdout,
            pool.len()
        )));
    }
    let (holdout, train) = pool.split_at(n_holdout);

    let train_x = Mat::from_rows(&train.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>())?;
    let train_y: Vec<usize> = train.iter().map(|(_, d)| *d).collect();

    let mut store = ParamStore::new();
    let mut dims = vec![source_features.cols()];
    dims.extend(&cfg.hidden);
    dims.push(2);
    let probe = Mlp::init("probe", &dims, true, &mut store, &mut rng);
    let adam = AdamConfig::with_lr(cfg.lr);
    let ids = probe.param_ids();
    for _ in 0..cfg.train_steps {
        let mut tape = Tape::new();
        let x = tape.constant(train_x.clone())?;
        let logits = probe.forward(&mut tape, &store, x)?;
        let logp = tape.log_softmax(logits)?;
        let loss = tape.nll_mean(logp, &train_y)?;
        tape.backward(loss, &mut store)?;
        adam_step(&mut store, &ids, &adam)?;
    }

    let holdout_x = Mat::from_rows(&holdout.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>())?;
    let preds = argmax_rows(&probe.eval(&store, &holdout_x)?);
    let correct = preds
        .iter()
        .zip(holdout.iter())
        .filter(|(p, (_, d))| *p == d)
        .count();
    Ok(correct as f64 / holdout.len() as f64)
}

/// Marginal domain probe: can a fresh classifier tell source from target on
/// the bundle's frozen features? Uses every example of both datasets
/// (labels are irrelevant here).
pub fn marginal_probe(
    bundle: &ModelBundle,
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let src = bundle.eval_features(&source.features_mat()?)?;
    let tgt = bundle.eval_features(&target.features_mat()?)?;
    domain_probe_on_features(&src, &tgt, cfg)
}

/// Per-class domain probes, using true labels on both sides (an evaluation
/// diagnostic, not part of the training protocol). Classes missing from
/// either domain are reported as `None`.
pub fn conditional_probe(
    bundle: &ModelBundle,
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &ProbeConfig,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(source.num_classes);
    for class in 0..source.num_classes {
        let src_idx = source.class_indices(class);
        let tgt_idx = target.class_indices(class);
        if src_idx.is_empty() || tgt_idx.is_empty() {
            log::warn!(
                "conditional probe: class {class} unavailable (source {}, target {})",
                src_idx.len(),
                tgt_idx.len()
            );
            out.push(None);
            continue;
        }
        let src = bundle.eval_features(&source.features_of(&src_idx)?)?;
        let tgt = bundle.eval_features(&target.features_of(&tgt_idx)?)?;
        let class_cfg = cfg.with_seed(cfg.seed.wrapping_add(1 + class as u64));
        out.push(Some(domain_probe_on_features(&src, &tgt, &class_cfg)?));
    }
    Ok(out)
}

/// Silhouette of *predicted* clusters over the stacked embeddings of the
/// given datasets, subsampled to `max_points` for the periodic evaluations.
/// `None` (with a warning) when predictions collapse to a single class,
/// which genuinely happens in failed runs.
pub fn embedding_silhouette(
    bundle: &ModelBundle,
    datasets: &[&DomainDataset],
    max_points: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if max_points < 2 {
        return Err(DirlError::Config("silhouette max_points must be at least 2".into()));
    }
    let mats: Vec<Mat> = datasets
        .iter()
        .map(|ds| ds.features_mat())
        .collect::<Result<_>>()?;
    let x = Mat::vstack(&mats.iter().collect::<Vec<_>>())?;
    if x.rows() < 2 {
        return Err(DirlError::Contract("silhouette needs at least 2 points".into()));
    }
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    if x.rows() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(max_points);
        idx.sort_unstable();
    }
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
    let sub = Mat::from_rows(&rows)?;
    let emb = bundle.eval_features(&sub)?;
    let labels = predict_labels(bundle, &sub)?;
    let first = labels[0];
    if labels.iter().all(|y| *y == first) {
        log::warn!("silhouette unavailable: all predictions collapsed to class {first}");
        return Ok(None);
    }
    silhouette_score(&emb, &labels).map(Some)
}

/// Writes `x0,..,f0,..,label,domain,predicted` rows for every example of the
/// given datasets: the raw inputs, their embeddings, and the classifier's
/// prediction, ready for scatter plots.
pub fn export_embeddings(bundle: &ModelBundle, datasets: &[&DomainDataset], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let input_dim = datasets.first().map(|d| d.feature_dim()).unwrap_or(0);
    let feat_dim = bundle.feature_dim();
    let mut header: Vec<String> = (0..input_dim).map(|i| format!("x{i}")).collect();
    header.extend((0..feat_dim).map(|i| format!("f{i}")));
    header.extend(["label".into(), "domain".into(), "predicted".to_string()]);
    let mut out = header.join(",");
    out.push('\n');

    for ds in datasets {
        if ds.is_empty() {
            continue;
        }
        let x = ds.features_mat()?;
        let emb = bundle.eval_features(&x)?;
        let preds = predict_labels(bundle, &x)?;
        for (i, e) in ds.examples.iter().enumerate() {
            let mut fields: Vec<String> = e.features.iter().map(|v| v.to_string()).collect();
            fields.extend(emb.row(i).iter().map(|v| v.to_string()));
            fields.push(e.class_label.map(|y| y as i64).unwrap_or(-1).to_string());
            fields.push(e.domain.to_string());
            fields.push(preds[i].to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridBounds {
    pub x0_min: f64,
    pub x0_max: f64,
    pub x1_min: f64,
    pub x1_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridPoint {
    pub x0: f64,
    pub x1: f64,
    pub predicted: usize,
    /// Max softmax probability at this point.
    pub confidence: f64,
}

/// Evaluates the classifier on a `resolution` x `resolution` grid (bounds
/// inclusive), for decision-boundary plots of 2D models.
pub fn decision_grid(bundle: &ModelBundle, bounds: &GridBounds, resolution: usize) -> Result<Vec<GridPoint>> {
    if resolution < 2 {
        return Err(DirlError::Config(format!("grid resolution must be at least 2, got {resolution}")));
    }
    for (name, lo, hi) in [
        ("x0", bounds.x0_min, bounds.x0_max),
        ("x1", bounds.x1_min, bounds.x1_max),
    ] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DirlError::Config(format!("grid {name} bounds [{lo}, {hi}] invalid")));
        }
    }
    let lerp = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            rows.push(vec![lerp(bounds.x0_min, bounds.x0_max, i), lerp(bounds.x1_min, bounds.x1_max, j)]);
        }
    }
    let x = Mat::from_rows(&rows)?;
    let probs = softmax_rows(&bundle.eval_class_logits(&x)?);
    let preds = argmax_rows(&probs);
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| GridPoint {
            x0: r[0],
            x1: r[1],
            predicted: preds[i],
            confidence: probs.row(i)[preds[i]],
        })
        .collect())
}

pub fn write_decision_grid(points: &[GridPoint], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from("x0,x1,predicted,confidence\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.x0, p.x1, p.predicted, p.confidence).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, LabeledExample};
    use crate::nets::{init_bundle, NetConfig};
    use rand::Rng;

    fn bundle() -> ModelBundle {
        init_bundle(&NetConfig::default()).unwrap()
    }

    fn dataset_from(bundle: &ModelBundle, x: &Mat, labels: Vec<Option<usize>>, domain: Domain) -> DomainDataset {
        let _ = bundle;
        let examples = (0..x.rows())
            .map(|i| LabeledExample {
                features: x.row(i).to_vec(),
                class_label: labels[i],
                domain,
            })
            .collect();
        DomainDataset::new("test", examples, 2)
    }

    #[test]
    fn accuracy_is_one_against_own_predictions() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let x = Mat::from_rows(&rows).unwrap();
        let preds = predict_labels(&b, &x).unwrap();
        let ds = dataset_from(&b, &x, preds.iter().map(|p| Some(*p)).collect(), Domain::Source);
        assert_eq!(accuracy(&b, &ds).unwrap(), 1.0);
    }

    #[test]
    fn recall_tracks_per_class_errors() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Find inputs predicted 0 and 1, then flip one label of class 0.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while labels.iter().filter(|&&y| y == 0usize).count() < 4 || labels.iter().filter(|&&y| y == 1usize).count() < 4 {
            let r = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let p = predict_labels(&b, &Mat::from_rows(&[r.clone()]).unwrap()).unwrap()[0];
            rows.push(r);
            labels.push(p);
            assert!(rows.len() < 3000, "bundle never predicts both classes");
        }
        // Mislabel exactly one prediction-0 example as class 1.
        let flip = labels.iter().position(|&y| y == 0).unwrap();
        labels[flip] = 1;
        let n1 = labels.iter().filter(|&&y| y == 1).count();
        let ds = dataset_from(
            &b,
            &Mat::from_rows(&rows).unwrap(),
            labels.iter().map(|y| Some(*y)).collect(),
            Domain::Target,
        );
        let recall = per_class_recall(&b, &ds).unwrap();
        assert_eq!(recall[0], 1.0);
        assert!((recall[1] - (n1 as f64 - 1.0) / n1 as f64).abs() < 1e-12);
    }

    #[test]
    fn silhouette_of_two_far_clusters_matches_closed_form() {
        let emb = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
        .unwrap();
        let s = silhouette_score(&emb, &[0, 0, 1, 1]).unwrap();
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let expect = (b - 1.0) / b;
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
    }

    #[test]
    fn silhouette_goes_negative_under_permuted_labels() {
        let emb = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
        .unwrap();
        let s = silhouette_score(&emb, &[0, 1, 0, 1]).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn silhouette_contract_violations() {
        let emb = Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(silhouette_score(&emb, &[0, 0]).is_err());
        assert!(silhouette_score(&emb, &[0]).is_err());
        let one = Mat::from_rows(&[vec![0.0]]).unwrap();
        assert!(silhouette_score(&one, &[0]).is_err());
    }

    #[test]
    fn silhouette_singleton_cluster_contributes_zero() {
        let emb = Mat::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![9.0, 0.0]]).unwrap();
        // Cluster 1 is a singleton: its point contributes 0, the rest are
        // well separated, so 0 < s < 1.
        let s = silhouette_score(&emb, &[0, 0, 1]).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn probe_is_near_chance_on_same_distribution_draws() {
        // Two independent samples of the same distribution: nothing to learn
        // beyond noise, so holdout accuracy sits near 0.5. (Feeding the probe
        // literally identical rows under both labels is *not* the chance
        // case: memorized train labels anti-predict their holdout twins.)
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |n: usize| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            Mat::from_rows(&rows).unwrap()
        };
        let src = draw(300);
        let tgt = draw(300);
        let acc = domain_probe_on_features(&src, &tgt, &ProbeConfig::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "chance probe at {acc}");
    }

    #[test]
    fn probe_separates_disjoint_feature_sets() {
        let src = Mat::from_rows(&vec![vec![-5.0, -5.0, -5.0]; 120]).unwrap();
        let tgt = Mat::from_rows(&vec![vec![5.0, 5.0, 5.0]; 120]).unwrap();
        let cfg = ProbeConfig {
            train_steps: 400,
            ..Default::default()
        };
        let acc = domain_probe_on_features(&src, &tgt, &cfg).unwrap();
        assert!(acc >= 0.95, "separable probe at {acc}");
    }

    #[test]
    fn probes_leave_bundle_parameters_bitwise_unchanged() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let make = |rng: &mut ChaCha8Rng, domain| {
            let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
            let x = Mat::from_rows(&rows).unwrap();
            let labels = (0..40).map(|i| Some(i % 2)).collect();
            dataset_from(&b, &x, labels, domain)
        };
        let src = make(&mut rng, Domain::Source);
        let tgt = make(&mut rng, Domain::Target);

        let before: Vec<Vec<u64>> = b
            .store
            .ids()
            .iter()
            .map(|id| b.store.value(*id).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let cfg = ProbeConfig {
            train_steps: 50,
            ..Default::default()
        };
        marginal_probe(&b, &src, &tgt, &cfg).unwrap();
        conditional_probe(&b, &src, &tgt, &cfg).unwrap();
        embedding_silhouette(&b, &[&src, &tgt], 50, 1).unwrap();
        let after: Vec<Vec<u64>> = b
            .store
            .ids()
            .iter()
            .map(|id| b.store.value(*id).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn conditional_probe_reports_missing_class_as_none() {
        let b = bundle();
        let x = Mat::from_rows(&vec![vec![1.0, 1.0]; 10]).unwrap();
        let src = dataset_from(&b, &x, vec![Some(0); 10], Domain::Source);
        let tgt_labels: Vec<Option<usize>> = (0..10).map(|i| Some(i % 2)).collect();
        let tgt = dataset_from(&b, &x, tgt_labels, Domain::Target);
        let cfg = ProbeConfig {
            train_steps: 10,
            ..Default::default()
        };
        let probes = conditional_probe(&b, &src, &tgt, &cfg).unwrap();
        assert!(probes[0].is_some());
        assert!(probes[1].is_none());
    }

    #[test]
    fn decision_grid_covers_bounds_inclusively() {
        let b = bundle();
        let bounds = GridBounds {
            x0_min: -1.0,
            x0_max: 1.0,
            x1_min: 0.0,
            x1_max: 4.0,
        };
        let grid = decision_grid(&b, &bounds, 3).unwrap();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid[0].x0, -1.0);
        assert_eq!(grid[8].x0, 1.0);
        assert_eq!(grid[8].x1, 4.0);
        for p in &grid {
            assert!(p.confidence >= 0.5 && p.confidence <= 1.0);
            assert!(p.predicted < 2);
        }
        assert!(decision_grid(&b, &bounds, 1).is_err());
        let bad = GridBounds {
            x0_min: 1.0,
            x0_max: -1.0,
            ..bounds
        };
        assert!(decision_grid(&b, &bad, 3).is_err());
    }

    #[test]
    fn embeddings_export_has_one_row_per_example() {
        let b = bundle();
        let x = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let src = dataset_from(&b, &x, vec![Some(0), Some(1), None], Domain::Source);
        let dir = std::env::temp_dir().join(format!("dirl_emb_{}", std::process::id()));
        let path = dir.join("embeddings.csv");
        export_embeddings(&b, &[&src], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("x0,x1,f0,"));
        assert!(lines[0].ends_with("label,domain,predicted"));
        assert!(lines[3].contains(",-1,source,"));
        std::fs::remove_dir_all(&dir).ok();
    }
}

//! Mini-batch sampling for the alternating optimization loop.
//!
//! Two samplers: a mixed batch (half source, half target) that feeds the
//! supervised, marginal-adversarial and triplet terms, and a per-class batch
//! that feeds the conditional discriminators. Sampling is uniform with
//! replacement within each pool — target pools can be as small as one labeled
//! example per class in the few-shot protocol, so replacement is not
//! optional. Everything draws from a caller-supplied RNG; the trainer hands
//! each sampler its own stream so that enabling or disabling one loss term
//! cannot shift the draws of another.

use rand::Rng;

use crate::autodiff::Mat;
use crate::data::{allocate_counts, DomainDataset};
use crate::error::{DirlError, Result};

/// One mixed batch. The source half is balanced across classes; the target
/// half splits into labeled and unlabeled parts by `labeled_target_fraction`.
/// The pseudo fields start empty and are attached by the trainer once
/// pseudo-labeling is active; they feed the per-class and triplet pools only,
/// never the supervised loss.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub source_x: Mat,
    pub source_y: Vec<usize>,
    pub labeled_target_x: Mat,
    pub labeled_target_y: Vec<usize>,
    pub unlabeled_target_x: Mat,
    pub pseudo_target_x: Mat,
    pub pseudo_target_y: Vec<usize>,
}

impl MiniBatch {
    /// The full target half (labeled then unlabeled), as seen by the marginal
    /// domain discriminator. Pseudo-labeled examples are deliberately absent:
    /// they are already drawn from the same unlabeled pool and would skew the
    /// source/target balance.
    pub fn target_x(&self) -> Result<Mat> {
        Mat::vstack(&[&self.labeled_target_x, &self.unlabeled_target_x])
    }

    pub fn attach_pseudo(&mut self, x: Mat, y: Vec<usize>) -> Result<()> {
        if x.rows() != y.len() {
            return Err(DirlError::Contract(format!(
                "pseudo batch: {} rows vs {} labels",
                x.rows(),
                y.len()
            )));
        }
        self.pseudo_target_x = x;
        self.pseudo_target_y = y;
        Ok(())
    }

    /// Everything with a (true or pseudo) label, for the triplet loss:
    /// source, labeled target, then pseudo-labeled target.
    pub fn triplet_pool(&self) -> Result<(Mat, Vec<usize>)> {
        let x = Mat::vstack(&[&self.source_x, &self.labeled_target_x, &self.pseudo_target_x])?;
        let mut y = self.source_y.clone();
        y.extend(&self.labeled_target_y);
        y.extend(&self.pseudo_target_y);
        Ok((x, y))
    }
}

fn sample_rows(ds: &DomainDataset, pool: &[usize], count: usize, rng: &mut impl Rng) -> (Mat, Vec<usize>) {
    let mut rows = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let i = pool[rng.random_range(0..pool.len())];
        rows.push(ds.examples[i].features.clone());
        labels.push(ds.examples[i].class_label.unwrap_or(usize::MAX));
    }
    (Mat::from_rows(&rows).expect("uniform feature dim"), labels)
}

/// Draws one mixed batch. `target` is the (possibly label-masked) target
/// training set; its labeled/unlabeled split drives which pools exist.
/// `labeled_target_fraction` of the target half comes from the labeled pool
/// (rounded down), the rest from the unlabeled pool.
pub fn sample_mixed_batch(
    source: &DomainDataset,
    target: &DomainDataset,
    batch_size: usize,
    labeled_target_fraction: f64,
    rng: &mut impl Rng,
) -> Result<MiniBatch> {
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(DirlError::Config(format!(
            "batch_size must be positive and even, got {batch_size}"
        )));
    }
    if !(0.0..=1.0).contains(&labeled_target_fraction) {
        return Err(DirlError::Config(format!(
            "labeled_target_fraction must be in [0, 1], got {labeled_target_fraction}"
        )));
    }
    let half = batch_size / 2;
    let k = source.num_classes;

    // Source half, balanced across classes (remainder to lower classes).
    let per_class = allocate_counts(half, &vec![1.0 / k as f64; k]);
    let mut source_rows = Vec::with_capacity(half);
    let mut source_y = Vec::with_capacity(half);
    for (class, &count) in per_class.iter().enumerate() {
        let pool = source.class_indices(class);
        if pool.is_empty() && count > 0 {
            return Err(DirlError::Contract(format!(
                "source pool for class {class} is empty"
            )));
        }
        let (x, y) = sample_rows(source, &pool, count, rng);
        for r in 0..x.rows() {
            source_rows.push(x.row(r).to_vec());
        }
        source_y.extend(y);
    }

    let labeled_pool = target.labeled_indices();
    let unlabeled_pool = target.unlabeled_indices();
    let n_labeled = (half as f64 * labeled_target_fraction).floor() as usize;
    let n_unlabeled = half - n_labeled;
    if n_labeled > 0 && labeled_pool.is_empty() {
        return Err(DirlError::Contract(
            "labeled target pool is empty but labeled_target_fraction > 0".into(),
        ));
    }
    if n_unlabeled > 0 && unlabeled_pool.is_empty() {
        return Err(DirlError::Contract(
            "unlabeled target pool is empty; lower batch size or raise labeled_target_fraction".into(),
        ));
    }

    let (labeled_target_x, labeled_target_y) = sample_rows(target, &labeled_pool, n_labeled, rng);
    let (unlabeled_target_x, _) = sample_rows(target, &unlabeled_pool, n_unlabeled, rng);

    let dim = source.feature_dim();
    Ok(MiniBatch {
        source_x: Mat::from_rows(&source_rows)?,
        source_y,
        labeled_target_x: if n_labeled == 0 { Mat::zeros(0, dim) } else { labeled_target_x },
        labeled_target_y,
        unlabeled_target_x: if n_unlabeled == 0 { Mat::zeros(0, dim) } else { unlabeled_target_x },
        pseudo_target_x: Mat::zeros(0, dim),
        pseudo_target_y: Vec::new(),
    })
}

/// Target-side feature pool for the conditional discriminators: per class,
/// the labeled target examples plus any pseudo-labeled ones.
#[derive(Debug, Clone)]
pub struct ClasswisePool {
    per_class: Vec<Vec<Vec<f64>>>,
}

impl ClasswisePool {
    pub fn new(num_classes: usize) -> Self {
        ClasswisePool {
            per_class: vec![Vec::new(); num_classes],
        }
    }

    /// Seeds the pool with the labeled examples of a (masked) target dataset.
    pub fn from_dataset(ds: &DomainDataset) -> Self {
        let mut pool = ClasswisePool::new(ds.num_classes);
        for e in &ds.examples {
            if let Some(y) = e.class_label {
                pool.per_class[y].push(e.features.clone());
            }
        }
        pool
    }

    pub fn push(&mut self, class: usize, features: Vec<f64>) {
        self.per_class[class].push(features);
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.per_class[class].len()
    }
}

/// Matched source/target features for one class's discriminator step.
#[derive(Debug, Clone)]
pub struct ClassPair {
    pub class: usize,
    pub source_x: Mat,
    pub target_x: Mat,
}

/// Per-class batches plus the classes that had to be skipped because the
/// target side has no representatives yet (before pseudo-labels arrive, a
/// class with no few-shot examples simply cannot be aligned).
#[derive(Debug, Clone)]
pub struct ClassBatch {
    pub pairs: Vec<ClassPair>,
    pub skipped: Vec<usize>,
}

/// Draws `per_class_count` source and target examples for every class. A
/// class with an empty *target* pool is skipped and reported; an empty
/// *source* pool breaks the protocol and is an error.
pub fn sample_classwise_batch(
    source: &DomainDataset,
    target_pool: &ClasswisePool,
    per_class_count: usize,
    rng: &mut impl Rng,
) -> Result<ClassBatch> {
    if per_class_count == 0 {
        return Err(DirlError::Config("per_class_count must be positive".into()));
    }
    if target_pool.num_classes() != source.num_classes {
        return Err(DirlError::Contract(format!(
            "target pool has {} classes, source has {}",
            target_pool.num_classes(),
            source.num_classes
        )));
    }
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for class in 0..source.num_classes {
        let source_pool = source.class_indices(class);
        if source_pool.is_empty() {
            return Err(DirlError::Contract(format!(
                "source pool for class {class} is empty"
            )));
        }
        if target_pool.class_count(class) == 0 {
            skipped.push(class);
            continue;
        }
        let (source_x, _) = sample_rows(source, &source_pool, per_class_count, rng);
        let candidates = &target_pool.per_class[class];
        let target_rows: Vec<Vec<f64>> = (0..per_class_count)
            .map(|_| candidates[rng.random_range(0..candidates.len())].clone())
            .collect();
        pairs.push(ClassPair {
            class,
            source_x,
            target_x: Mat::from_rows(&target_rows)?,
        });
    }
    Ok(ClassBatch { pairs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scenario, select_labeled_target, ScenarioConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixtures() -> (DomainDataset, DomainDataset) {
        let cfg = ScenarioConfig {
            n_source: 300,
            n_target: 300,
            n_target_test: 20,
            seed: 5,
            ..Default::default()
        };
        let data = generate_scenario(&cfg).unwrap();
        let masked = select_labeled_target(&data.target_train, 5, 17).unwrap();
        (data.source, masked)
    }

    #[test]
    fn mixed_batch_has_documented_composition() {
        let (source, target) = fixtures();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_mixed_batch(&source, &target, 80, 0.25, &mut rng).unwrap();
        assert_eq!(b.source_x.rows(), 40);
        assert_eq!(b.source_y.iter().filter(|&&y| y == 0).count(), 20);
        assert_eq!(b.labeled_target_x.rows(), 10);
        assert_eq!(b.unlabeled_target_x.rows(), 30);
        assert_eq!(b.target_x().unwrap().rows(), 40);
        assert_eq!(b.pseudo_target_x.rows(), 0);
    }

    #[test]
    fn mixed_batch_rows_come_from_the_right_pools() {
        let (source, target) = fixtures();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_mixed_batch(&source, &target, 40, 0.5, &mut rng).unwrap();
        // Every sampled labeled-target row must exist among labeled examples
        // with a matching label.
        for r in 0..b.labeled_target_x.rows() {
            let row = b.labeled_target_x.row(r);
            let found = target
                .labeled_indices()
                .iter()
                .any(|&i| target.examples[i].features == row && target.examples[i].class_label == Some(b.labeled_target_y[r]));
            assert!(found, "labeled target row {r} not found in pool");
        }
        for r in 0..b.unlabeled_target_x.rows() {
            let row = b.unlabeled_target_x.row(r);
            let found = target
                .unlabeled_indices()
                .iter()
                .any(|&i| target.examples[i].features == row);
            assert!(found, "unlabeled target row {r} not found in pool");
        }
    }

    #[test]
    fn odd_or_zero_batch_size_is_rejected() {
        let (source, target) = fixtures();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_mixed_batch(&source, &target, 79, 0.25, &mut rng).is_err());
        assert!(sample_mixed_batch(&source, &target, 0, 0.25, &mut rng).is_err());
        assert!(sample_mixed_batch(&source, &target, 80, 1.5, &mut rng).is_err());
    }

    #[test]
    fn fully_masked_target_needs_zero_fraction() {
        let (source, target) = fixtures();
        let all_masked = select_labeled_target(&target, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sample_mixed_batch(&source, &all_masked, 80, 0.25, &mut rng).is_err());
        let b = sample_mixed_batch(&source, &all_masked, 80, 0.0, &mut rng).unwrap();
        assert_eq!(b.labeled_target_x.rows(), 0);
        assert_eq!(b.unlabeled_target_x.rows(), 40);
    }

    #[test]
    fn same_rng_stream_reproduces_the_batch() {
        let (source, target) = fixtures();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ba = sample_mixed_batch(&source, &target, 80, 0.25, &mut a).unwrap();
        let bb = sample_mixed_batch(&source, &target, 80, 0.25, &mut b).unwrap();
        assert_eq!(ba.source_x, bb.source_x);
        assert_eq!(ba.source_y, bb.source_y);
        assert_eq!(ba.unlabeled_target_x, bb.unlabeled_target_x);
    }

    #[test]
    fn classwise_batch_pairs_every_represented_class() {
        let (source, target) = fixtures();
        let pool = ClasswisePool::from_dataset(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cb = sample_classwise_batch(&source, &pool, 20, &mut rng).unwrap();
        assert_eq!(cb.pairs.len(), 2);
        assert!(cb.skipped.is_empty());
        for pair in &cb.pairs {
            assert_eq!(pair.source_x.rows(), 20);
            assert_eq!(pair.target_x.rows(), 20);
        }
    }

    #[test]
    fn classwise_batch_skips_unrepresented_target_class() {
        let (source, _) = fixtures();
        let mut pool = ClasswisePool::new(2);
        pool.push(1, vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cb = sample_classwise_batch(&source, &pool, 10, &mut rng).unwrap();
        assert_eq!(cb.skipped, vec![0]);
        assert_eq!(cb.pairs.len(), 1);
        assert_eq!(cb.pairs[0].class, 1);
    }

    #[test]
    fn triplet_pool_stacks_all_labeled_material() {
        let (source, target) = fixtures();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut b = sample_mixed_batch(&source, &target, 40, 0.5, &mut rng).unwrap();
        b.attach_pseudo(Mat::from_rows(&[vec![9.0, 9.0]]).unwrap(), vec![1]).unwrap();
        let (x, y) = b.triplet_pool().unwrap();
        assert_eq!(x.rows(), 20 + 10 + 1);
        assert_eq!(y.len(), 31);
        assert_eq!(y[30], 1);
        assert_eq!(x.row(30), &[9.0, 9.0]);
    }

    #[test]
    fn pseudo_attach_validates_lengths() {
        let (source, target) = fixtures();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut b = sample_mixed_batch(&source, &target, 40, 0.5, &mut rng).unwrap();
        assert!(b.attach_pseudo(Mat::zeros(2, 2), vec![0]).is_err());
    }
}

//! Synthetic 2D two-domain scenarios.
//!
//! Each class in each domain is an anisotropic Gaussian blob: covariance
//! sigma_sq * I + W W^T with W drawn once per blob as w_scale * N(0, I). The
//! three scenarios share this machinery:
//!
//! - `base`: source and target blobs in distinct regions, labels consistent —
//!   the geometry where marginal alignment works.
//! - `label_swap`: identical draws to `base`, but target labels flipped, so
//!   the nearest cross-domain blob belongs to the *other* class. Marginal
//!   alignment pairs the wrong clusters here.
//! - `label_shift`: target class proportions skewed (default 80/20), so
//!   matching marginal feature distributions forces minority-class mass onto
//!   the majority cluster.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{DirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    /// `None` once a label has been masked for the semi-supervised protocol.
    pub class_label: Option<usize>,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>, num_classes: usize) -> Self {
        DomainDataset {
            name: name.into(),
            examples,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples.first().map(|e| e.features.len()).unwrap_or(0)
    }

    /// All features stacked into an n x dim matrix, tape-ready.
    pub fn features_mat(&self) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = self.examples.iter().map(|e| e.features.clone()).collect();
        Mat::from_rows(&rows)
    }

    pub fn features_of(&self, indices: &[usize]) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.examples[i].features.clone()).collect();
        Mat::from_rows(&rows)
    }

    /// Labels of a fully labeled dataset; errors if any label is masked.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.class_label
                    .ok_or_else(|| DirlError::Contract(format!("{}: example {} is unlabeled", self.name, i)))
            })
            .collect()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].class_label.is_some()).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].class_label.is_none()).collect()
    }

    /// Indices of labeled examples of one class.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.examples[i].class_label == Some(class))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(DirlError::Config(format!(
                "{}: need at least 2 classes, got {}",
                self.name, self.num_classes
            )));
        }
        let dim = self.feature_dim();
        for (i, e) in self.examples.iter().enumerate() {
            if e.features.len() != dim {
                return Err(DirlError::Contract(format!(
                    "{}: example {} has {} features, expected {}",
                    self.name,
                    i,
                    e.features.len(),
                    dim
                )));
            }
            if !e.features.iter().all(|v| v.is_finite()) {
                return Err(DirlError::NonFinite { op: "dataset features" });
            }
            if let Some(y) = e.class_label {
                if y >= self.num_classes {
                    return Err(DirlError::Contract(format!(
                        "{}: example {} has label {} outside [0, {})",
                        self.name, i, y, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `x0,x1,label,domain,is_labeled` rows. Unlabeled examples carry
    /// label -1 and is_labeled 0. Floats use the shortest representation that
    /// round-trips exactly, so export -> import is lossless.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        if self.feature_dim() != 2 && !self.is_empty() {
            return Err(DirlError::Contract(format!(
                "{}: CSV schema is 2D, dataset has {} features",
                self.name,
                self.feature_dim()
            )));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = String::from("x0,x1,label,domain,is_labeled\n");
        for e in &self.examples {
            let (label, flagged) = match e.class_label {
                Some(y) => (y as i64, 1),
                None => (-1, 0),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.features[0], e.features[1], label, e.domain, flagged
            ));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a CSV written by [`DomainDataset::to_csv`]. `num_classes` of
    /// `None` infers max(label)+1 (at least 2).
    pub fn from_csv(path: &Path, name: impl Into<String>, num_classes: Option<usize>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("x0,x1,label,domain,is_labeled") => {}
            Some(other) => {
                return Err(DirlError::Parse(format!(
                    "{}: unexpected header {:?}",
                    path.display(),
                    other
                )))
            }
            None => return Err(DirlError::Parse(format!("{}: empty file", path.display()))),
        }
        let mut examples = Vec::new();
        let mut max_label = 0usize;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(DirlError::Parse(format!(
                    "{}: line {} has {} fields, expected 5",
                    path.display(),
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| DirlError::Parse(format!("{}: line {}: {}", path.display(), lineno + 2, e)))
            };
            let x0 = parse_f(fields[0])?;
            let x1 = parse_f(fields[1])?;
            let label: i64 = fields[2]
                .trim()
                .parse()
                .map_err(|e| DirlError::Parse(format!("{}: line {}: {}", path.display(), lineno + 2, e)))?;
            let domain = match fields[3].trim() {
                "source" => Domain::Source,
                "target" => Domain::Target,
                other => {
                    return Err(DirlError::Parse(format!(
                        "{}: line {}: unknown domain {:?}",
                        path.display(),
                        lineno + 2,
                        other
                    )))
                }
            };
            let flagged = fields[4].trim();
            let class_label = match (label, flagged) {
                (-1, "0") => None,
                (y, "1") if y >= 0 => {
                    max_label = max_label.max(y as usize);
                    Some(y as usize)
                }
                _ => {
                    return Err(DirlError::Parse(format!(
                        "{}: line {}: label {} inconsistent with is_labeled {}",
                        path.display(),
                        lineno + 2,
                        label,
                        flagged
                    )))
                }
            };
            examples.push(LabeledExample {
                features: vec![x0, x1],
                class_label,
                domain,
            });
        }
        let k = num_classes.unwrap_or((max_label + 1).max(2));
        let ds = DomainDataset::new(name, examples, k);
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Base,
    LabelSwap,
    LabelShift,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Base => write!(f, "base"),
            Scenario::LabelSwap => write!(f, "label_swap"),
            Scenario::LabelShift => write!(f, "label_shift"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Per-class blob centers, source domain.
    pub source_means: Vec<[f64; 2]>,
    /// Per-class blob centers, target domain (before any label swap).
    pub target_means: Vec<[f64; 2]>,
    /// Isotropic covariance floor.
    pub sigma_sq: f64,
    /// Scale of the random low-rank covariance component W.
    pub w_scale: f64,
    /// Total example counts (split across classes by the proportion vectors).
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_test: usize,
    pub source_proportions: Vec<f64>,
    pub target_proportions: Vec<f64>,
    /// Target-domain class proportions used when `scenario` is `label_shift`
    /// (applied to both target train and test draws).
    pub shifted_proportions: Vec<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Base,
            source_means: vec![[-2.5, -1.5], [-1.0, -1.0]],
            target_means: vec![[1.0, 1.0], [2.5, 1.5]],
            sigma_sq: 0.1,
            w_scale: 0.25,
            n_source: 2000,
            n_target: 2000,
            n_target_test: 100,
            source_proportions: vec![0.5, 0.5],
            target_proportions: vec![0.5, 0.5],
            shifted_proportions: vec![0.8, 0.2],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn num_classes(&self) -> usize {
        self.source_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k < 2 {
            return Err(DirlError::Config(format!("need at least 2 classes, got {k}")));
        }
        if self.target_means.len() != k {
            return Err(DirlError::Config(format!(
                "source has {} classes but target has {} means",
                k,
                self.target_means.len()
            )));
        }
        for (name, props) in [
            ("source_proportions", &self.source_proportions),
            ("target_proportions", &self.target_proportions),
            ("shifted_proportions", &self.shifted_proportions),
        ] {
            if props.len() != k {
                return Err(DirlError::Config(format!(
                    "{name} has {} entries for {k} classes",
                    props.len()
                )));
            }
            if props.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(DirlError::Config(format!("{name} has negative or non-finite entries")));
            }
            let sum: f64 = props.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(DirlError::Config(format!("{name} sums to {sum}, expected 1")));
            }
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq > 0.0) {
            return Err(DirlError::Config(format!("sigma_sq must be positive, got {}", self.sigma_sq)));
        }
        if !(self.w_scale.is_finite() && self.w_scale >= 0.0) {
            return Err(DirlError::Config(format!("w_scale must be non-negative, got {}", self.w_scale)));
        }
        for (name, n) in [
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("n_target_test", self.n_target_test),
        ] {
            if n == 0 {
                return Err(DirlError::Config(format!("{name} must be positive")));
            }
        }
        for m in self.source_means.iter().chain(&self.target_means) {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(DirlError::Config("class means must be finite".into()));
            }
        }
        Ok(())
    }
}

/// The three datasets of one scenario draw. `target_train` keeps its true
/// labels here; masking for the k-shot protocol happens in the trainer via
/// [`select_labeled_target`].
#[derive(Debug, Clone)]
pub struct ScenarioDatasets {
    pub source: DomainDataset,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

/// Splits `n` across classes by largest-remainder rounding of the proportion
/// vector, so counts always sum to exactly `n`. Ties go to the lower class.
pub fn allocate_counts(n: usize, proportions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions.iter().map(|p| (p * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(k, p)| (k, p * n as f64 - counts[k] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (k, _) in remainders.iter().take(n - assigned) {
        counts[*k] += 1;
    }
    counts
}

/// One blob's sampler: x = mean + sqrt(sigma_sq) * e1 + W e2 with independent
/// standard normal pairs e1, e2, which has covariance sigma_sq I + W W^T
/// exactly (no Cholesky needed).
struct Blob {
    mean: [f64; 2],
    sigma: f64,
    w: [[f64; 2]; 2],
}

impl Blob {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let e1: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let e2: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        (0..2)
            .map(|i| self.mean[i] + self.sigma * e1[i] + self.w[i][0] * e2[0] + self.w[i][1] * e2[1])
            .collect()
    }
}

fn draw_blob(mean: [f64; 2], cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Blob {
    let mut w = [[0.0; 2]; 2];
    for row in &mut w {
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = cfg.w_scale * z;
        }
    }
    Blob {
        mean,
        sigma: cfg.sigma_sq.sqrt(),
        w,
    }
}

fn sample_domain(
    name: &str,
    blobs: &[Blob],
    counts: &[usize],
    domain: Domain,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> DomainDataset {
    let mut examples = Vec::with_capacity(counts.iter().sum());
    for (class, (&count, blob)) in counts.iter().zip(blobs).enumerate() {
        for _ in 0..count {
            examples.push(LabeledExample {
                features: blob.sample(rng),
                class_label: Some(class),
                domain,
            });
        }
    }
    DomainDataset::new(name, examples, num_classes)
}

/// Draws the source, target-train and target-test datasets for the `base`
/// geometry of `cfg` (ignoring its scenario tag). One W per blob is drawn up
/// front and shared between the target train and test sets, so both come from
/// the same distribution.
pub fn generate_gaussian_2d(cfg: &ScenarioConfig) -> Result<ScenarioDatasets> {
    cfg.validate()?;
    let k = cfg.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let source_blobs: Vec<Blob> = cfg.source_means.iter().map(|m| draw_blob(*m, cfg, &mut rng)).collect();
    let target_blobs: Vec<Blob> = cfg.target_means.iter().map(|m| draw_blob(*m, cfg, &mut rng)).collect();

    let target_props = match cfg.scenario {
        Scenario::LabelShift => &cfg.shifted_proportions,
        _ => &cfg.target_proportions,
    };
    let source_counts = allocate_counts(cfg.n_source, &cfg.source_proportions);
    let target_counts = allocate_counts(cfg.n_target, target_props);
    let test_counts = allocate_counts(cfg.n_target_test, target_props);

    let source = sample_domain("source", &source_blobs, &source_counts, Domain::Source, k, &mut rng);
    let target_train = sample_domain("target_train", &target_blobs, &target_counts, Domain::Target, k, &mut rng);
    let target_test = sample_domain("target_test", &target_blobs, &test_counts, Domain::Target, k, &mut rng);

    Ok(ScenarioDatasets {
        source,
        target_train,
        target_test,
    })
}

/// Generates the configured scenario. `label_swap` draws exactly the same
/// examples as `base` and then relabels the target sets 0 <-> 1 (for K = 2;
/// general K rotates labels by one), so the feature distributions are
/// untouched and only the correspondence is broken.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioDatasets> {
    let mut data = generate_gaussian_2d(cfg)?;
    if cfg.scenario == Scenario::LabelSwap {
        let k = cfg.num_classes();
        for ds in [&mut data.target_train, &mut data.target_test] {
            for e in &mut ds.examples {
                if let Some(y) = e.class_label {
                    e.class_label = Some((y + 1) % k);
                }
            }
        }
    }
    Ok(data)
}

/// Masks all target labels except `k_per_class` uniformly chosen examples of
/// each class. Example order and features are untouched, so indices into the
/// result align with indices into the input. `k_per_class = 0` masks
/// everything.
pub fn select_labeled_target(ds: &DomainDataset, k_per_class: usize, seed: u64) -> Result<DomainDataset> {
    ds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; ds.len()];
    for class in 0..ds.num_classes {
        let mut candidates = ds.class_indices(class);
        if candidates.len() < k_per_class {
            return Err(DirlError::ClassShortage {
                class,
                needed: k_per_class,
                available: candidates.len(),
            });
        }
        // Partial Fisher-Yates: the first k_per_class slots become a uniform
        // sample without replacement.
        for i in 0..k_per_class {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
            keep[candidates[i]] = true;
        }
    }
    let examples = ds
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| LabeledExample {
            features: e.features.clone(),
            class_label: if keep[i] { e.class_label } else { None },
            domain: e.domain,
        })
        .collect();
    Ok(DomainDataset::new(ds.name.clone(), examples, ds.num_classes))
}

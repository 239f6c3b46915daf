//! The four-network model bundle.
//!
//! One shared feature extractor g feeds three kinds of heads: a label
//! classifier f, a marginal domain discriminator D, and one conditional
//! domain discriminator C_k per class. All roles are small dense ReLU stacks
//! (three hidden layers of seven units on the 2D benchmark); g's feature
//! space *is* its last hidden activation, while the heads add a linear logit
//! layer on top of their hidden stack.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamStore, Tape, Tensor};
use crate::error::{DirlError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    /// Hidden widths shared by every role; the last entry is the feature dim.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: 2,
            hidden: vec![7, 7, 7],
            num_classes: 2,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(DirlError::Config("input_dim must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DirlError::Config(format!(
                "hidden widths must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        if self.num_classes < 2 {
            return Err(DirlError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().unwrap()
    }
}

/// A dense ReLU stack. `linear_output` drops the ReLU on the last layer,
/// which is how the logit heads are built; the feature extractor keeps it.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub name: String,
    dims: Vec<usize>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    linear_output: bool,
}

impl Mlp {
    /// Registers parameters for a stack with the given layer dims. Weights
    /// are uniform in +-sqrt(6 / fan_in), biases zero. Also used by the
    /// evaluation probes to build their own throwaway classifiers.
    pub(crate) fn init(name: &str, dims: &[usize], linear_output: bool, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut w = Mat::zeros(fan_in, fan_out);
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w.set(i, j, rng.random_range(-bound..bound));
                }
            }
            weights.push(store.add(format!("{name}.w{l}"), w));
            biases.push(store.add(format!("{name}.b{l}"), Mat::zeros(1, fan_out)));
        }
        Mlp {
            name: name.into(),
            dims: dims.to_vec(),
            weights,
            biases,
            linear_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// Tape forward pass (differentiable).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        if x.cols != self.input_dim() {
            return Err(DirlError::ShapeMismatch {
                op: "mlp_forward",
                left_rows: x.rows,
                left_cols: x.cols,
                right_rows: self.input_dim(),
                right_cols: self.output_dim(),
            });
        }
        let mut h = x;
        for l in 0..self.weights.len() {
            let w = tape.param(store, self.weights[l])?;
            let b = tape.param(store, self.biases[l])?;
            h = tape.linear(h, w, b)?;
            if !(self.linear_output && l == self.weights.len() - 1) {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Plain forward pass for evaluation: no tape, no gradients, cannot touch
    /// parameter state.
    pub fn eval(&self, store: &ParamStore, x: &Mat) -> Result<Mat> {
        if x.cols() != self.input_dim() {
            return Err(DirlError::ShapeMismatch {
                op: "mlp_eval",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.input_dim(),
                right_cols: self.output_dim(),
            });
        }
        let mut h = x.clone();
        for l in 0..self.weights.len() {
            let mut z = h.matmul(store.value(self.weights[l]))?;
            let bias = store.value(self.biases[l]);
            for r in 0..z.rows() {
                for c in 0..z.cols() {
                    z.add_at(r, c, bias.get(0, c));
                }
            }
            if !(self.linear_output && l == self.weights.len() - 1) {
                z = z.map(|v| if v > 0.0 { v } else { 0.0 });
            }
            h = z;
        }
        if !h.all_finite() {
            return Err(DirlError::NonFinite { op: "mlp_eval" });
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub store: ParamStore,
    pub generator: Mlp,
    pub classifier: Mlp,
    pub domain_disc: Mlp,
    pub class_discs: Vec<Mlp>,
    pub config: NetConfig,
}

/// Builds the bundle with a single seeded RNG consumed in a fixed order
/// (g, f, D, C_0 .. C_{K-1}), so a seed pins every initial weight.
pub fn init_bundle(cfg: &NetConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let feat = cfg.feature_dim();

    let mut gen_dims = vec![cfg.input_dim];
    gen_dims.extend(&cfg.hidden);
    let generator = Mlp::init("g", &gen_dims, false, &mut store, &mut rng);

    let mut head_dims = vec![feat];
    head_dims.extend(&cfg.hidden);
    let mut cls_dims = head_dims.clone();
    cls_dims.push(cfg.num_classes);
    let classifier = Mlp::init("f", &cls_dims, true, &mut store, &mut rng);

    let mut disc_dims = head_dims;
    disc_dims.push(2);
    let domain_disc = Mlp::init("d", &disc_dims, true, &mut store, &mut rng);

    let class_discs = (0..cfg.num_classes)
        .map(|k| Mlp::init(&format!("c{k}"), &disc_dims, true, &mut store, &mut rng))
        .collect();

    Ok(ModelBundle {
        store,
        generator,
        classifier,
        domain_disc,
        class_discs,
        config: cfg.clone(),
    })
}

impl ModelBundle {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    // Differentiable paths.

    pub fn features(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor> {
        self.generator.forward(tape, &self.store, x)
    }

    pub fn classify(&self, tape: &mut Tape, features: Tensor) -> Result<Tensor> {
        self.classifier.forward(tape, &self.store, features)
    }

    pub fn discriminate_domain(&self, tape: &mut Tape, features: Tensor) -> Result<Tensor> {
        self.domain_disc.forward(tape, &self.store, features)
    }

    pub fn discriminate_class(&self, tape: &mut Tape, class: usize, features: Tensor) -> Result<Tensor> {
        let disc = self
            .class_discs
            .get(class)
            .ok_or_else(|| DirlError::Contract(format!("no class discriminator {class}")))?;
        disc.forward(tape, &self.store, features)
    }

    // Evaluation paths (never touch parameter state).

    pub fn eval_features(&self, x: &Mat) -> Result<Mat> {
        self.generator.eval(&self.store, x)
    }

    pub fn eval_class_logits(&self, x: &Mat) -> Result<Mat> {
        let z = self.eval_features(x)?;
        self.classifier.eval(&self.store, &z)
    }

    // Parameter groups for freezing and optimizer steps.

    pub fn generator_params(&self) -> Vec<ParamId> {
        self.generator.param_ids()
    }

    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier.param_ids()
    }

    pub fn domain_disc_params(&self) -> Vec<ParamId> {
        self.domain_disc.param_ids()
    }

    pub fn class_disc_params(&self, class: usize) -> Vec<ParamId> {
        self.class_discs[class].param_ids()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids()
    }

    /// Marks exactly `ids` trainable and everything else frozen.
    pub fn train_only(&mut self, ids: &[ParamId]) {
        self.store.set_all_trainable(false);
        self.store.set_trainable(ids, true);
    }
}

/// Saves every parameter as `param,row,col,value` rows with round-trip float
/// formatting, so save -> load restores values bitwise.
pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from("param,row,col,value\n");
    for id in bundle.store.ids() {
        let p = bundle.store.get(id);
        for r in 0..p.value.rows() {
            for c in 0..p.value.cols() {
                writeln!(out, "{},{},{},{}", p.name, r, c, p.value.get(r, c)).expect("string write");
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads parameter values by name into an existing bundle. The bundle must
/// have the same architecture: unknown names, missing names, out-of-range
/// indices and non-finite values are all errors.
pub fn load_checkpoint(bundle: &mut ModelBundle, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("param,row,col,value") => {}
        other => {
            return Err(DirlError::Checkpoint(format!(
                "{}: unexpected header {:?}",
                path.display(),
                other
            )))
        }
    }
    let ids = bundle.store.ids();
    let mut seen = vec![0usize; ids.len()];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(DirlError::Checkpoint(format!(
                "{}: line {} has {} fields",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let name = fields[0];
        let idx = ids
            .iter()
            .position(|id| bundle.store.get(*id).name == name)
            .ok_or_else(|| DirlError::Checkpoint(format!("unknown parameter {name:?}")))?;
        let id = ids[idx];
        let r: usize = fields[1]
            .parse()
            .map_err(|e| DirlError::Checkpoint(format!("line {}: {}", lineno + 2, e)))?;
        let c: usize = fields[2]
            .parse()
            .map_err(|e| DirlError::Checkpoint(format!("line {}: {}", lineno + 2, e)))?;
        let v: f64 = fields[3]
            .parse()
            .map_err(|e| DirlError::Checkpoint(format!("line {}: {}", lineno + 2, e)))?;
        if !v.is_finite() {
            return Err(DirlError::NonFinite { op: "load_checkpoint" });
        }
        let value = &mut bundle.store.get_mut(id).value;
        if r >= value.rows() || c >= value.cols() {
            return Err(DirlError::Checkpoint(format!(
                "{name}: index ({r},{c}) outside {}x{}",
                value.rows(),
                value.cols()
            )));
        }
        value.set(r, c, v);
        seen[idx] += 1;
    }
    for (idx, id) in ids.iter().enumerate() {
        let p = bundle.store.get(*id);
        let want = p.value.rows() * p.value.cols();
        if seen[idx] != want {
            return Err(DirlError::Checkpoint(format!(
                "{}: {} of {} entries present",
                p.name, seen[idx], want
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_bundle(seed: u64) -> ModelBundle {
        init_bundle(&NetConfig {
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn bundle_has_one_conditional_discriminator_per_class() {
        let bundle = default_bundle(0);
        assert_eq!(bundle.class_discs.len(), 2);
        let three = init_bundle(&NetConfig {
            num_classes: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(three.class_discs.len(), 3);
    }

    #[test]
    fn forward_shapes_match_roles() {
        let bundle = default_bundle(1);
        let x = Mat::from_vec(5, 2, vec![0.1; 10]).unwrap();
        let z = bundle.eval_features(&x).unwrap();
        assert_eq!((z.rows(), z.cols()), (5, 7));
        let logits = bundle.eval_class_logits(&x).unwrap();
        assert_eq!((logits.rows(), logits.cols()), (5, 2));
        assert!(logits.all_finite());
    }

    #[test]
    fn same_seed_same_init_different_seed_different_init() {
        let a = default_bundle(42);
        let b = default_bundle(42);
        let c = default_bundle(43);
        for id in a.store.ids() {
            assert_eq!(a.store.value(id), b.store.value(id));
        }
        let differs = a.store.ids().iter().any(|id| a.store.value(*id) != c.store.value(*id));
        assert!(differs);
    }

    #[test]
    fn init_respects_fan_in_bound_and_zero_biases() {
        let bundle = default_bundle(7);
        for id in bundle.store.ids() {
            let p = bundle.store.get(id);
            if p.name.contains(".b") {
                assert!(p.value.data().iter().all(|v| *v == 0.0), "{}", p.name);
            } else {
                let bound = (6.0 / p.value.rows() as f64).sqrt();
                assert!(p.value.data().iter().all(|v| v.abs() < bound), "{}", p.name);
            }
        }
    }

    #[test]
    fn tape_and_eval_forward_agree_bitwise() {
        let bundle = default_bundle(3);
        let x = Mat::from_vec(4, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.0, -2.0]).unwrap();
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone()).unwrap();
        let z = bundle.features(&mut tape, xt).unwrap();
        let logits = bundle.classify(&mut tape, z).unwrap();
        assert_eq!(tape.values(z), &bundle.eval_features(&x).unwrap());
        assert_eq!(tape.values(logits), &bundle.eval_class_logits(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let bundle = default_bundle(11);
        let dir = std::env::temp_dir().join(format!("dirl_ckpt_{}", std::process::id()));
        let path = dir.join("model.csv");
        save_checkpoint(&bundle, &path).unwrap();

        // Load into a differently initialized bundle of the same shape.
        let mut other = default_bundle(99);
        load_checkpoint(&mut other, &path).unwrap();
        for id in bundle.store.ids() {
            assert_eq!(bundle.store.value(id), other.store.value(id));
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_into_wrong_architecture_fails() {
        let bundle = default_bundle(1);
        let dir = std::env::temp_dir().join(format!("dirl_ckpt_bad_{}", std::process::id()));
        let path = dir.join("model.csv");
        save_checkpoint(&bundle, &path).unwrap();
        let mut narrow = init_bundle(&NetConfig {
            hidden: vec![5, 5, 5],
            ..Default::default()
        })
        .unwrap();
        assert!(load_checkpoint(&mut narrow, &path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn train_only_freezes_everything_else() {
        let mut bundle = default_bundle(5);
        let disc = bundle.domain_disc_params();
        bundle.train_only(&disc);
        for id in disc.iter() {
            assert!(bundle.store.is_trainable(*id));
        }
        for id in bundle.generator_params() {
            assert!(!bundle.store.is_trainable(id));
        }
    }
}

//! Feed-forward trainer over fixed-length feature vectors.
//!
//! Two heads: softmax classification (normalized exponentials with a
//! max-shift) and sigmoid cross-entropy regression onto squashed target
//! vectors. Supports the 85/5/10 split protocol, dropping classes too
//! small to split, last-layer replacement for transfer learning, and
//! top-k evaluation with confusion matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{Container, FeedForwardHeader, ModelHeader, ModelIoError, NamedMatrix};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("feature dimension mismatch: model expects {expected}, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("targets do not match the model head")]
    HeadMismatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no class survives the split requirement")]
    NoSurvivingClasses,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k must be >= 1")]
    BadK,
    #[error(transparent)]
    Io(#[from] ModelIoError),
}

/// One image feature vector keyed for joining against labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_key: String,
    pub features: Vec<f64>,
    /// Grouping hint for patient-level splits; defaults to the report
    /// prefix of the image key.
    pub provenance: Option<String>,
}

impl FeatureRecord {
    pub fn new(image_key: impl Into<String>, features: Vec<f64>) -> FeatureRecord {
        FeatureRecord { image_key: image_key.into(), features, provenance: None }
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> FeatureRecord {
        self.provenance = Some(provenance.into());
        self
    }

    /// Group key for patient-level splitting.
    pub fn group_key(&self) -> &str {
        self.provenance
            .as_deref()
            .unwrap_or_else(|| self.image_key.split(':').next().unwrap_or(&self.image_key))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    SigmoidXent,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::SigmoidXent => "sigmoid_xent",
        }
    }

    pub fn parse(s: &str) -> Option<Head> {
        match s {
            "softmax" => Some(Head::Softmax),
            "sigmoid_xent" => Some(Head::SigmoidXent),
            _ => None,
        }
    }
}

/// Normalized exponentials with a max-shift for overflow safety.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fully-connected net with tanh hidden units; the output layer is linear
/// and the head is applied by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardModel {
    pub layer_sizes: Vec<usize>,
    /// Per layer, `out x in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub head: Head,
    /// Per-layer learning-rate multipliers applied on top of the base
    /// learning rate.
    pub lr_multipliers: Vec<f64>,
    pub seed: u64,
}

impl FeedForwardModel {
    /// Random Glorot-uniform initialization (biases zero).
    pub fn random(layer_sizes: &[usize], head: Head, seed: u64) -> Result<FeedForwardModel, ClassifierError> {
        if layer_sizes.len() < 2 {
            return Err(ClassifierError::BadConfig("need at least input and output layers".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(ClassifierError::BadConfig("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(FeedForwardModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            head,
            lr_multipliers: vec![1.0; layer_sizes.len() - 1],
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Pre-head output of the network.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "feature dimension mismatch");
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            let mut z = affine(&self.weights[l], &self.biases[l], &a, self.layer_sizes[l + 1]);
            if l < self.n_layers() - 1 {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            a = z;
        }
        a
    }

    /// Softmax probabilities (softmax head only).
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if self.head != Head::Softmax {
            return Err(ClassifierError::HeadMismatch);
        }
        Ok(softmax(&self.output(x)))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn to_container(&self) -> Container {
        let mut matrices = Vec::new();
        for l in 0..self.n_layers() {
            matrices.push(NamedMatrix::from_f64(
                format!("w{l}"),
                self.layer_sizes[l + 1],
                self.layer_sizes[l],
                &self.weights[l],
            ));
            matrices.push(NamedMatrix::from_f64(
                format!("b{l}"),
                1,
                self.layer_sizes[l + 1],
                &self.biases[l],
            ));
        }
        Container {
            header: ModelHeader::FeedForward(FeedForwardHeader {
                layer_sizes: self.layer_sizes.clone(),
                head: self.head.as_str().to_string(),
                lr_multipliers: self.lr_multipliers.clone(),
                seed: self.seed,
            }),
            matrices,
        }
    }

    pub fn from_container(container: &Container) -> Result<FeedForwardModel, ModelIoError> {
        let header = match &container.header {
            ModelHeader::FeedForward(h) => h,
            other => {
                return Err(ModelIoError::WrongKind {
                    expected: "feed_forward",
                    found: other.kind().to_string(),
                })
            }
        };
        let head = Head::parse(&header.head)
            .ok_or_else(|| ModelIoError::BadHeader(format!("unknown head {:?}", header.head)))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..header.layer_sizes.len() - 1 {
            weights.push(container.matrix(&format!("w{l}"))?.to_f64());
            biases.push(container.matrix(&format!("b{l}"))?.to_f64());
        }
        Ok(FeedForwardModel {
            layer_sizes: header.layer_sizes.clone(),
            weights,
            biases,
            head,
            lr_multipliers: header.lr_multipliers.clone(),
            seed: header.seed,
        })
    }
}

fn affine(weights: &[f64], biases: &[f64], input: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = biases.to_vec();
    for (o, out_v) in out.iter_mut().enumerate().take(out_dim) {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        *out_v += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
    out
}

/// Replace the output layer of a trained model: every other layer is
/// copied bit-exact, the new layer is randomly initialized, and the
/// learning-rate multipliers implement the low-base / high-new schedule.
pub fn fine_tune(
    base: &FeedForwardModel,
    new_output_dim: usize,
    new_head: Option<Head>,
    base_lr: f64,
    new_layer_lr: f64,
    seed: u64,
) -> Result<FeedForwardModel, ClassifierError> {
    if new_output_dim == 0 {
        return Err(ClassifierError::BadConfig("output dimension must be positive".into()));
    }
    if base_lr <= 0.0 || new_layer_lr <= 0.0 {
        return Err(ClassifierError::BadConfig("learning rates must be positive".into()));
    }
    let mut layer_sizes = base.layer_sizes.clone();
    let last = layer_sizes.len() - 1;
    layer_sizes[last] = new_output_dim;
    let fan_in = layer_sizes[last - 1];
    let bound = (6.0 / (fan_in + new_output_dim) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = base.weights[..base.n_layers() - 1].to_vec();
    let mut biases = base.biases[..base.n_layers() - 1].to_vec();
    weights.push(
        (0..fan_in * new_output_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect(),
    );
    biases.push(vec![0.0; new_output_dim]);
    let mut lr_multipliers = vec![1.0; base.n_layers()];
    lr_multipliers[base.n_layers() - 1] = new_layer_lr / base_lr;
    Ok(FeedForwardModel {
        layer_sizes,
        weights,
        biases,
        head: new_head.unwrap_or(base.head),
        lr_multipliers,
        seed,
    })
}

/// Training targets, one per feature record.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes { labels: Vec<usize>, n_classes: usize },
    Vectors(Vec<Vec<f64>>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Vectors(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Record the cv trace every this many mini-batch updates (0 = once
    /// per epoch).
    pub trace_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 20, base_lr: 0.01, batch_size: 32, seed: 0, trace_every: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// `(mini-batch update count, cv top-1 accuracy)` pairs.
    pub trace: Vec<(u64, f64)>,
    pub final_loss: f64,
    pub updates: u64,
}

/// Mini-batch SGD with per-layer learning rates; deterministic for a
/// given seed.
pub fn train(
    model: &mut FeedForwardModel,
    features: &[FeatureRecord],
    targets: &Targets,
    cv: Option<(&[FeatureRecord], &[usize])>,
    opts: &TrainOptions,
) -> Result<TrainReport, ClassifierError> {
    if opts.epochs < 1 {
        return Err(ClassifierError::BadConfig("epochs must be >= 1".into()));
    }
    if opts.batch_size < 1 {
        return Err(ClassifierError::BadConfig("batch_size must be >= 1".into()));
    }
    if features.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if features.len() != targets.len() {
        return Err(ClassifierError::BadConfig("feature/target count mismatch".into()));
    }
    for rec in features {
        if rec.features.len() != model.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: model.input_dim(),
                found: rec.features.len(),
            });
        }
    }
    match (model.head, targets) {
        (Head::Softmax, Targets::Classes { labels, n_classes }) => {
            if *n_classes != model.output_dim() {
                return Err(ClassifierError::BadConfig(format!(
                    "model outputs {} classes, targets declare {}",
                    model.output_dim(),
                    n_classes
                )));
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(ClassifierError::LabelOutOfRange { label, classes: *n_classes });
            }
        }
        (Head::SigmoidXent, Targets::Vectors(vectors)) => {
            if let Some(v) = vectors.iter().find(|v| v.len() != model.output_dim()) {
                return Err(ClassifierError::DimensionMismatch {
                    expected: model.output_dim(),
                    found: v.len(),
                });
            }
        }
        _ => return Err(ClassifierError::HeadMismatch),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = Vec::new();
    let mut updates = 0u64;
    let mut last_loss = 0.0;
    let updates_per_epoch = features.len().div_ceil(opts.batch_size) as u64;
    let trace_every = if opts.trace_every == 0 {
        updates_per_epoch.max(1)
    } else {
        opts.trace_every as u64
    };
    for _epoch in 0..opts.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(opts.batch_size) {
            let (loss, grad_w, grad_b) = batch_gradients(model, features, targets, batch);
            last_loss = loss;
            for l in 0..model.weights.len() {
                let lr = opts.base_lr * model.lr_multipliers[l];
                for (w, g) in model.weights[l].iter_mut().zip(&grad_w[l]) {
                    *w -= lr * g;
                }
                for (b, g) in model.biases[l].iter_mut().zip(&grad_b[l]) {
                    *b -= lr * g;
                }
            }
            updates += 1;
            if updates.is_multiple_of(trace_every) {
                if let Some((cv_x, cv_y)) = cv {
                    trace.push((updates, accuracy(model, cv_x, cv_y)));
                }
            }
        }
    }
    if let Some((cv_x, cv_y)) = cv {
        if trace.last().map(|t| t.0) != Some(updates) {
            trace.push((updates, accuracy(model, cv_x, cv_y)));
        }
    }
    Ok(TrainReport { trace, final_loss: last_loss, updates })
}

fn accuracy(model: &FeedForwardModel, features: &[FeatureRecord], labels: &[usize]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(rec, &label)| argmax(&model.output(&rec.features)) == label)
        .count();
    hits as f64 / features.len() as f64
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Forward/backward over one mini-batch; returns the mean loss and
/// parameter gradients.
fn batch_gradients(
    model: &FeedForwardModel,
    features: &[FeatureRecord],
    targets: &Targets,
    batch: &[usize],
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_layers = model.weights.len();
    let mut grad_w: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for &row in batch {
        let x = &features[row].features;
        // Forward, keeping activations.
        let mut activations: Vec<Vec<f64>> = vec![x.clone()];
        for l in 0..n_layers {
            let mut z = affine(
                &model.weights[l],
                &model.biases[l],
                &activations[l],
                model.layer_sizes[l + 1],
            );
            if l < n_layers - 1 {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        let output = activations.last().expect("forward produced output");
        // Head loss and dL/dz at the output.
        let mut delta: Vec<f64> = match (model.head, targets) {
            (Head::Softmax, Targets::Classes { labels, .. }) => {
                let probs = softmax(output);
                let label = labels[row];
                loss += -probs[label].max(f64::MIN_POSITIVE).ln() * scale;
                let mut d = probs;
                d[label] -= 1.0;
                d
            }
            (Head::SigmoidXent, Targets::Vectors(vectors)) => {
                let raw_target = &vectors[row];
                let mut d = Vec::with_capacity(output.len());
                for (&z, &t_raw) in output.iter().zip(raw_target) {
                    let t = sigmoid(t_raw);
                    loss += (t * softplus(-z) + (1.0 - t) * softplus(z)) * scale;
                    d.push(sigmoid(z) - t);
                }
                d
            }
            _ => unreachable!("validated before training"),
        };
        for v in &mut delta {
            *v *= scale;
        }
        // Backward.
        for l in (0..n_layers).rev() {
            let input = &activations[l];
            let in_dim = input.len();
            for (o, &d) in delta.iter().enumerate() {
                grad_b[l][o] += d;
                let row_grad = &mut grad_w[l][o * in_dim..(o + 1) * in_dim];
                for (g, &xv) in row_grad.iter_mut().zip(input) {
                    *g += d * xv;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &model.weights[l][o * in_dim..(o + 1) * in_dim];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a; // tanh'
                }
                delta = prev;
            }
        }
    }
    (loss, grad_w, grad_b)
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter.
pub fn gradient_check(
    model: &FeedForwardModel,
    features: &[FeatureRecord],
    targets: &Targets,
) -> f64 {
    assert!(
        model.parameter_count() <= 10_000,
        "gradient check is exhaustive; use a small model"
    );
    let batch: Vec<usize> = (0..features.len()).collect();
    let (_, grad_w, grad_b) = batch_gradients(model, features, targets, &batch);
    let loss_of = |m: &FeedForwardModel| batch_gradients(m, features, targets, &batch).0;
    let mut max_err = 0f64;
    let mut probe = model.clone();
    for l in 0..model.weights.len() {
        for (idx, &analytic) in grad_w[l].iter().enumerate() {
            let orig = model.weights[l][idx];
            let h = 1e-5 * orig.abs().max(1.0);
            probe.weights[l][idx] = orig + h;
            let plus = loss_of(&probe);
            probe.weights[l][idx] = orig - h;
            let minus = loss_of(&probe);
            probe.weights[l][idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max(err);
        }
        for (idx, &analytic) in grad_b[l].iter().enumerate() {
            let orig = model.biases[l][idx];
            let h = 1e-5 * orig.abs().max(1.0);
            probe.biases[l][idx] = orig + h;
            let plus = loss_of(&probe);
            probe.biases[l][idx] = orig - h;
            let minus = loss_of(&probe);
            probe.biases[l][idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max(err);
        }
    }
    max_err
}

/// Dataset split fractions and policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub cv_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub group_by_patient: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.85,
            cv_frac: 0.05,
            test_frac: 0.10,
            seed: 0,
            group_by_patient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cv: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let sum = self.train_frac + self.cv_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ClassifierError::BadConfig(format!("split fractions sum to {sum}")));
        }
        if self.train_frac <= 0.0 || self.cv_frac < 0.0 || self.test_frac < 0.0 {
            return Err(ClassifierError::BadConfig("split fractions must be nonnegative".into()));
        }
        Ok(())
    }

    /// Per-class allocation used by both the split and the class filter:
    /// cv and test sizes round half away from zero, train takes the rest.
    pub fn class_allocation(&self, n: usize) -> (usize, usize, usize) {
        let n_cv = ((n as f64 * self.cv_frac).round() as usize).min(n);
        let n_test = ((n as f64 * self.test_frac).round() as usize).min(n - n_cv);
        (n - n_cv - n_test, n_cv, n_test)
    }

    /// Disjoint, covering split. Stratified per class unless
    /// `group_by_patient` is set, in which case whole groups are assigned
    /// to cv/test/train quotas after a seeded shuffle.
    pub fn split(
        &self,
        records: &[FeatureRecord],
        labels: &[usize],
    ) -> Result<SplitIndices, ClassifierError> {
        self.validate()?;
        if records.len() != labels.len() || records.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        if self.group_by_patient {
            return self.split_groups(records);
        }
        let n_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        let mut split = SplitIndices { train: Vec::new(), cv: Vec::new(), test: Vec::new() };
        for class in 0..n_classes {
            let mut rows: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if rows.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (class as u64).wrapping_mul(0x9e3779b97f4a7c15));
            for i in (1..rows.len()).rev() {
                let j = rng.gen_range(0..=i);
                rows.swap(i, j);
            }
            let (_, n_cv, n_test) = self.class_allocation(rows.len());
            split.cv.extend(&rows[..n_cv]);
            split.test.extend(&rows[n_cv..n_cv + n_test]);
            split.train.extend(&rows[n_cv + n_test..]);
        }
        split.train.sort_unstable();
        split.cv.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }

    fn split_groups(&self, records: &[FeatureRecord]) -> Result<SplitIndices, ClassifierError> {
        let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            match groups.iter_mut().find(|(k, _)| *k == rec.group_key()) {
                Some((_, rows)) => rows.push(i),
                None => groups.push((rec.group_key(), vec![i])),
            }
        }
        groups.sort_by_key(|(k, _)| k.to_string());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for i in (1..groups.len()).rev() {
            let j = rng.gen_range(0..=i);
            groups.swap(i, j);
        }
        let n = records.len() as f64;
        let cv_quota = (n * self.cv_frac).round() as usize;
        let test_quota = (n * self.test_frac).round() as usize;
        let mut split = SplitIndices { train: Vec::new(), cv: Vec::new(), test: Vec::new() };
        for (_, rows) in groups {
            if split.cv.len() < cv_quota {
                split.cv.extend(rows);
            } else if split.test.len() < test_quota {
                split.test.extend(rows);
            } else {
                split.train.extend(rows);
            }
        }
        split.train.sort_unstable();
        split.cv.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

/// Result of dropping classes that cannot place `min_per_split` items in
/// every split.
#[derive(Debug, Clone)]
pub struct ClassFilter {
    /// Old class id -> new dense id, None when dropped.
    pub remap: Vec<Option<usize>>,
    /// Surviving old class ids in ascending order.
    pub kept_classes: Vec<usize>,
    /// Dataset rows whose class survived.
    pub kept_rows: Vec<usize>,
}

/// Drop classes too small for the split; remaining labels are re-indexed
/// densely. The rule is analytic (rounding-based), so it does not depend
/// on the split seed.
pub fn filter_small_classes(
    labels: &[usize],
    n_classes: usize,
    split: &SplitSpec,
    min_per_split: usize,
) -> Result<ClassFilter, ClassifierError> {
    split.validate()?;
    let mut counts = vec![0usize; n_classes];
    for &label in labels {
        if label >= n_classes {
            return Err(ClassifierError::LabelOutOfRange { label, classes: n_classes });
        }
        counts[label] += 1;
    }
    let mut remap = vec![None; n_classes];
    let mut kept_classes = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (n_train, n_cv, n_test) = split.class_allocation(n);
        if n_train >= min_per_split && n_cv >= min_per_split && n_test >= min_per_split {
            remap[class] = Some(kept_classes.len());
            kept_classes.push(class);
        }
    }
    if kept_classes.is_empty() {
        return Err(ClassifierError::NoSurvivingClasses);
    }
    let kept_rows = (0..labels.len()).filter(|&i| remap[labels[i]].is_some()).collect();
    Ok(ClassFilter { remap, kept_classes, kept_rows })
}

/// Ranked `(label, probability)` predictions, descending, ties by label
/// id.
pub fn predict_topk(
    model: &FeedForwardModel,
    feature: &[f64],
    k: usize,
) -> Result<Vec<(usize, f64)>, ClassifierError> {
    if k < 1 {
        return Err(ClassifierError::BadK);
    }
    let probs = model.probabilities(feature)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b].partial_cmp(&probs[a]).expect("finite probabilities").then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k.min(probs.len()))
        .map(|label| (label, probs[label]))
        .collect())
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// `(k, accuracy)` in the requested order.
    pub topk: Vec<(usize, f64)>,
    /// `confusion[truth][argmax prediction]`.
    pub confusion: Vec<Vec<u32>>,
    pub per_class_support: Vec<u32>,
    /// Training trace carried over from the fit, when available.
    pub trace: Vec<(u64, f64)>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|(kk, _)| *kk == k).map(|(_, a)| *a)
    }
}

/// Exact top-k accuracies and the argmax confusion matrix.
pub fn evaluate(
    model: &FeedForwardModel,
    features: &[FeatureRecord],
    labels: &[usize],
    ks: &[usize],
) -> Result<EvalReport, ClassifierError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(ClassifierError::EmptyDataset);
    }
    let classes = model.output_dim();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ClassifierError::LabelOutOfRange { label, classes });
    }
    let max_k = ks.iter().copied().max().unwrap_or(1).max(1);
    let mut hits = vec![0usize; ks.len()];
    let mut confusion = vec![vec![0u32; classes]; classes];
    let mut support = vec![0u32; classes];
    for (rec, &truth) in features.iter().zip(labels) {
        let ranked = predict_topk(model, &rec.features, max_k)?;
        confusion[truth][ranked[0].0] += 1;
        support[truth] += 1;
        for (ki, &k) in ks.iter().enumerate() {
            if ranked.iter().take(k).any(|(label, _)| *label == truth) {
                hits[ki] += 1;
            }
        }
    }
    Ok(EvalReport {
        topk: ks
            .iter()
            .zip(&hits)
            .map(|(&k, &h)| (k, h as f64 / features.len() as f64))
            .collect(),
        confusion,
        per_class_support: support,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_feature_dataset, FeatureSpec};

    #[test]
    fn softmax_matches_direct_evaluation() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant_and_overflow_safe() {
        let base = softmax(&[1.0, 2.0, 3.0]);
        let shifted = softmax(&[1001.0, 1002.0, 1003.0]);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        let huge = softmax(&[1e308, 1e308, 0.0]);
        assert!(huge.iter().all(|v| v.is_finite()));
    }

    fn separable_data(seed: u64) -> (Vec<FeatureRecord>, Vec<usize>) {
        let spec = FeatureSpec {
            classes: 3,
            per_class: 60,
            dim: 6,
            separation: 6.0,
            noise: 0.5,
            seed,
        };
        generate_feature_dataset(&spec).unwrap()
    }

    #[test]
    fn separable_classes_reach_high_heldout_accuracy() {
        let (records, labels) = separable_data(4);
        let split = SplitSpec::default();
        let indices = split.split(&records, &labels).unwrap();
        let take = |rows: &[usize]| -> (Vec<FeatureRecord>, Vec<usize>) {
            (
                rows.iter().map(|&i| records[i].clone()).collect(),
                rows.iter().map(|&i| labels[i]).collect(),
            )
        };
        let (train_x, train_y) = take(&indices.train);
        let (test_x, test_y) = take(&indices.test);
        let mut model = FeedForwardModel::random(&[6, 16, 3], Head::Softmax, 7).unwrap();
        train(
            &mut model,
            &train_x,
            &Targets::Classes { labels: train_y, n_classes: 3 },
            None,
            &TrainOptions { epochs: 60, base_lr: 0.05, ..Default::default() },
        )
        .unwrap();
        let report = evaluate(&model, &test_x, &test_y, &[1, 5]).unwrap();
        let top1 = report.accuracy_at(1).unwrap();
        assert!(top1 >= 0.95, "top-1 {top1}");
        assert!(report.accuracy_at(5).unwrap() >= top1);
    }

    #[test]
    fn zero_epochs_is_a_config_error() {
        let (records, labels) = separable_data(1);
        let mut model = FeedForwardModel::random(&[6, 4, 3], Head::Softmax, 1).unwrap();
        let err = train(
            &mut model,
            &records,
            &Targets::Classes { labels, n_classes: 3 },
            None,
            &TrainOptions { epochs: 0, ..Default::default() },
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::BadConfig(_)));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (records, labels) = separable_data(2);
        let opts = TrainOptions { epochs: 5, base_lr: 0.05, ..Default::default() };
        let targets = Targets::Classes { labels, n_classes: 3 };
        let mut a = FeedForwardModel::random(&[6, 8, 3], Head::Softmax, 11).unwrap();
        let mut b = FeedForwardModel::random(&[6, 8, 3], Head::Softmax, 11).unwrap();
        train(&mut a, &records, &targets, None, &opts).unwrap();
        train(&mut b, &records, &targets, None, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regression_memorizes_ten_pairs() {
        let dim = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<FeatureRecord> = (0..10)
            .map(|i| {
                FeatureRecord::new(
                    format!("m{i}:-:0"),
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut model = FeedForwardModel::random(&[4, 32, 2 * dim], Head::SigmoidXent, 3).unwrap();
        train(
            &mut model,
            &records,
            &Targets::Vectors(targets.clone()),
            None,
            &TrainOptions { epochs: 3000, base_lr: 0.3, batch_size: 10, ..Default::default() },
        )
        .unwrap();
        let mut cosines = Vec::new();
        for (rec, target) in records.iter().zip(&targets) {
            let out = model.output(&rec.features);
            for half in 0..2 {
                let a = &out[half * dim..(half + 1) * dim];
                let b = &target[half * dim..(half + 1) * dim];
                cosines.push(cosine(a, b));
            }
        }
        let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
        assert!(mean >= 0.9, "mean half-vector cosine {mean}");
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn fine_tune_copies_layers_bit_exact_and_reshapes_output() {
        let base = {
            let (records, labels) = separable_data(3);
            let mut model = FeedForwardModel::random(&[6, 10, 3], Head::Softmax, 21).unwrap();
            train(
                &mut model,
                &records,
                &Targets::Classes { labels, n_classes: 3 },
                None,
                &TrainOptions { epochs: 10, base_lr: 0.05, ..Default::default() },
            )
            .unwrap();
            model
        };
        let tuned = fine_tune(&base, 5, None, 0.001, 0.01, 9).unwrap();
        assert_eq!(tuned.layer_sizes, vec![6, 10, 5]);
        assert_eq!(tuned.weights[0], base.weights[0], "copied layer must be bit-exact");
        assert_eq!(tuned.biases[0], base.biases[0]);
        assert_eq!(tuned.lr_multipliers, vec![1.0, 10.0]);
    }

    #[test]
    fn predict_topk_full_distribution_and_edge_cases() {
        let model = FeedForwardModel::random(&[4, 6, 5], Head::Softmax, 2).unwrap();
        let feature = vec![0.3, -0.2, 0.8, 0.1];
        let full = predict_topk(&model, &feature, 5).unwrap();
        assert_eq!(full.len(), 5);
        let sum: f64 = full.iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(full.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(matches!(predict_topk(&model, &feature, 0), Err(ClassifierError::BadK)));
        // Degenerate one-class model predicts that class with p = 1.
        let one = FeedForwardModel::random(&[4, 3, 1], Head::Softmax, 2).unwrap();
        let ranked = predict_topk(&one, &feature, 1).unwrap();
        assert_eq!(ranked, vec![(0, 1.0)]);
    }

    #[test]
    fn filter_small_classes_uses_the_rounding_rule() {
        let split = SplitSpec::default();
        // class 0: 40 items (kept), class 1: 2 items (dropped),
        // class 2: 10 items (kept: cv=1 test=1 train=8).
        let mut labels = vec![0usize; 40];
        labels.extend([1, 1]);
        labels.extend(vec![2usize; 10]);
        let filter = filter_small_classes(&labels, 3, &split, 1).unwrap();
        assert_eq!(filter.kept_classes, vec![0, 2]);
        assert_eq!(filter.remap, vec![Some(0), None, Some(1)]);
        assert_eq!(filter.kept_rows.len(), 50);

        // All classes abundant: label set unchanged.
        let labels: Vec<usize> = (0..3).flat_map(|c| vec![c; 50]).collect();
        let filter = filter_small_classes(&labels, 3, &split, 1).unwrap();
        assert_eq!(filter.kept_classes, vec![0, 1, 2]);

        // Nothing survives.
        let labels = vec![0, 0, 1];
        assert!(matches!(
            filter_small_classes(&labels, 2, &split, 1),
            Err(ClassifierError::NoSurvivingClasses)
        ));
    }

    #[test]
    fn split_is_disjoint_covering_and_matches_allocation() {
        let (records, labels) = separable_data(8);
        let split = SplitSpec { seed: 5, ..Default::default() };
        let indices = split.split(&records, &labels).unwrap();
        let total = indices.train.len() + indices.cv.len() + indices.test.len();
        assert_eq!(total, records.len());
        let mut all: Vec<usize> = indices
            .train
            .iter()
            .chain(&indices.cv)
            .chain(&indices.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), records.len());
        // Per class: exact rounding allocation (60 items: cv 3, test 6).
        for class in 0..3 {
            let count = |rows: &[usize]| rows.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(count(&indices.cv), 3);
            assert_eq!(count(&indices.test), 6);
            assert_eq!(count(&indices.train), 51);
        }
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let records: Vec<FeatureRecord> = (0..30)
            .map(|i| {
                FeatureRecord::new(format!("r{}:-:{}", i / 3, i), vec![i as f64])
            })
            .collect();
        let labels = vec![0usize; 30];
        let split = SplitSpec { group_by_patient: true, seed: 3, ..Default::default() };
        let indices = split.split(&records, &labels).unwrap();
        let bucket_of = |i: usize| -> usize {
            if indices.train.contains(&i) {
                0
            } else if indices.cv.contains(&i) {
                1
            } else {
                2
            }
        };
        for i in 0..30 {
            let group_first = (i / 3) * 3;
            assert_eq!(bucket_of(i), bucket_of(group_first), "row {i} split from its group");
        }
    }

    #[test]
    fn evaluate_perfect_and_random_predictors() {
        // Perfect: train to memorize a tiny separable set.
        let (records, labels) = separable_data(12);
        let mut model = FeedForwardModel::random(&[6, 16, 3], Head::Softmax, 5).unwrap();
        train(
            &mut model,
            &records,
            &Targets::Classes { labels: labels.clone(), n_classes: 3 },
            None,
            &TrainOptions { epochs: 120, base_lr: 0.05, ..Default::default() },
        )
        .unwrap();
        let report = evaluate(&model, &records, &labels, &[1, 5]).unwrap();
        if report.accuracy_at(1) == Some(1.0) {
            for (truth, row) in report.confusion.iter().enumerate() {
                for (pred, &count) in row.iter().enumerate() {
                    if truth != pred {
                        assert_eq!(count, 0);
                    }
                }
            }
        }
        // Uniform-random predictor: zero-weight model gives uniform
        // probabilities; top-1 ties resolve to class 0, so check top-1
        // through the binomial bound on a label-shuffled dataset instead.
        let k = 3.0f64;
        let n = labels.len() as f64;
        let zero = {
            let mut m = FeedForwardModel::random(&[6, 4, 3], Head::Softmax, 1).unwrap();
            for w in &mut m.weights {
                w.iter_mut().for_each(|x| *x = 0.0);
            }
            m
        };
        let report = evaluate(&zero, &records, &labels, &[1]).unwrap();
        let expected = 1.0 / k;
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        let acc = report.accuracy_at(1).unwrap();
        assert!(
            (acc - expected).abs() <= 3.0 * sigma + 1e-9,
            "random-level accuracy {acc} vs {expected} (3 sigma {})",
            3.0 * sigma
        );
    }

    #[test]
    fn gradient_check_passes_for_both_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..3u64 {
            let records: Vec<FeatureRecord> = (0..6)
                .map(|i| {
                    FeatureRecord::new(
                        format!("g{i}:-:0"),
                        (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let softmax_model =
                FeedForwardModel::random(&[5, 7, 4], Head::Softmax, seed).unwrap();
            let labels: Vec<usize> = (0..6).map(|i| i % 4).collect();
            let err = gradient_check(
                &softmax_model,
                &records,
                &Targets::Classes { labels, n_classes: 4 },
            );
            assert!(err <= 1e-4, "softmax head max rel err {err}");

            let regression =
                FeedForwardModel::random(&[5, 7, 6], Head::SigmoidXent, seed + 50).unwrap();
            let targets: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let err = gradient_check(&regression, &records, &Targets::Vectors(targets));
            assert!(err <= 1e-4, "sigmoid head max rel err {err}");
        }
    }

    #[test]
    fn zero_model_zero_input_has_finite_gradients() {
        let mut model = FeedForwardModel::random(&[3, 4, 2], Head::Softmax, 1).unwrap();
        for w in &mut model.weights {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        let records = vec![FeatureRecord::new("z:-:0", vec![0.0, 0.0, 0.0])];
        let (loss, gw, gb) = batch_gradients(
            &model,
            &records,
            &Targets::Classes { labels: vec![1], n_classes: 2 },
            &[0],
        );
        assert!(loss.is_finite());
        assert!(gw.iter().flatten().all(|g| g.is_finite()));
        assert!(gb.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn container_roundtrip() {
        let model = FeedForwardModel::random(&[4, 6, 3], Head::Softmax, 9).unwrap();
        let container = model.to_container();
        let back = FeedForwardModel::from_container(&container).unwrap();
        assert_eq!(back.layer_sizes, model.layer_sizes);
        assert_eq!(back.head, model.head);
        for (a, b) in model.weights.iter().flatten().zip(back.weights.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

//! Training, freeze-and-fine-tune transfer, and width/depth scans.
//!
//! The harness trains a network on a dataset's primary labels, freezes
//! it, fits a fresh linear head on the penultimate features against the
//! alternate labels, and repeats the pair across widths, depths, and
//! seeds to produce accuracy-versus-width tables. All training is
//! cross-entropy under SGD with momentum; accuracy is the exact top-1
//! match count over the test split.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, AugmentationPolicy, LabelScheme, LabeledDataset, Split};
use crate::models::{build_model, param_count, ModelParams, ModelSpec};
use crate::tensor::{backward, softmax_cross_entropy, Optimizer, Tensor};
use crate::util::{derive_seed, linspace, sha256_hex};
use crate::{Error, Result};

/// Step size: a fixed value, or the width rule `1/n` resolved against the
/// penultimate width at train time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    InverseWidth,
}

impl LearningRate {
    pub fn resolve(&self, width: usize) -> Result<f64> {
        match self {
            LearningRate::Constant(v) => Ok(*v),
            LearningRate::InverseWidth => {
                if width == 0 {
                    return Err(Error::contract("1/n rule needs a positive width"));
                }
                Ok(1.0 / width as f64)
            }
        }
    }
}

impl Serialize for LearningRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LearningRate::Constant(v) => s.serialize_f64(*v),
            LearningRate::InverseWidth => s.serialize_str("1/n"),
        }
    }
}

impl<'de> Deserialize<'de> for LearningRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Rule(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(LearningRate::Constant(v)),
            Raw::Rule(s) if s == "1/n" => Ok(LearningRate::InverseWidth),
            Raw::Rule(s) => Err(serde::de::Error::custom(format!(
                "unknown learning-rate rule {s:?}; use a number or \"1/n\""
            ))),
        }
    }
}

/// One training phase. The loss is always cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub momentum: f64,
    /// Applied to training batches only; test data is never augmented.
    pub augmentation: Option<AugmentationPolicy>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: LearningRate::Constant(0.01),
            batch_size: 128,
            momentum: 0.9,
            augmentation: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let LearningRate::Constant(v) = self.learning_rate {
            // Zero is allowed: a no-learning run measures chance level.
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!(
                    "learning rate must be finite and non-negative, got {v}"
                )));
            }
        }
        if let Some(policy) = &self.augmentation {
            policy.validate()?;
        }
        Ok(())
    }

    /// Digest of the serialized config, recorded with every run.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&bytes)
    }

    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// What a run trained, for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum RunModel {
    /// Full network trained end to end.
    Network { spec: ModelSpec },
    /// Linear head over the penultimate features of a frozen backbone.
    Head { backbone: ModelSpec, classes: usize },
    /// Linear map from flattened raw pixels.
    Linear { input_dim: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunRecord {
    pub experiment: String,
    pub model: RunModel,
    /// Label scheme the run trained against.
    pub task: LabelScheme,
    pub classes: usize,
    pub epochs: Vec<EpochStats>,
    /// Max over epochs; the final epoch's accuracy may be lower.
    pub best_test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Final and best-epoch parameters with the shared record.
#[derive(Debug)]
pub struct Trained {
    pub final_model: ModelParams<f32>,
    /// Parameters from the epoch with the highest test accuracy.
    pub best_model: ModelParams<f32>,
    pub record: RunRecord,
}

/// A fitted linear map: logits = features * weight + bias.
#[derive(Debug)]
pub struct LinearFit {
    /// `[features, classes]`.
    pub weight: Tensor<f32>,
    /// `[classes]`.
    pub bias: Tensor<f32>,
    pub record: RunRecord,
}

fn provenance_digest(data: &LabeledDataset) -> String {
    let bytes = serde_json::to_vec(data.provenance()).expect("provenance serializes");
    sha256_hex(&bytes)
}

/// Splits must be a genuine train/test pair with matching labels.
fn check_split_pair(train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
    if train.split() != Split::Train || test.split() != Split::Test {
        return Err(Error::contract(format!(
            "expected a train/test pair, got {:?}/{:?}",
            train.split(),
            test.split()
        )));
    }
    if train.labels().scheme != test.labels().scheme
        || train.labels().classes != test.labels().classes
    {
        return Err(Error::contract(format!(
            "label schemes differ between splits: {:?} ({} classes) vs {:?} ({} classes)",
            train.labels().scheme,
            train.labels().classes,
            test.labels().scheme,
            test.labels().classes
        )));
    }
    if train.dims() != test.dims() {
        return Err(Error::contract(format!(
            "image dims differ between splits: {:?} vs {:?}",
            train.dims(),
            test.dims()
        )));
    }
    if provenance_digest(train) == provenance_digest(test) {
        return Err(Error::contract(
            "train and test splits share a provenance digest; refusing to mix them",
        ));
    }
    Ok(())
}

fn count_correct(logits: &Tensor<f32>, labels: &[u32]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label as usize
        })
        .count()
}

/// Mean loss and exact top-1 accuracy of a frozen model over a dataset.
fn evaluate_model(
    frozen: &ModelParams<f32>,
    data: &LabeledDataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = data.batch(chunk)?;
        let pass = frozen.forward(&x)?;
        let loss = softmax_cross_entropy(pass.logits(), &labels)?;
        loss_sum += loss.item()? as f64 * chunk.len() as f64;
        correct += count_correct(pass.logits(), &labels);
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

fn numeric_at(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| Error::numeric(format!("training diverged at epoch {epoch}, batch {batch}: {e}"))
}

/// Train a model from scratch on the dataset's primary labels.
///
/// Each epoch runs shuffled mini-batches through optional augmentation,
/// cross-entropy, and SGD with momentum, then evaluates on the test
/// split. A non-finite loss aborts with the epoch and batch index.
pub fn train(
    spec: &ModelSpec,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    config: &TrainConfig,
    experiment: &str,
) -> Result<Trained> {
    config.validate()?;
    check_split_pair(train_data, test_data)?;
    if spec.classes() != train_data.labels().classes {
        return Err(Error::contract(format!(
            "model outputs {} classes but labels have {}",
            spec.classes(),
            train_data.labels().classes
        )));
    }
    let started = Instant::now();
    let lr = config.learning_rate.resolve(spec.penultimate_width())?;
    let mut model = build_model::<f32>(spec, derive_seed(config.seed, "train-init", 0))?;
    let mut optimizer = Optimizer::sgd_momentum(lr, config.momentum)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train-shuffle", 0));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train-augment", 0));

    let mut indices: Vec<usize> = (0..train_data.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    for epoch in 0..config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch, chunk) in indices.chunks(config.batch_size).enumerate() {
            let at = numeric_at(epoch, batch);
            let (x, labels) = train_data.batch(chunk)?;
            let x = match &config.augmentation {
                Some(policy) => augment_batch(&x, policy, &mut augment_rng)?,
                None => x,
            };
            let pass = model.forward(&x).map_err(&at)?;
            let loss = softmax_cross_entropy(pass.logits(), &labels)
                .map_err(Error::from)
                .map_err(&at)?;
            let value = loss.item().map_err(Error::from).map_err(&at)? as f64;
            if !value.is_finite() {
                return Err(at(Error::numeric("loss is not finite")));
            }
            loss_sum += value * chunk.len() as f64;
            correct += count_correct(pass.logits(), &labels);
            let grads = backward(&loss).map_err(Error::from).map_err(&at)?;
            optimizer
                .step(model.params_mut(), &grads)
                .map_err(Error::from)
                .map_err(&at)?;
        }
        let (test_loss, test_accuracy) =
            evaluate_model(&model.frozen(), test_data, config.batch_size)?;
        epochs.push(EpochStats {
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy: correct as f64 / train_data.len() as f64,
            test_loss,
            test_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| test_accuracy > *acc) {
            best = Some((test_accuracy, model.clone()));
        }
    }

    let (best_test_accuracy, best_model) = best.expect("at least one epoch ran");
    let record = RunRecord {
        experiment: experiment.to_string(),
        model: RunModel::Network { spec: spec.clone() },
        task: train_data.labels().scheme,
        classes: train_data.labels().classes,
        final_test_accuracy: epochs.last().expect("epochs nonempty").test_accuracy,
        best_test_accuracy,
        epochs,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: config.seed,
        config_hash: config.hash(),
    };
    Ok(Trained {
        final_model: model,
        best_model,
        record,
    })
}

/// Per-batch feature source for linear fits.
enum FeatureSource<'a> {
    /// Penultimate activations of a frozen backbone.
    Frozen(&'a ModelParams<f32>),
    /// Flattened pixels.
    RawPixels,
}

impl FeatureSource<'_> {
    fn dim(&self, data: &LabeledDataset) -> usize {
        match self {
            FeatureSource::Frozen(model) => model.spec().penultimate_width(),
            FeatureSource::RawPixels => data.input_dim(),
        }
    }

    /// Features for an image batch, `[n, dim]`, detached from any model.
    fn features(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            FeatureSource::Frozen(model) => Ok(model.forward(x)?.penultimate().clone()),
            FeatureSource::RawPixels => {
                let n = x.shape()[0];
                let d: usize = x.shape()[1..].iter().product();
                x.reshape(&[n, d]).map_err(Error::from)
            }
        }
    }

    /// Whole-dataset feature matrix, collected in fixed-size batches.
    fn all_features(&self, data: &LabeledDataset) -> Result<Tensor<f32>> {
        let dim = self.dim(data);
        let mut out = Vec::with_capacity(data.len() * dim);
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(256) {
            let (x, _) = data.batch(chunk)?;
            out.extend_from_slice(self.features(&x)?.data());
        }
        Tensor::from_vec(out, &[data.len(), dim]).map_err(Error::from)
    }
}

/// One backward pass through backbone plus head, asserting that gradients
/// reach the head and only the head.
fn assert_gradient_isolation(
    frozen: &ModelParams<f32>,
    data: &LabeledDataset,
    weight: &Tensor<f32>,
    bias: &Tensor<f32>,
) -> Result<()> {
    let probe: Vec<usize> = (0..data.len().min(8)).collect();
    let (x, labels) = data.batch(&probe)?;
    let feats = frozen.forward(&x)?.penultimate().clone();
    let logits = feats.matmul(weight)?.add(bias)?;
    let loss = softmax_cross_entropy(&logits, &labels)?;
    let grads = backward(&loss)?;
    for (i, p) in frozen.params().iter().enumerate() {
        if grads.get(p).is_some() {
            return Err(Error::contract(format!(
                "gradient reached frozen parameter {i}; freezing is broken"
            )));
        }
    }
    if grads.get(weight).is_none() || grads.get(bias).is_none() {
        return Err(Error::contract("head parameters received no gradient"));
    }
    Ok(())
}

/// Shared trainer behind [`finetune_head`] and [`linear_baseline`]: fit
/// `softmax(features * W + b)` by SGD with momentum.
fn fit_linear(
    source: &FeatureSource<'_>,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    config: &TrainConfig,
    experiment: &str,
    model: RunModel,
) -> Result<LinearFit> {
    config.validate()?;
    check_split_pair(train_data, test_data)?;
    let started = Instant::now();
    let dim = source.dim(train_data);
    let classes = train_data.labels().classes;
    let lr = config.learning_rate.resolve(dim)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "head-init", 0));
    let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt())
        .map_err(|e| Error::numeric(format!("head init: {e}")))?;
    let w0: Vec<f32> = (0..dim * classes)
        .map(|_| normal.sample(&mut init_rng) as f32)
        .collect();
    let mut weight = Tensor::param(w0, &[dim, classes])?;
    let mut bias = Tensor::param(vec![0.0; classes], &[classes])?;

    if let FeatureSource::Frozen(backbone) = source {
        assert_gradient_isolation(backbone, train_data, &weight, &bias)?;
    }

    // Frozen features never change, so without augmentation one pass over
    // the backbone serves every epoch.
    let cache_train = config.augmentation.is_none();
    let train_feats = if cache_train {
        Some(source.all_features(train_data)?)
    } else {
        None
    };
    let test_feats = source.all_features(test_data)?;
    let test_labels: Vec<u32> = (0..test_data.len()).map(|i| test_data.label(i)).collect();

    let mut optimizer = Optimizer::sgd_momentum(lr, config.momentum)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "head-shuffle", 0));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "head-augment", 0));
    let mut indices: Vec<usize> = (0..train_data.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Tensor<f32>, Tensor<f32>)> = None;
    for epoch in 0..config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch, chunk) in indices.chunks(config.batch_size).enumerate() {
            let at = numeric_at(epoch, batch);
            let (feats, labels) = match &train_feats {
                Some(cached) => {
                    let mut rows = Vec::with_capacity(chunk.len() * dim);
                    let mut labels = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        rows.extend_from_slice(&cached.data()[i * dim..(i + 1) * dim]);
                        labels.push(train_data.label(i));
                    }
                    (Tensor::from_vec(rows, &[chunk.len(), dim])?, labels)
                }
                None => {
                    let (x, labels) = train_data.batch(chunk)?;
                    let policy = config.augmentation.as_ref().expect("uncached means augmented");
                    let x = augment_batch(&x, policy, &mut augment_rng)?;
                    (source.features(&x).map_err(&at)?, labels)
                }
            };
            let logits = feats.matmul(&weight).map_err(Error::from).map_err(&at)?;
            let logits = logits.add(&bias).map_err(Error::from).map_err(&at)?;
            let loss = softmax_cross_entropy(&logits, &labels)
                .map_err(Error::from)
                .map_err(&at)?;
            let value = loss.item().map_err(Error::from).map_err(&at)? as f64;
            if !value.is_finite() {
                return Err(at(Error::numeric("loss is not finite")));
            }
            loss_sum += value * chunk.len() as f64;
            correct += count_correct(&logits, &labels);
            let grads = backward(&loss).map_err(Error::from).map_err(&at)?;
            let mut params = [weight, bias];
            optimizer
                .step(&mut params, &grads)
                .map_err(Error::from)
                .map_err(&at)?;
            [weight, bias] = params;
        }
        let test_logits = test_feats.matmul(&weight.detach())?.add(&bias.detach())?;
        let test_loss = softmax_cross_entropy(&test_logits, &test_labels)?.item()? as f64;
        let test_accuracy = count_correct(&test_logits, &test_labels) as f64 / test_data.len() as f64;
        epochs.push(EpochStats {
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy: correct as f64 / train_data.len() as f64,
            test_loss,
            test_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| test_accuracy > *acc) {
            best = Some((test_accuracy, weight.clone(), bias.clone()));
        }
    }

    let (best_test_accuracy, best_weight, best_bias) = best.expect("at least one epoch ran");
    let record = RunRecord {
        experiment: experiment.to_string(),
        model,
        task: train_data.labels().scheme,
        classes,
        final_test_accuracy: epochs.last().expect("epochs nonempty").test_accuracy,
        best_test_accuracy,
        epochs,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: config.seed,
        config_hash: config.hash(),
    };
    Ok(LinearFit {
        weight: best_weight.detach(),
        bias: best_bias.detach(),
        record,
    })
}

/// Fit a fresh linear head on the frozen model's penultimate features.
///
/// The head is initialized N(0, 1/n) and trained on the dataset's primary
/// labels, which may count a different number of classes than the
/// original task. No gradient reaches the backbone (asserted), and the
/// backbone is bit-identical before and after (checked).
pub fn finetune_head(
    frozen: &ModelParams<f32>,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    config: &TrainConfig,
    experiment: &str,
) -> Result<LinearFit> {
    let before = frozen.content_hash();
    let detached = frozen.frozen();
    let fit = fit_linear(
        &FeatureSource::Frozen(&detached),
        train_data,
        test_data,
        config,
        experiment,
        RunModel::Head {
            backbone: frozen.spec().clone(),
            classes: train_data.labels().classes,
        },
    )?;
    if frozen.content_hash() != before {
        return Err(Error::contract(
            "frozen parameters changed during fine-tuning",
        ));
    }
    Ok(fit)
}

/// Train a linear classifier on flattened raw pixels.
pub fn linear_baseline(
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    config: &TrainConfig,
    experiment: &str,
) -> Result<LinearFit> {
    fit_linear(
        &FeatureSource::RawPixels,
        train_data,
        test_data,
        config,
        experiment,
        RunModel::Linear {
            input_dim: train_data.input_dim(),
            classes: train_data.labels().classes,
        },
    )
}

/// Network family a scan sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanArchitecture {
    /// Width and depth both vary; input flattened.
    Mlp,
    /// Two conv blocks with the filter count tied to the penultimate
    /// width; points must use depth 1.
    Cnn,
}

/// One (width, depth) grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPoint {
    /// Penultimate layer width.
    pub width: usize,
    /// Hidden layers; meaningful for MLPs only.
    pub depth: usize,
}

/// Equal-parameter (width, depth) points: each depth gets the width that
/// keeps the MLP's parameter count at the single-layer `max_width` level.
pub fn constant_parameter_points(
    depths: &[usize],
    input_dim: usize,
    output_dim: usize,
    max_width: usize,
) -> Result<Vec<ScanPoint>> {
    depths
        .iter()
        .map(|&depth| {
            let plan = crate::models::plan_width(depth, input_dim, output_dim, max_width)?;
            Ok(ScanPoint {
                width: plan.width,
                depth,
            })
        })
        .collect()
}

fn default_seeds_per_point() -> usize {
    5
}

/// Full description of a width/depth transfer scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScanSpec {
    pub experiment: String,
    pub architecture: ScanArchitecture,
    /// May load empty when the points come from a depth grid; `validate`
    /// still rejects running an empty scan.
    #[serde(default)]
    pub points: Vec<ScanPoint>,
    #[serde(default = "default_seeds_per_point")]
    pub seeds_per_point: usize,
    /// Original-task phase.
    pub train: TrainConfig,
    /// New-task head phase.
    pub finetune: TrainConfig,
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::contract("scan needs at least one point"));
        }
        if self.seeds_per_point == 0 {
            return Err(Error::contract("scan needs at least one seed per point"));
        }
        self.train.validate()?;
        self.finetune.validate()
    }

    fn spec_for(&self, point: ScanPoint, data: &LabeledDataset) -> Result<ModelSpec> {
        let classes = data.labels().classes;
        match self.architecture {
            ScanArchitecture::Mlp => Ok(ModelSpec::mlp(
                data.input_dim(),
                point.width,
                point.depth,
                classes,
            )),
            ScanArchitecture::Cnn => {
                if point.depth != 1 {
                    return Err(Error::contract(format!(
                        "conv scan points use the fixed architecture; depth must be 1, got {}",
                        point.depth
                    )));
                }
                let (c, h, w) = data.dims();
                ModelSpec::cnn(c, h, w, point.width, classes)
            }
        }
    }
}

/// One failed replicate; the scan keeps going around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub point: usize,
    pub replicate: usize,
    pub phase: String,
    pub message: String,
}

/// Aggregate row: accuracy statistics for one point on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPointSummary {
    pub width: usize,
    pub depth: usize,
    pub params: usize,
    pub task: LabelScheme,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// Everything a scan produced.
#[derive(Debug)]
pub struct ScanOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<ScanFailure>,
    /// Two rows per point with at least one success: original task first,
    /// then the fine-tuned task.
    pub table: Vec<ScanPointSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the full scan: per point and seed, train on the primary labels,
/// then fine-tune a head on the alternate labels.
///
/// Both datasets must carry alternate labels. Replicate failures are
/// recorded and skipped; the aggregate table covers whatever succeeded.
pub fn run_scan(
    scan: &ScanSpec,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
) -> Result<ScanOutcome> {
    scan.validate()?;
    check_split_pair(train_data, test_data)?;
    if train_data.alt_labels().is_none() || test_data.alt_labels().is_none() {
        return Err(Error::contract(
            "transfer scan needs datasets carrying both label schemes",
        ));
    }
    let train_new = train_data.with_alt_primary()?;
    let test_new = test_data.with_alt_primary()?;

    let jobs: Vec<(usize, usize)> = (0..scan.points.len())
        .flat_map(|p| (0..scan.seeds_per_point).map(move |r| (p, r)))
        .collect();
    type JobOutput = std::result::Result<(RunRecord, RunRecord), (String, String)>;
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(point_idx, replicate)| {
            let point = scan.points[point_idx];
            let seed = derive_seed(
                derive_seed(0, &scan.experiment, point_idx as u64),
                "scan-replicate",
                replicate as u64,
            );
            let id = |phase: &str| {
                format!(
                    "{}/w{}d{}/seed{}/{}",
                    scan.experiment, point.width, point.depth, replicate, phase
                )
            };
            let trained = (|| {
                let spec = scan.spec_for(point, train_data)?;
                train(
                    &spec,
                    train_data,
                    test_data,
                    &scan.train.with_seed(seed),
                    &id("original"),
                )
            })()
            .map_err(|e| ("train".to_string(), e.to_string()))?;
            let tuned = finetune_head(
                &trained.final_model,
                &train_new,
                &test_new,
                &scan.finetune.with_seed(derive_seed(seed, "scan-finetune", 0)),
                &id("finetuned"),
            )
            .map_err(|e| ("finetune".to_string(), e.to_string()))?;
            Ok((trained.record, tuned.record))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut per_point: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); scan.points.len()];
    for (&(point, replicate), output) in jobs.iter().zip(outputs) {
        match output {
            Ok((orig, tuned)) => {
                per_point[point].0.push(orig.best_test_accuracy);
                per_point[point].1.push(tuned.best_test_accuracy);
                records.push(orig);
                records.push(tuned);
            }
            Err((phase, message)) => failures.push(ScanFailure {
                point,
                replicate,
                phase,
                message,
            }),
        }
    }

    let mut table = Vec::new();
    for (idx, (orig_accs, tuned_accs)) in per_point.iter().enumerate() {
        if orig_accs.is_empty() {
            continue;
        }
        let point = scan.points[idx];
        let params = scan
            .spec_for(point, train_data)
            .map(|s| param_count(&s))
            .unwrap_or(0);
        for (task_data, accs) in [(train_data, orig_accs), (&train_new, tuned_accs)] {
            if accs.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(accs);
            table.push(ScanPointSummary {
                width: point.width,
                depth: point.depth,
                params,
                task: task_data.labels().scheme,
                mean,
                std,
                n_seeds: accs.len(),
            });
        }
    }
    Ok(ScanOutcome {
        records,
        failures,
        table,
    })
}

/// One grid point of a learning-rate scan.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LrScanPoint {
    pub learning_rate: f64,
    pub mean_best_accuracy: f64,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LrScanOutcome {
    /// Argmax of the mean best test accuracy over the grid.
    pub best_rate: f64,
    pub points: Vec<LrScanPoint>,
}

/// Run `experiment` once per rate and pick the one with the highest mean
/// best test accuracy. A one-point grid returns that point.
pub fn lr_scan<F>(rates: &[f64], mut experiment: F) -> Result<LrScanOutcome>
where
    F: FnMut(f64) -> Result<Vec<RunRecord>>,
{
    if rates.is_empty() {
        return Err(Error::contract("learning-rate scan needs at least one rate"));
    }
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let records = experiment(rate)?;
        if records.is_empty() {
            return Err(Error::contract(format!(
                "experiment at rate {rate} produced no records"
            )));
        }
        let mean = records.iter().map(|r| r.best_test_accuracy).sum::<f64>()
            / records.len() as f64;
        points.push(LrScanPoint {
            learning_rate: rate,
            mean_best_accuracy: mean,
            records,
        });
    }
    let best = points
        .iter()
        .max_by(|a, b| a.mean_best_accuracy.total_cmp(&b.mean_best_accuracy))
        .expect("grid nonempty");
    Ok(LrScanOutcome {
        best_rate: best.learning_rate,
        points,
    })
}

/// `10^x` for `n` linearly spaced exponents from -1 to -3.
fn decade_grid(n: usize) -> Vec<f64> {
    linspace(-1.0, -3.0, n).into_iter().map(|x| 10f64.powf(x)).collect()
}

/// Five-point learning-rate grid for the translated-digits experiments.
pub fn mnist_lr_grid() -> Vec<f64> {
    decade_grid(5)
}

/// Ten-point grid for the natural-image experiments; contains 0.0129.
pub fn cifar_lr_grid() -> Vec<f64> {
    decade_grid(10)
}

/// Write a record as pretty JSON, atomically (write-then-rename).
pub fn save_run_record(path: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_vec_pretty(record).map_err(|e| Error::Serde(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, &json)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_run_record(path: &Path) -> Result<RunRecord> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// Aggregate table as CSV: `width,depth,params,task,mean,std,n-seeds`.
pub fn write_scan_csv<W: Write>(mut w: W, table: &[ScanPointSummary]) -> Result<()> {
    writeln!(w, "width,depth,params,task,mean,std,n-seeds")?;
    for row in table {
        let task = serde_json::to_value(row.task)
            .map_err(|e| Error::Serde(e.to_string()))?
            .as_str()
            .expect("scheme serializes to a string")
            .to_string();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.width, row.depth, row.params, task, row.mean, row.std, row.n_seeds
        )?;
    }
    Ok(())
}

pub fn save_scan_csv(path: &Path, table: &[ScanPointSummary]) -> Result<()> {
    let mut buf = Vec::new();
    write_scan_csv(&mut buf, table)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Inverse of [`write_scan_csv`]; rejects a wrong header or malformed rows.
pub fn read_scan_csv(text: &str) -> Result<Vec<ScanPointSummary>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim_end();
    if header != "width,depth,params,task,mean,std,n-seeds" {
        return Err(Error::contract(format!("not a scan table, header is {header:?}")));
    }
    let mut table = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::contract(format!(
                "scan table row {} has {} fields, not 7",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::contract(format!("scan table row {}: bad {what}", i + 2));
        let task: LabelScheme =
            serde_json::from_value(serde_json::Value::String(fields[3].to_string()))
                .map_err(|_| bad("task"))?;
        table.push(ScanPointSummary {
            width: fields[0].parse().map_err(|_| bad("width"))?,
            depth: fields[1].parse().map_err(|_| bad("depth"))?,
            params: fields[2].parse().map_err(|_| bad("params"))?,
            task,
            mean: fields[4].parse().map_err(|_| bad("mean"))?,
            std: fields[5].parse().map_err(|_| bad("std"))?,
            n_seeds: fields[6].parse().map_err(|_| bad("n-seeds"))?,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Labels, Provenance};
    use rand::Rng;

    /// Four prototype patterns on a 4x4 canvas: a brightness bit (the
    /// primary task) crossed with a left/right stripe bit. Both tasks are
    /// linearly separable from pixels.
    fn two_task_blobs(count: usize, split: Split, seed: u64) -> LabeledDataset {
        let (h, w) = (4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "blobs", 0));
        let mut images = Vec::with_capacity(count * h * w);
        let mut primary = Vec::with_capacity(count);
        let mut alt = Vec::with_capacity(count);
        for i in 0..count {
            let proto = i % 4;
            let bright = proto & 1;
            let stripe = proto >> 1;
            for _y in 0..h {
                for x in 0..w {
                    let base = if bright == 1 { 0.7 } else { 0.25 };
                    let striped = (stripe == 1) == (x < w / 2);
                    let v = base + if striped { 0.2 } else { 0.0 } + rng.gen_range(-0.05..0.05);
                    images.push((v as f32).clamp(0.0, 1.0));
                }
            }
            primary.push(bright as u32);
            alt.push(proto as u32);
        }
        LabeledDataset::new(
            images,
            (1, h, w),
            Labels {
                scheme: LabelScheme::Digit,
                classes: 2,
                values: primary,
            },
            Some(Labels {
                scheme: LabelScheme::Fine,
                classes: 4,
                values: alt,
            }),
            split,
            Provenance {
                sources: vec![],
                seed: Some(seed),
                note: format!("blobs-{split:?}"),
            },
        )
        .unwrap()
    }

    fn quick_config(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: LearningRate::Constant(lr),
            batch_size: 16,
            momentum: 0.9,
            augmentation: None,
            seed,
        }
    }

    #[test]
    fn learning_rate_forms_resolve_and_round_trip() {
        assert_eq!(LearningRate::Constant(0.05).resolve(100).unwrap(), 0.05);
        assert_eq!(LearningRate::InverseWidth.resolve(2048).unwrap(), 1.0 / 2048.0);
        assert!(LearningRate::InverseWidth.resolve(0).is_err());

        let json = serde_json::to_string(&LearningRate::InverseWidth).unwrap();
        assert_eq!(json, "\"1/n\"");
        let back: LearningRate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, LearningRate::InverseWidth);
        let num: LearningRate = serde_json::from_str("0.0129").unwrap();
        assert_eq!(num, LearningRate::Constant(0.0129));
        assert!(serde_json::from_str::<LearningRate>("\"2/n\"").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok.clone() }.validate().is_err());
        let neg = TrainConfig {
            learning_rate: LearningRate::Constant(-0.1),
            ..ok
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn train_learns_a_separable_task() {
        let train_data = two_task_blobs(80, Split::Train, 1);
        let test_data = two_task_blobs(40, Split::Test, 2);
        let spec = ModelSpec::mlp(16, 32, 1, 2);
        let out = train(&spec, &train_data, &test_data, &quick_config(6, 0.05, 0), "t").unwrap();
        assert_eq!(out.record.epochs.len(), 6);
        assert!(
            out.record.final_test_accuracy >= 0.95,
            "accuracy {}",
            out.record.final_test_accuracy
        );
        let max = out
            .record
            .epochs
            .iter()
            .map(|e| e.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.record.best_test_accuracy, max);
        assert!(out.record.wall_time_s > 0.0);
        assert_eq!(out.record.task, LabelScheme::Digit);
    }

    #[test]
    fn train_is_seed_deterministic() {
        let train_data = two_task_blobs(40, Split::Train, 1);
        let test_data = two_task_blobs(20, Split::Test, 2);
        let spec = ModelSpec::mlp(16, 8, 1, 2);
        let a = train(&spec, &train_data, &test_data, &quick_config(3, 0.05, 7), "t").unwrap();
        let b = train(&spec, &train_data, &test_data, &quick_config(3, 0.05, 7), "t").unwrap();
        assert_eq!(a.record.epochs, b.record.epochs);
        for (x, y) in a.final_model.params().iter().zip(b.final_model.params()) {
            assert_eq!(x.data(), y.data());
        }
        let c = train(&spec, &train_data, &test_data, &quick_config(3, 0.05, 8), "t").unwrap();
        assert_ne!(a.record.epochs[0].train_loss, c.record.epochs[0].train_loss);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let train_data = two_task_blobs(40, Split::Train, 1);
        let test_data = two_task_blobs(20, Split::Test, 2);
        let spec = ModelSpec::mlp(16, 8, 1, 2);
        let err = train(&spec, &train_data, &test_data, &quick_config(2, 1e38, 0), "t")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epoch 0"), "{err}");
        assert!(err.contains("batch"), "{err}");
    }

    #[test]
    fn split_mixing_is_rejected() {
        let train_data = two_task_blobs(20, Split::Train, 1);
        let also_train = two_task_blobs(20, Split::Train, 2);
        let spec = ModelSpec::mlp(16, 8, 1, 2);
        let err = train(&spec, &train_data, &also_train, &quick_config(1, 0.01, 0), "t")
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");

        // Same provenance on both sides is refused even with the right
        // split tags.
        let twin = LabeledDataset::new(
            train_data.images().to_vec(),
            train_data.dims(),
            train_data.labels().clone(),
            None,
            Split::Test,
            train_data.provenance().clone(),
        )
        .unwrap();
        let err = train(&spec, &train_data, &twin, &quick_config(1, 0.01, 0), "t").unwrap_err();
        assert!(err.to_string().contains("provenance"), "{err}");
    }

    #[test]
    fn finetune_keeps_backbone_frozen_and_learns_alt_task() {
        let train_data = two_task_blobs(120, Split::Train, 1);
        let test_data = two_task_blobs(60, Split::Test, 2);
        let spec = ModelSpec::mlp(16, 32, 1, 2);
        let trained = train(&spec, &train_data, &test_data, &quick_config(6, 0.05, 0), "t").unwrap();
        let hash_before = trained.final_model.content_hash();

        let tuned = finetune_head(
            &trained.final_model,
            &train_data.with_alt_primary().unwrap(),
            &test_data.with_alt_primary().unwrap(),
            &quick_config(20, 0.1, 3),
            "t/fine",
        )
        .unwrap();
        assert_eq!(trained.final_model.content_hash(), hash_before);
        assert_eq!(tuned.weight.shape(), &[32, 4]);
        assert_eq!(tuned.record.classes, 4);
        assert_eq!(tuned.record.task, LabelScheme::Fine);
        assert!(
            tuned.record.best_test_accuracy >= 0.8,
            "alt-task accuracy {}",
            tuned.record.best_test_accuracy
        );
    }

    #[test]
    fn head_retrain_on_original_matches_original() {
        let train_data = two_task_blobs(80, Split::Train, 1);
        let test_data = two_task_blobs(40, Split::Test, 2);
        let spec = ModelSpec::mlp(16, 32, 1, 2);
        let trained = train(&spec, &train_data, &test_data, &quick_config(6, 0.05, 0), "t").unwrap();
        let retrained = finetune_head(
            &trained.final_model,
            &train_data,
            &test_data,
            &quick_config(20, 0.1, 1),
            "t/retrain",
        )
        .unwrap();
        assert!(
            retrained.record.best_test_accuracy >= trained.record.best_test_accuracy - 0.01,
            "retrained head lost accuracy: {} vs {}",
            retrained.record.best_test_accuracy,
            trained.record.best_test_accuracy
        );
    }

    #[test]
    fn finetune_rejects_mismatched_schemes() {
        let train_data = two_task_blobs(20, Split::Train, 1);
        let test_data = two_task_blobs(20, Split::Test, 2).with_alt_primary().unwrap();
        let spec = ModelSpec::mlp(16, 8, 1, 2);
        let trained = train(
            &spec,
            &train_data,
            &two_task_blobs(20, Split::Test, 3),
            &quick_config(1, 0.01, 0),
            "t",
        )
        .unwrap();
        let err = finetune_head(
            &trained.final_model,
            &train_data,
            &test_data,
            &quick_config(1, 0.01, 0),
            "t/fine",
        )
        .unwrap_err();
        assert!(err.to_string().contains("scheme"), "{err}");
    }

    #[test]
    fn linear_baseline_learns_pixels_and_lr_zero_is_chance() {
        let train_data = two_task_blobs(80, Split::Train, 1);
        let test_data = two_task_blobs(40, Split::Test, 2);
        let fit = linear_baseline(&train_data, &test_data, &quick_config(15, 0.1, 0), "b").unwrap();
        assert!(
            fit.record.best_test_accuracy >= 0.95,
            "baseline accuracy {}",
            fit.record.best_test_accuracy
        );
        assert!(matches!(fit.record.model, RunModel::Linear { input_dim: 16, classes: 2 }));

        // No learning: accuracy stays at the chance level of the best
        // constant prediction (balanced classes, about 1/2).
        let frozen = linear_baseline(&train_data, &test_data, &quick_config(1, 0.0, 0), "b0").unwrap();
        assert!(
            (frozen.record.best_test_accuracy - 0.5).abs() <= 0.02,
            "chance-level accuracy {}",
            frozen.record.best_test_accuracy
        );
    }

    #[test]
    fn scan_aggregates_and_survives_point_failures() {
        let train_data = two_task_blobs(60, Split::Train, 1);
        let test_data = two_task_blobs(30, Split::Test, 2);
        // Width 6 is not a valid conv penultimate (not a multiple of 4);
        // those replicates fail while width 8 proceeds.
        let scan = ScanSpec {
            experiment: "mixed".into(),
            architecture: ScanArchitecture::Cnn,
            points: vec![ScanPoint { width: 6, depth: 1 }, ScanPoint { width: 8, depth: 1 }],
            seeds_per_point: 2,
            train: quick_config(1, 0.02, 0),
            finetune: quick_config(2, 0.05, 0),
        };
        let out = run_scan(&scan, &train_data, &test_data).unwrap();
        assert_eq!(out.failures.len(), 2);
        assert!(out.failures.iter().all(|f| f.point == 0 && f.phase == "train"));
        assert!(out.failures[0].message.contains("multiple of 4"));
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.table.len(), 2);
        assert!(out.table.iter().all(|row| row.width == 8 && row.n_seeds == 2));
        assert_eq!(out.table[0].task, LabelScheme::Digit);
        assert_eq!(out.table[1].task, LabelScheme::Fine);
        assert!(out.table[0].params > 0);

        let again = run_scan(&scan, &train_data, &test_data).unwrap();
        assert_eq!(out.table, again.table);
    }

    #[test]
    fn scan_requires_alternate_labels() {
        let strip = |d: &LabeledDataset| {
            LabeledDataset::new(
                d.images().to_vec(),
                d.dims(),
                d.labels().clone(),
                None,
                d.split(),
                d.provenance().clone(),
            )
            .unwrap()
        };
        let train_data = strip(&two_task_blobs(20, Split::Train, 1));
        let test_data = strip(&two_task_blobs(20, Split::Test, 2));
        let scan = ScanSpec {
            experiment: "nolabels".into(),
            architecture: ScanArchitecture::Mlp,
            points: vec![ScanPoint { width: 4, depth: 1 }],
            seeds_per_point: 1,
            train: quick_config(1, 0.01, 0),
            finetune: quick_config(1, 0.01, 0),
        };
        let err = run_scan(&scan, &train_data, &test_data).unwrap_err();
        assert!(err.to_string().contains("both label schemes"), "{err}");
    }

    #[test]
    fn constant_parameter_points_follow_the_width_plan() {
        let points = constant_parameter_points(&[1, 2, 5], 784, 28, 2000).unwrap();
        assert_eq!(points[0], ScanPoint { width: 2000, depth: 1 });
        for (point, &depth) in points.iter().zip(&[1usize, 2, 5]) {
            assert_eq!(point.depth, depth);
            let plan = crate::models::plan_width(depth, 784, 28, 2000).unwrap();
            assert_eq!(point.width, plan.width);
        }
    }

    #[test]
    fn lr_scan_picks_the_best_mean() {
        let mut seen = Vec::new();
        let out = lr_scan(&[0.1, 0.01, 0.001], |rate| {
            seen.push(rate);
            let acc = if rate == 0.01 { 0.9 } else { 0.5 };
            Ok(vec![RunRecord {
                experiment: format!("lr{rate}"),
                model: RunModel::Linear { input_dim: 4, classes: 2 },
                task: LabelScheme::Digit,
                classes: 2,
                epochs: vec![],
                best_test_accuracy: acc,
                final_test_accuracy: acc,
                wall_time_s: 0.0,
                seed: 0,
                config_hash: "h".into(),
            }])
        })
        .unwrap();
        assert_eq!(out.best_rate, 0.01);
        assert_eq!(seen, vec![0.1, 0.01, 0.001]);
        assert_eq!(out.points.len(), 3);

        let single = lr_scan(&[0.05], |_| {
            Ok(vec![RunRecord {
                experiment: "one".into(),
                model: RunModel::Linear { input_dim: 1, classes: 2 },
                task: LabelScheme::Digit,
                classes: 2,
                epochs: vec![],
                best_test_accuracy: 0.7,
                final_test_accuracy: 0.7,
                wall_time_s: 0.0,
                seed: 0,
                config_hash: "h".into(),
            }])
        })
        .unwrap();
        assert_eq!(single.best_rate, 0.05);
        assert!(lr_scan(&[], |_| Ok(vec![])).is_err());
    }

    #[test]
    fn lr_grids_match_the_printed_exponents() {
        let mnist = mnist_lr_grid();
        let expected = [0.1, 10f64.powf(-1.5), 0.01, 10f64.powf(-2.5), 0.001];
        assert_eq!(mnist.len(), 5);
        for (a, b) in mnist.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let cifar = cifar_lr_grid();
        assert_eq!(cifar.len(), 10);
        let target = 10f64.powf(-17.0 / 9.0);
        assert!((target - 0.0129).abs() < 1e-4);
        let closest = cifar.iter().map(|v| (v - target).abs()).fold(f64::MAX, f64::min);
        assert!(closest < 1e-12, "grid misses 0.0129: {cifar:?}");
    }

    #[test]
    fn run_records_round_trip_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let record = RunRecord {
            experiment: "demo".into(),
            model: RunModel::Network { spec: ModelSpec::mlp(4, 3, 1, 2) },
            task: LabelScheme::Digit,
            classes: 2,
            epochs: vec![EpochStats {
                train_loss: 0.5,
                train_accuracy: 0.8,
                test_loss: 0.6,
                test_accuracy: 0.75,
            }],
            best_test_accuracy: 0.75,
            final_test_accuracy: 0.75,
            wall_time_s: 1.25,
            seed: 9,
            config_hash: "cafe".into(),
        };
        save_run_record(&path, &record).unwrap();
        assert_eq!(load_run_record(&path).unwrap(), record);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn scan_csv_echoes_the_table() {
        let table = vec![
            ScanPointSummary {
                width: 784,
                depth: 1,
                params: 12345,
                task: LabelScheme::Shift,
                mean: 0.9625,
                std: 0.004,
                n_seeds: 5,
            },
            ScanPointSummary {
                width: 784,
                depth: 1,
                params: 12345,
                task: LabelScheme::Digit,
                mean: 0.871,
                std: 0.011,
                n_seeds: 5,
            },
        ];
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &table).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "width,depth,params,task,mean,std,n-seeds");
        assert_eq!(lines[1], "784,1,12345,shift,0.9625,0.004,5");
        assert_eq!(lines[2], "784,1,12345,digit,0.871,0.011,5");

        assert_eq!(read_scan_csv(&text).unwrap(), table);
        let err = read_scan_csv("nope\n1,2,3").unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
        let err = read_scan_csv(&format!("{}\n1,2,3", lines[0])).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}

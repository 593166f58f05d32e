//! `train`: fit one network on a cached dataset and checkpoint it.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::data::AugmentationPolicy;
use atlasbench_core::models::{save_checkpoint, ModelSpec};
use atlasbench_core::transfer::{save_run_record, train, LearningRate, TrainConfig};

use crate::common;

/// Network family for a single training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Fully-connected ReLU stack; input is flattened.
    Mlp,
    /// Two conv blocks; filter counts tied to the penultimate width.
    Cnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct TrainCommandConfig {
    pub model: ModelKind,
    /// Penultimate layer width.
    pub width: usize,
    /// Hidden layers (MLP only; the CNN shape is fixed).
    pub depth: usize,
    pub dataset: String,
    /// Train against the alternate labeling instead of the primary one.
    pub swap_labels: bool,
    /// Seeded cap on the train split; 0 keeps everything.
    pub limit_train: usize,
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub momentum: f64,
    /// Shift/rotate/flip augmentation with per-channel mean fill.
    pub augment: bool,
    pub seed: u64,
    /// Label recorded in the run record; derived from the model if empty.
    pub experiment: String,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            model: ModelKind::Mlp,
            width: 256,
            depth: 1,
            dataset: String::new(),
            swap_labels: false,
            limit_train: 0,
            epochs: 10,
            learning_rate: LearningRate::Constant(0.01),
            batch_size: 128,
            momentum: 0.9,
            augment: false,
            seed: 0,
            experiment: String::new(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Network family (mlp or cnn)
    #[arg(long, value_enum)]
    model: Option<ModelKind>,

    /// Penultimate layer width
    #[arg(long)]
    width: Option<usize>,

    /// Hidden layers (MLP only)
    #[arg(long)]
    depth: Option<usize>,

    /// Dataset name under the data root, or a path to an .atld pair directory
    #[arg(long)]
    dataset: Option<String>,

    /// Train on the alternate labeling (true/false)
    #[arg(long, value_name = "BOOL")]
    swap_labels: Option<bool>,

    /// Seeded cap on the train split (0 = all images)
    #[arg(long)]
    limit_train: Option<usize>,

    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,

    /// Learning rate: a number, or "1/n" for the width rule
    #[arg(long)]
    learning_rate: Option<String>,

    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,

    /// SGD momentum
    #[arg(long)]
    momentum: Option<f64>,

    /// Augment training batches (true/false)
    #[arg(long, value_name = "BOOL")]
    augment: Option<bool>,

    /// Seed for init, shuffling, and augmentation draws
    #[arg(long)]
    seed: Option<u64>,

    /// Experiment label in the run record
    #[arg(long)]
    experiment: Option<String>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Output directory for checkpoints and the run record
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut config: TrainCommandConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args)?;
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.dataset.is_empty() {
        bail!("no dataset given (--dataset flag or `dataset` config key)");
    }

    let (train_data, test_data) = common::load_pair(&config.dataset)?;
    let train_data = common::apply_label_swap(train_data, config.swap_labels)?;
    let test_data = common::apply_label_swap(test_data, config.swap_labels)?;
    let train_data = common::apply_limit(train_data, config.limit_train, config.seed)?;

    let spec = model_spec(config.model, config.width, config.depth, &train_data)?;
    let train_config = TrainConfig {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        momentum: config.momentum,
        augmentation: config
            .augment
            .then(|| AugmentationPolicy::natural_image(common::channel_means(&train_data))),
        seed: config.seed,
    };
    let experiment = if config.experiment.is_empty() {
        format!(
            "train-{}-w{}",
            match config.model {
                ModelKind::Mlp => "mlp",
                ModelKind::Cnn => "cnn",
            },
            config.width
        )
    } else {
        config.experiment.clone()
    };

    let trained = train(&spec, &train_data, &test_data, &train_config, &experiment)?;

    std::fs::create_dir_all(&args.out)?;
    save_checkpoint(&args.out.join("final.ckpt"), &trained.final_model, config.seed, &hash)?;
    save_checkpoint(&args.out.join("best.ckpt"), &trained.best_model, config.seed, &hash)?;
    save_run_record(&args.out.join("run.json"), &trained.record)?;
    common::write_manifest(&args.out, &hash)?;

    println!(
        "{experiment}: best test accuracy {:.4}, final {:.4} ({} epochs, {:.1}s)",
        trained.record.best_test_accuracy,
        trained.record.final_test_accuracy,
        config.epochs,
        trained.record.wall_time_s
    );
    Ok(())
}

fn merge(config: &mut TrainCommandConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = args.model {
        config.model = v;
    }
    if let Some(v) = args.width {
        config.width = v;
    }
    if let Some(v) = args.depth {
        config.depth = v;
    }
    if let Some(v) = &args.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = args.swap_labels {
        config.swap_labels = v;
    }
    if let Some(v) = args.limit_train {
        config.limit_train = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = &args.learning_rate {
        config.learning_rate = common::parse_rate(v)?;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.momentum {
        config.momentum = v;
    }
    if let Some(v) = args.augment {
        config.augment = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.experiment {
        config.experiment = v.clone();
    }
    Ok(())
}

/// Build the architecture from the flags and the dataset's shape.
pub fn model_spec(
    model: ModelKind,
    width: usize,
    depth: usize,
    data: &atlasbench_core::data::LabeledDataset,
) -> Result<ModelSpec> {
    let classes = data.labels().classes;
    match model {
        ModelKind::Mlp => {
            if depth == 0 {
                bail!("an MLP needs at least one hidden layer");
            }
            Ok(ModelSpec::mlp(data.input_dim(), width, depth, classes))
        }
        ModelKind::Cnn => {
            if depth != 1 {
                bail!("the CNN shape is fixed; --depth must be 1");
            }
            let (c, h, w) = data.dims();
            Ok(ModelSpec::cnn(c, h, w, width, classes)?)
        }
    }
}

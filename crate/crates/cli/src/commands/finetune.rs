//! `finetune`: train a fresh linear head on a frozen checkpoint.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::data::AugmentationPolicy;
use atlasbench_core::models::load_checkpoint;
use atlasbench_core::transfer::{finetune_head, save_run_record, LearningRate, LinearFit, TrainConfig};

use crate::common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub checkpoint: String,
    pub dataset: String,
    /// The fine-tuning task is usually the dataset's alternate labeling.
    pub swap_labels: bool,
    pub limit_train: usize,
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub momentum: f64,
    pub augment: bool,
    pub seed: u64,
    pub experiment: String,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            checkpoint: String::new(),
            dataset: String::new(),
            swap_labels: true,
            limit_train: 0,
            epochs: 30,
            learning_rate: LearningRate::Constant(0.01),
            batch_size: 128,
            momentum: 0.9,
            augment: false,
            seed: 0,
            experiment: "finetune".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Checkpoint providing the frozen features
    #[arg(long)]
    checkpoint: Option<String>,

    /// Dataset name under the data root, or a path to an .atld pair directory
    #[arg(long)]
    dataset: Option<String>,

    /// Train on the alternate labeling (true/false; default true)
    #[arg(long, value_name = "BOOL")]
    swap_labels: Option<bool>,

    /// Seeded cap on the train split (0 = all images)
    #[arg(long)]
    limit_train: Option<usize>,

    /// Head training epochs
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

    /// Seed for head init and shuffling
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

    /// Output directory for the head weights and run record
    #[arg(long, required = true)]
    out: PathBuf,
}

/// Fitted head as a JSON artifact.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct HeadArtifact {
    backbone_hash: String,
    features: usize,
    classes: usize,
    /// Row-major `[features, classes]`.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

pub fn save_head(out: &PathBuf, fit: &LinearFit, backbone_hash: String) -> Result<()> {
    let shape = fit.weight.shape().to_vec();
    let artifact = HeadArtifact {
        backbone_hash,
        features: shape[0],
        classes: shape[1],
        weight: fit.weight.data().to_vec(),
        bias: fit.bias.data().to_vec(),
    };
    std::fs::write(out.join("head.json"), serde_json::to_vec_pretty(&artifact)?)?;
    Ok(())
}

pub fn run(args: FinetuneArgs) -> Result<()> {
    let mut config: FinetuneConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args)?;
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.checkpoint.is_empty() {
        bail!("no checkpoint given (--checkpoint flag or `checkpoint` config key)");
    }
    if config.dataset.is_empty() {
        bail!("no dataset given (--dataset flag or `dataset` config key)");
    }

    let ckpt_path = common::resolve_data_path(&config.checkpoint);
    let (model, _) = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;

    let (train_data, test_data) = common::load_pair(&config.dataset)?;
    let train_data = common::apply_label_swap(train_data, config.swap_labels)?;
    let test_data = common::apply_label_swap(test_data, config.swap_labels)?;
    let train_data = common::apply_limit(train_data, config.limit_train, config.seed)?;

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

    let fit = finetune_head(&model, &train_data, &test_data, &train_config, &config.experiment)?;

    std::fs::create_dir_all(&args.out)?;
    save_run_record(&args.out.join("run.json"), &fit.record)?;
    save_head(&args.out, &fit, model.content_hash())?;
    common::write_manifest(&args.out, &hash)?;

    println!(
        "{}: best test accuracy {:.4}, final {:.4} on {} classes ({:.1}s)",
        config.experiment,
        fit.record.best_test_accuracy,
        fit.record.final_test_accuracy,
        fit.record.classes,
        fit.record.wall_time_s
    );
    Ok(())
}

fn merge(config: &mut FinetuneConfig, args: &FinetuneArgs) -> Result<()> {
    if let Some(v) = &args.checkpoint {
        config.checkpoint = v.clone();
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

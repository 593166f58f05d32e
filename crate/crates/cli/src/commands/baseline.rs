//! `baseline`: linear classifier on raw pixels, the reference the
//! transfer plots are drawn against.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::transfer::{linear_baseline, save_run_record, LearningRate, TrainConfig};

use crate::common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub dataset: String,
    /// The baseline usually targets the dataset's alternate labeling.
    pub swap_labels: bool,
    pub limit_train: usize,
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub experiment: String,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dataset: String::new(),
            swap_labels: true,
            limit_train: 0,
            epochs: 30,
            learning_rate: LearningRate::Constant(0.01),
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
            experiment: "baseline".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Dataset name under the data root, or a path to an .atld pair directory
    #[arg(long)]
    dataset: Option<String>,

    /// Train on the alternate labeling (true/false; default true)
    #[arg(long, value_name = "BOOL")]
    swap_labels: Option<bool>,

    /// Seeded cap on the train split (0 = all images)
    #[arg(long)]
    limit_train: Option<usize>,

    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,

    /// Learning rate (a number; "1/n" has no width to resolve against here)
    #[arg(long)]
    learning_rate: Option<String>,

    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,

    /// SGD momentum
    #[arg(long)]
    momentum: Option<f64>,

    /// Seed for init and shuffling
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

    /// Output directory for the run record
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: BaselineArgs) -> Result<()> {
    let mut config: BaselineConfig = common::base_config(args.config.as_deref())?;
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

    let train_config = TrainConfig {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        momentum: config.momentum,
        augmentation: None,
        seed: config.seed,
    };

    let fit = linear_baseline(&train_data, &test_data, &train_config, &config.experiment)?;

    std::fs::create_dir_all(&args.out)?;
    save_run_record(&args.out.join("run.json"), &fit.record)?;
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

fn merge(config: &mut BaselineConfig, args: &BaselineArgs) -> Result<()> {
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
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.experiment {
        config.experiment = v.clone();
    }
    Ok(())
}

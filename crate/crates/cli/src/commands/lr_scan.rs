//! `lr-scan`: train at each rate on a grid and report the best mean.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::transfer::{
    cifar_lr_grid, lr_scan, mnist_lr_grid, save_run_record, train, LearningRate, TrainConfig,
};
use atlasbench_core::util::derive_seed;

use super::train::{model_spec, ModelKind};
use crate::common;

/// Predefined learning-rate grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridArg {
    /// Five rates, log-spaced over [1e-3, 1e-1].
    Mnist,
    /// Ten rates over the same decades; includes 0.0129.
    Cifar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct LrScanConfig {
    pub model: ModelKind,
    pub width: usize,
    pub depth: usize,
    pub dataset: String,
    pub swap_labels: bool,
    pub limit_train: usize,
    /// Named grid; explicit `rates` win over it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridArg>,
    pub rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Training runs per rate.
    pub replicates: usize,
    pub seed: u64,
    pub experiment: String,
}

impl Default for LrScanConfig {
    fn default() -> Self {
        LrScanConfig {
            model: ModelKind::Mlp,
            width: 256,
            depth: 1,
            dataset: String::new(),
            swap_labels: false,
            limit_train: 0,
            grid: Some(GridArg::Mnist),
            rates: Vec::new(),
            epochs: 10,
            batch_size: 128,
            momentum: 0.9,
            replicates: 3,
            seed: 0,
            experiment: "lr-scan".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct LrScanArgs {
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

    /// Named grid (mnist or cifar)
    #[arg(long, value_enum)]
    grid: Option<GridArg>,

    /// Explicit rates, e.g. 0.1,0.03,0.01 (win over --grid)
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,

    /// Training epochs per run
    #[arg(long)]
    epochs: Option<usize>,

    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,

    /// SGD momentum
    #[arg(long)]
    momentum: Option<f64>,

    /// Training runs per rate
    #[arg(long)]
    replicates: Option<usize>,

    /// Base seed; per-run seeds derive from it
    #[arg(long)]
    seed: Option<u64>,

    /// Experiment label prefix
    #[arg(long)]
    experiment: Option<String>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Output directory for records and the scan summary
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: LrScanArgs) -> Result<()> {
    let mut config: LrScanConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args);
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.dataset.is_empty() {
        bail!("no dataset given (--dataset flag or `dataset` config key)");
    }
    if config.replicates == 0 {
        bail!("--replicates must be at least 1");
    }

    let rates: Vec<f64> = if !config.rates.is_empty() {
        config.rates.clone()
    } else {
        match config.grid {
            Some(GridArg::Mnist) => mnist_lr_grid(),
            Some(GridArg::Cifar) => cifar_lr_grid(),
            None => bail!("no rates given (--rates, `rates`, or a named --grid)"),
        }
    };

    let (train_data, test_data) = common::load_pair(&config.dataset)?;
    let train_data = common::apply_label_swap(train_data, config.swap_labels)?;
    let test_data = common::apply_label_swap(test_data, config.swap_labels)?;
    let train_data = common::apply_limit(train_data, config.limit_train, config.seed)?;
    let spec = model_spec(config.model, config.width, config.depth, &train_data)?;

    let records_dir = args.out.join("records");
    std::fs::create_dir_all(&records_dir)?;

    let mut rate_index = 0u64;
    let outcome = lr_scan(&rates, |rate| {
        let rate_seed = derive_seed(config.seed, "lr-rate", rate_index);
        rate_index += 1;
        let mut records = Vec::with_capacity(config.replicates);
        for rep in 0..config.replicates {
            let train_config = TrainConfig {
                epochs: config.epochs,
                learning_rate: LearningRate::Constant(rate),
                batch_size: config.batch_size,
                momentum: config.momentum,
                augmentation: None,
                seed: derive_seed(rate_seed, "replicate", rep as u64),
            };
            let experiment = format!("{}/lr{rate}/seed{rep}", config.experiment);
            let trained = train(&spec, &train_data, &test_data, &train_config, &experiment)?;
            println!(
                "  lr {rate}: seed {rep} best {:.4}",
                trained.record.best_test_accuracy
            );
            records.push(trained.record);
        }
        Ok(records)
    })?;

    for point in &outcome.points {
        for record in &point.records {
            let name = format!("{}.json", record.experiment.replace('/', "_"));
            save_run_record(&records_dir.join(name), record)?;
        }
    }
    std::fs::write(args.out.join("lr-scan.json"), serde_json::to_vec_pretty(&outcome)?)?;
    common::write_manifest(&args.out, &hash)?;

    println!("best rate {} over {} rates x {} replicates", outcome.best_rate, rates.len(), config.replicates);
    Ok(())
}

fn merge(config: &mut LrScanConfig, args: &LrScanArgs) {
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
    if let Some(v) = args.grid {
        config.grid = Some(v);
    }
    if let Some(v) = &args.rates {
        config.rates = v.clone();
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.momentum {
        config.momentum = v;
    }
    if let Some(v) = args.replicates {
        config.replicates = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.experiment {
        config.experiment = v.clone();
    }
}

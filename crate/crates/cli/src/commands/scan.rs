//! `scan`: train-freeze-finetune across a width/depth grid, aggregate
//! over seeds, and plot accuracy against width.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::render::render_scan;
use atlasbench_core::transfer::{
    constant_parameter_points, run_scan, save_run_record, LearningRate, ScanArchitecture,
    ScanPoint, ScanSpec, TrainConfig,
};

use crate::common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ScanCommandConfig {
    pub dataset: String,
    /// Accuracy of the reference linear baseline; drawn as a dashed line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    /// Depths to expand into constant-parameter points (appended to any
    /// explicit points); needs `max-width`.
    pub depths: Vec<usize>,
    /// Single-hidden-layer width the constant-parameter plan matches.
    pub max_width: usize,
    pub scan: ScanSpec,
}

impl Default for ScanCommandConfig {
    fn default() -> Self {
        ScanCommandConfig {
            dataset: String::new(),
            baseline: None,
            depths: Vec::new(),
            max_width: 0,
            scan: ScanSpec {
                experiment: "scan".into(),
                architecture: ScanArchitecture::Mlp,
                points: vec![ScanPoint { width: 256, depth: 1 }],
                seeds_per_point: 3,
                train: TrainConfig::default(),
                finetune: TrainConfig {
                    epochs: 30,
                    learning_rate: LearningRate::Constant(0.01),
                    ..TrainConfig::default()
                },
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Dataset name under the data root, or a path to an .atld pair directory
    #[arg(long)]
    dataset: Option<String>,

    /// Linear-baseline accuracy for the dashed reference line
    #[arg(long)]
    baseline: Option<f64>,

    /// Depths to expand into constant-parameter points, e.g. 1,2,4
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,

    /// Single-hidden-layer width the constant-parameter plan matches
    #[arg(long)]
    max_width: Option<usize>,

    /// Experiment name (seeds derive from it)
    #[arg(long)]
    experiment: Option<String>,

    /// Replicates per grid point
    #[arg(long)]
    seeds: Option<usize>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Output directory for records, table, and plot
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: ScanArgs) -> Result<()> {
    let mut config: ScanCommandConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args);
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.dataset.is_empty() {
        bail!("no dataset given (--dataset flag or `dataset` config key)");
    }

    let (train_data, test_data) = common::load_pair(&config.dataset)?;

    let mut scan = config.scan.clone();
    if !config.depths.is_empty() {
        if config.max_width == 0 {
            bail!("expanding `depths` into points needs `max-width`");
        }
        let planned = constant_parameter_points(
            &config.depths,
            train_data.input_dim(),
            train_data.labels().classes,
            config.max_width,
        )?;
        scan.points.extend(planned);
    }

    println!(
        "scan {}: {} points x {} seeds on {}",
        scan.experiment,
        scan.points.len(),
        scan.seeds_per_point,
        config.dataset
    );
    let outcome = run_scan(&scan, &train_data, &test_data)?;

    let records_dir = args.out.join("records");
    std::fs::create_dir_all(&records_dir)?;
    for record in &outcome.records {
        let name = format!("{}.json", record.experiment.replace('/', "_"));
        save_run_record(&records_dir.join(name), record)?;
    }
    if !outcome.failures.is_empty() {
        std::fs::write(
            args.out.join("failures.json"),
            serde_json::to_vec_pretty(&outcome.failures)?,
        )?;
    }

    let (canvas, csv) = render_scan(&outcome.table, config.baseline)?;
    std::fs::write(args.out.join("table.csv"), &csv)?;
    canvas.save_png(&args.out.join("scan.png"))?;
    common::write_manifest(&args.out, &hash)?;

    for row in &outcome.table {
        println!(
            "  w{} d{} {:?}: {:.4} +- {:.4} over {} seeds",
            row.width, row.depth, row.task, row.mean, row.std, row.n_seeds
        );
    }
    if !outcome.failures.is_empty() {
        println!("  {} replicate(s) failed; see failures.json", outcome.failures.len());
    }
    println!("wrote {} records, table.csv, scan.png", outcome.records.len());
    Ok(())
}

fn merge(config: &mut ScanCommandConfig, args: &ScanArgs) {
    if let Some(v) = &args.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = args.baseline {
        config.baseline = Some(v);
    }
    if let Some(v) = &args.depths {
        config.depths = v.clone();
    }
    if let Some(v) = args.max_width {
        config.max_width = v;
    }
    if let Some(v) = &args.experiment {
        config.scan.experiment = v.clone();
    }
    if let Some(v) = args.seeds {
        config.scan.seeds_per_point = v;
    }
}

//! `gen-data`: parse raw dataset files and cache the derived datasets.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use atlasbench_core::data::{
    cifar100_coarse_subset, load_cifar, load_mnist, make_translated_mnist, save_dataset,
    CifarVariant, LabeledDataset,
};
use atlasbench_core::util::derive_seed;

use crate::common;

/// Which dataset to build. Raw files are read from the data root
/// (`$ATLASBENCH_DATA` or `./data`): MNIST IDX files under `mnist/`,
/// CIFAR binaries under `cifar-10-batches-bin/` or `cifar-100-binary/`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// MNIST with the train split truncated to 50,000 images.
    Mnist,
    /// 1,785 base MNIST images under all 28 cyclic horizontal shifts;
    /// shift labels primary, digit labels alternate.
    TranslatedMnist,
    /// CIFAR-10 as-is.
    Cifar10,
    /// Three CIFAR-100 coarse classes (15 fine classes, 7,500/1,500);
    /// coarse labels primary, fine labels alternate.
    Cifar100Subset,
}

impl DataSource {
    fn dir_name(self) -> &'static str {
        match self {
            DataSource::Mnist => "mnist",
            DataSource::TranslatedMnist => "translated-mnist",
            DataSource::Cifar10 => "cifar10",
            DataSource::Cifar100Subset => "cifar100-subset",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub source: Option<DataSource>,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig { source: None, seed: 0 }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset to build
    #[arg(value_enum)]
    source: Option<DataSource>,

    /// Generation seed (translated-mnist base-image sampling)
    #[arg(long)]
    seed: Option<u64>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Directory the cached dataset lands in (a subdirectory named after
    /// the source is created)
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: GenDataArgs) -> Result<()> {
    let mut config: GenDataConfig = common::base_config(args.config.as_deref())?;
    if args.source.is_some() {
        config.source = args.source;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    let source = config
        .source
        .context("no dataset source given (positional argument or `source` config key)")?;

    let root = common::data_root();
    let (train, test): (LabeledDataset, LabeledDataset) = match source {
        DataSource::Mnist => load_mnist(&root.join("mnist"))?,
        DataSource::TranslatedMnist => {
            let (raw_train, raw_test) = load_mnist(&root.join("mnist"))?;
            let train = make_translated_mnist(&raw_train, config.seed)?;
            let test = make_translated_mnist(&raw_test, derive_seed(config.seed, "test-split", 0))?;
            (train, test)
        }
        DataSource::Cifar10 => load_cifar(&root.join("cifar-10-batches-bin"), CifarVariant::Cifar10)?,
        DataSource::Cifar100Subset => {
            let (raw_train, raw_test) = load_cifar(&root.join("cifar-100-binary"), CifarVariant::Cifar100)?;
            (cifar100_coarse_subset(&raw_train)?, cifar100_coarse_subset(&raw_test)?)
        }
    };

    let out = args.out.join(source.dir_name());
    std::fs::create_dir_all(&out)?;
    save_dataset(&out.join("train.atld"), &train)?;
    save_dataset(&out.join("test.atld"), &test)?;
    common::write_manifest(&out, &hash)?;

    let (c, h, w) = train.dims();
    println!(
        "{}: {} train / {} test images ({c}x{h}x{w}), {} classes, cached under {}",
        source.dir_name(),
        train.len(),
        test.len(),
        train.labels().classes,
        out.display()
    );
    Ok(())
}

//! Helpers shared by every subcommand: dataset resolution against the
//! data root, config loading with flag overrides, manifests, and the
//! handful of tiny parsers the flags need.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use atlasbench_core::config::{config_hash, load_toml, to_toml_string, Manifest};
use atlasbench_core::data::{load_dataset, LabeledDataset, Split};
use atlasbench_core::transfer::LearningRate;
use atlasbench_core::util::sample_indices;

/// Environment variable that overrides the dataset root directory.
pub const DATA_ROOT_VAR: &str = "ATLASBENCH_DATA";

/// Version string stamped into every manifest.
pub fn version() -> String {
    format!("atlasbench-v{}", env!("CARGO_PKG_VERSION"))
}

/// Dataset root: `$ATLASBENCH_DATA` if set, else `./data`.
pub fn data_root() -> PathBuf {
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("data"),
    }
}

/// Resolve a user-supplied path: absolute paths and paths that exist
/// relative to the working directory win; everything else is looked up
/// under the data root.
pub fn resolve_data_path(path: &str) -> PathBuf {
    let direct = PathBuf::from(path);
    if direct.is_absolute() || direct.exists() {
        return direct;
    }
    data_root().join(direct)
}

/// Load one split of a named dataset. `name` is either a directory
/// produced by `gen-data` (containing `train.atld` / `test.atld`), looked
/// up under the data root, or a direct path to an `.atld` file.
pub fn load_split(name: &str, split: Split) -> Result<LabeledDataset> {
    let resolved = resolve_data_path(name);
    let path = if resolved.extension().is_some_and(|e| e == "atld") {
        resolved
    } else {
        let file = match split {
            Split::Train => "train.atld",
            Split::Test => "test.atld",
        };
        resolved.join(file)
    };
    let data = load_dataset(&path)
        .with_context(|| format!("loading dataset split from {}", path.display()))?;
    if data.split() != split {
        bail!("{} holds the {:?} split, expected {:?}", path.display(), data.split(), split);
    }
    Ok(data)
}

/// Load the train/test pair of a named dataset.
pub fn load_pair(name: &str) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((load_split(name, Split::Train)?, load_split(name, Split::Test)?))
}

/// Swap the alternate labeling in as the primary task when asked.
pub fn apply_label_swap(data: LabeledDataset, swap: bool) -> Result<LabeledDataset> {
    if swap {
        data.with_alt_primary()
            .context("--swap-labels needs a dataset carrying an alternate labeling")
    } else {
        Ok(data)
    }
}

/// Seeded reduction to at most `limit` images; `limit = 0` keeps all.
pub fn apply_limit(data: LabeledDataset, limit: usize, seed: u64) -> Result<LabeledDataset> {
    if limit == 0 || limit >= data.len() {
        return Ok(data);
    }
    let picked = sample_indices(data.len(), limit, seed);
    Ok(data.subset(&picked)?)
}

/// Mean pixel value per channel, used as the augmentation fill.
pub fn channel_means(data: &LabeledDataset) -> Vec<f32> {
    let (c, h, w) = data.dims();
    let plane = h * w;
    let mut sums = vec![0.0f64; c];
    for image in data.images().chunks_exact(c * plane) {
        for (ch, sum) in sums.iter_mut().enumerate() {
            *sum += image[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
    }
    let count = (data.len() * plane) as f64;
    sums.iter().map(|&s| (s / count) as f32).collect()
}

/// Parse a learning-rate flag: a number, or the width rule `1/n`.
pub fn parse_rate(s: &str) -> Result<LearningRate> {
    if s.trim() == "1/n" {
        return Ok(LearningRate::InverseWidth);
    }
    let v: f64 = s
        .parse()
        .with_context(|| format!("learning rate {s:?} is neither a number nor \"1/n\""))?;
    Ok(LearningRate::Constant(v))
}

/// Load the effective config: the TOML file if given, defaults otherwise.
/// Flag overrides are applied by the caller afterwards.
pub fn base_config<T: DeserializeOwned + Default>(file: Option<&Path>) -> Result<T> {
    match file {
        Some(path) => Ok(load_toml(path)?),
        None => Ok(T::default()),
    }
}

/// Hash the effective config; with `--dump-config` print it instead of
/// running (the printed document re-parses to the same hash).
pub fn hash_or_dump<T: Serialize>(config: &T, dump: bool) -> Result<Option<String>> {
    if dump {
        print!("{}", to_toml_string(config)?);
        return Ok(None);
    }
    Ok(Some(config_hash(config)?))
}

/// Stamp the output directory with a finished manifest.
pub fn write_manifest(out: &Path, hash: &str) -> Result<()> {
    let command: Vec<String> = std::env::args().collect();
    let mut manifest = Manifest::new(&command.join(" "), hash, &version());
    manifest.finish();
    manifest.save(out)?;
    Ok(())
}

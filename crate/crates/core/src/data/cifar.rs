//! CIFAR-10 / CIFAR-100 binary format parsing.
//!
//! CIFAR-10 records are 1 label byte + 3072 pixel bytes; CIFAR-100
//! records carry a coarse byte and a fine byte ahead of the pixels.
//! Pixels are channel planes (R, G, B), 32x32 row-major.

use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::{LabeledDataset, Labels, LabelScheme, Provenance, Split};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

/// Load a CIFAR variant from `dir` holding the standard binary files
/// (`data_batch_1..5.bin` + `test_batch.bin`, or `train.bin` + `test.bin`).
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(LabeledDataset, LabeledDataset)> {
    match variant {
        CifarVariant::Cifar10 => {
            let train_files: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let train = load_cifar10_files(&train_files, Split::Train)?;
            let test = load_cifar10_files(&[dir.join("test_batch.bin")], Split::Test)?;
            Ok((train, test))
        }
        CifarVariant::Cifar100 => {
            let train = load_cifar100_file(&dir.join("train.bin"), Split::Train)?;
            let test = load_cifar100_file(&dir.join("test.bin"), Split::Test)?;
            Ok((train, test))
        }
    }
}

fn load_cifar10_files(paths: &[PathBuf], split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut sources = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        let record = 1 + PIXELS;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::format(
                path.display().to_string(),
                bytes.len() as u64,
                format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[0] as u32);
            images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
        sources.push(path.display().to_string());
    }
    LabeledDataset::new(
        images,
        (3, SIDE, SIDE),
        Labels {
            scheme: LabelScheme::Cifar10Class,
            classes: 10,
            values: labels,
        },
        None,
        split,
        Provenance {
            sources,
            seed: None,
            note: String::new(),
        },
    )
}

fn load_cifar100_file(path: &Path, split: Split) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path)?;
    let record = 2 + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::format(
            path.display().to_string(),
            bytes.len() as u64,
            format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
        ));
    }
    let count = bytes.len() / record;
    let mut images = Vec::with_capacity(count * PIXELS);
    let mut coarse = Vec::with_capacity(count);
    let mut fine = Vec::with_capacity(count);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        if rec[0] >= 20 || rec[1] >= 100 {
            return Err(Error::format(
                path.display().to_string(),
                (i * record) as u64,
                format!("label bytes ({}, {}) out of range (coarse < 20, fine < 100)", rec[0], rec[1]),
            ));
        }
        coarse.push(rec[0] as u32);
        fine.push(rec[1] as u32);
        images.extend(rec[2..].iter().map(|&b| b as f32 / 255.0));
    }
    LabeledDataset::new(
        images,
        (3, SIDE, SIDE),
        Labels {
            scheme: LabelScheme::Coarse,
            classes: 20,
            values: coarse,
        },
        Some(Labels {
            scheme: LabelScheme::Fine,
            classes: 100,
            values: fine,
        }),
        split,
        Provenance {
            sources: vec![path.display().to_string()],
            seed: None,
            note: String::new(),
        },
    )
}

//! MNIST IDX file parsing.
//!
//! Big-endian magic and dimensions, raw `u8` payload. Files may be
//! gzip-compressed (detected by the `1f 8b` signature, regardless of
//! extension); byte offsets in errors refer to the decompressed stream.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::{Error, Result};

use super::{LabeledDataset, Labels, LabelScheme, Provenance, Split};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// How many of the 60,000 standard training images become the train split.
pub const MNIST_TRAIN_COUNT: usize = 50_000;

/// Load MNIST from `dir`, which must hold the four standard files
/// (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-…`),
/// plain or with a `.gz` suffix. The train split keeps the first 50,000
/// images; pixels are scaled to `[0, 1]`.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_split(
        dir,
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        Some(MNIST_TRAIN_COUNT),
        Split::Train,
    )?;
    let test = load_split(
        dir,
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        None,
        Split::Test,
    )?;
    Ok((train, test))
}

fn load_split(
    dir: &Path,
    images_name: &str,
    labels_name: &str,
    truncate: Option<usize>,
    split: Split,
) -> Result<LabeledDataset> {
    let images_path = resolve(dir, images_name)?;
    let labels_path = resolve(dir, labels_name)?;
    let (pixels, count, h, w) = parse_idx_images(&images_path)?;
    let labels = parse_idx_labels(&labels_path)?;
    if labels.len() != count {
        return Err(Error::contract(format!(
            "{count} images but {} labels in {}",
            labels.len(),
            labels_path.display()
        )));
    }
    let keep = truncate.map_or(count, |t| t.min(count));
    let images: Vec<f32> = pixels[..keep * h * w]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    LabeledDataset::new(
        images,
        (1, h, w),
        Labels {
            scheme: LabelScheme::Digit,
            classes: 10,
            values: labels[..keep].to_vec(),
        },
        None,
        split,
        Provenance {
            sources: vec![
                images_path.display().to_string(),
                labels_path.display().to_string(),
            ],
            seed: None,
            note: String::new(),
        },
    )
}

/// Find `name` or `name.gz` under `dir`.
fn resolve(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::contract(format!(
        "neither {name} nor {name}.gz found in {}",
        dir.display()
    )))
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| {
                Error::format(path.display().to_string(), 0, format!("gzip stream: {e}"))
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parse an IDX image file into raw bytes plus `(count, height, width)`.
pub fn parse_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_maybe_gzip(path)?;
    let name = path.display().to_string();
    let magic = be_u32(&bytes, 0, &name)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            name,
            0,
            format!("magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} (idx3 images)"),
        ));
    }
    let count = be_u32(&bytes, 4, &name)? as usize;
    let h = be_u32(&bytes, 8, &name)? as usize;
    let w = be_u32(&bytes, 12, &name)? as usize;
    let expected = 16 + count * h * w;
    if bytes.len() < expected {
        return Err(Error::format(
            name,
            bytes.len() as u64,
            format!("truncated: {} bytes, header promises {expected}", bytes.len()),
        ));
    }
    Ok((bytes[16..expected].to_vec(), count, h, w))
}

/// Parse an IDX label file.
pub fn parse_idx_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = read_maybe_gzip(path)?;
    let name = path.display().to_string();
    let magic = be_u32(&bytes, 0, &name)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            name,
            0,
            format!("magic {magic:#010x}, expected {LABELS_MAGIC:#010x} (idx1 labels)"),
        ));
    }
    let count = be_u32(&bytes, 4, &name)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::format(
            name,
            bytes.len() as u64,
            format!("truncated: {} bytes, header promises {expected}", bytes.len()),
        ));
    }
    Ok(bytes[8..expected].iter().map(|&b| b as u32).collect())
}

fn be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("slice of 4")))
        .ok_or_else(|| Error::format(path, offset as u64, "unexpected end of file"))
}


#[cfg(test)]
mod tests {
    use super::test_support::{write_idx_images, write_idx_labels};
    use super::*;

    fn fake_mnist(dir: &Path, train_count: usize, test_count: usize, gzip: bool) {
        let img = |i: usize| -> Vec<u8> { (0..28 * 28).map(|p| ((i + p) % 251) as u8).collect() };
        let suffix = if gzip { ".gz" } else { "" };
        write_idx_images(
            &dir.join(format!("train-images-idx3-ubyte{suffix}")),
            &(0..train_count).map(img).collect::<Vec<_>>(),
            28,
            28,
            gzip,
        );
        write_idx_labels(
            &dir.join(format!("train-labels-idx1-ubyte{suffix}")),
            &(0..train_count).map(|i| (i % 10) as u8).collect::<Vec<_>>(),
            gzip,
        );
        write_idx_images(
            &dir.join(format!("t10k-images-idx3-ubyte{suffix}")),
            &(0..test_count).map(img).collect::<Vec<_>>(),
            28,
            28,
            gzip,
        );
        write_idx_labels(
            &dir.join(format!("t10k-labels-idx1-ubyte{suffix}")),
            &(0..test_count).map(|i| (i % 10) as u8).collect::<Vec<_>>(),
            gzip,
        );
    }

    #[test]
    fn loads_and_truncates_train_split() {
        let dir = tempfile::tempdir().unwrap();
        fake_mnist(dir.path(), 60, 10, false);
        let (train, test) = load_mnist(dir.path()).unwrap();
        // Fewer than 50,000 source images: keeps them all.
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 10);
        assert_eq!(train.dims(), (1, 28, 28));
        assert!(train.images().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(train.label(3), 3);
    }

    #[test]
    fn gzip_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        fake_mnist(dir.path(), 5, 2, true);
        let (train, _) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.len(), 5);
        // Pixel 0 of image 2 is (2 + 0) % 251 = 2.
        assert!((train.image(2)[0] - 2.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn corrupt_magic_is_format_error_with_no_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        fake_mnist(dir.path(), 5, 2, false);
        let path = dir.path().join("train-images-idx3-ubyte");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] = 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        match load_mnist(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        fake_mnist(dir.path(), 5, 2, false);
        let path = dir.path().join("t10k-images-idx3-ubyte");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_mnist(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_files_name_the_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mnist(dir.path()).unwrap_err().to_string();
        assert!(err.contains("train-images-idx3-ubyte"), "{err}");
    }
}

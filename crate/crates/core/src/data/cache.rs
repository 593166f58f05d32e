//! Single-file cache for generated datasets.
//!
//! Layout, integers little-endian: magic `ATLD`, u32 format version, u32
//! header length, header JSON (dims, label schemes, split, provenance),
//! then the image array as 32-bit floats and each label array as u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::CountingReader;
use crate::{Error, Result};

use super::{LabeledDataset, Labels, LabelScheme, Provenance, Split};

const MAGIC: [u8; 4] = *b"ATLD";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    scheme: LabelScheme,
    classes: usize,
    alt: Option<(LabelScheme, usize)>,
    split: Split,
    provenance: Provenance,
}

/// Write `data` to a container file at `path`.
pub fn save_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    let (channels, height, width) = data.dims();
    let header = CacheHeader {
        count: data.len(),
        channels,
        height,
        width,
        scheme: data.labels().scheme,
        classes: data.labels().classes,
        alt: data.alt_labels().map(|l| (l.scheme, l.classes)),
        split: data.split(),
        provenance: data.provenance().clone(),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for &v in data.images() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in &data.labels().values {
        w.write_all(&l.to_le_bytes())?;
    }
    if let Some(alt) = data.alt_labels() {
        for &l in &alt.values {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset container written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let display = path.display().to_string();

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, &display)?;
    if magic != MAGIC {
        return Err(Error::format(
            display,
            0,
            format!("bad magic {magic:02x?}, expected `ATLD`"),
        ));
    }
    let version = r.u32_le(&display)?;
    if version != VERSION {
        return Err(Error::format(
            display,
            4,
            format!("unsupported format version {version}"),
        ));
    }
    let header_len = r.u32_le(&display)? as usize;
    let header_start = r.offset;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact_at(&mut header_bytes, &display)?;
    let header: CacheHeader = serde_json::from_slice(&header_bytes).map_err(|e| {
        Error::format(&display, header_start, format!("header does not parse: {e}"))
    })?;

    let pixels = header.count * header.channels * header.height * header.width;
    let images = r.f32_vec_le(pixels, &display)?;
    let labels = r.u32_vec_le(header.count, &display)?;
    let alt_labels = match header.alt {
        Some((scheme, classes)) => Some(Labels {
            scheme,
            classes,
            values: r.u32_vec_le(header.count, &display)?,
        }),
        None => None,
    };
    LabeledDataset::new(
        images,
        (header.channels, header.height, header.width),
        Labels {
            scheme: header.scheme,
            classes: header.classes,
            values: labels,
        },
        alt_labels,
        header.split,
        header.provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::super::test_support::tiny_digits;
    use super::super::{make_translated_mnist, TRANSLATED_BASE_COUNT};
    use super::*;

    #[test]
    fn roundtrip_with_alternate_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("translated.atld");
        let src = tiny_digits(2000, 4, 4);
        let data = make_translated_mnist(&src, 21).unwrap();
        save_dataset(&path, &data).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), TRANSLATED_BASE_COUNT * 4);
        assert_eq!(loaded.images(), data.images());
        assert_eq!(loaded.labels(), data.labels());
        assert_eq!(loaded.alt_labels(), data.alt_labels());
        assert_eq!(loaded.split(), data.split());
        assert_eq!(loaded.provenance(), data.provenance());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.atld");
        let data = tiny_digits(8, 3, 3);
        save_dataset(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }
}

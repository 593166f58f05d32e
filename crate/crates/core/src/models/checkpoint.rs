//! Single-file model checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `ATLB`, u32 format version, u32 header length, header JSON
//! (spec, seed, training-config hash), u32 tensor count, then per tensor a
//! u32 rank, u32 dims, and the values as 32-bit floats in declaration
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::util::CountingReader;
use crate::{Error, Result};

use super::{ModelParams, ModelSpec};

const MAGIC: [u8; 4] = *b"ATLB";
const VERSION: u32 = 1;

/// Metadata stored ahead of the parameter tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub seed: u64,
    pub config_hash: String,
}

/// Write `model` with its provenance to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelParams<f32>,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        spec: model.spec().clone(),
        seed,
        config_hash: config_hash.to_string(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    w.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for tensor in model.params() {
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint, validating structure against the embedded spec.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, CheckpointHeader)> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let display = path.display().to_string();
    let fail = |offset: u64, reason: String| Error::format(display.clone(), offset, reason);

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, &display)?;
    if magic != MAGIC {
        return Err(fail(0, format!("bad magic {magic:02x?}, expected `ATLB`")));
    }
    let version = r.u32_le(&display)?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported format version {version}")));
    }
    let header_len = r.u32_le(&display)? as usize;
    let header_start = r.offset;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact_at(&mut header_bytes, &display)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| fail(header_start, format!("header does not parse: {e}")))?;

    let expected = header.spec.param_shapes();
    let count = r.u32_le(&display)? as usize;
    if count != expected.len() {
        return Err(fail(
            r.offset - 4,
            format!("{count} tensors stored but spec declares {}", expected.len()),
        ));
    }
    let mut params = Vec::with_capacity(count);
    for shape in &expected {
        let at = r.offset;
        let rank = r.u32_le(&display)? as usize;
        if rank != shape.len() {
            return Err(fail(at, format!("rank {rank} stored, spec wants {:?}", shape)));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32_le(&display)? as usize);
        }
        if dims != *shape {
            return Err(fail(at, format!("shape {dims:?} stored, spec wants {shape:?}")));
        }
        let numel: usize = dims.iter().product();
        let data = r.f32_vec_le(numel, &display)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(fail(at, "non-finite parameter value".into()));
        }
        params.push(Tensor::param(data, &dims).map_err(Error::from)?);
    }
    let model = ModelParams::from_tensors(header.spec.clone(), params)?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::super::build_model;
    use super::*;

    fn roundtrip_model() -> ModelParams<f32> {
        build_model(&ModelSpec::mlp(6, 4, 2, 3), 42).unwrap()
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = roundtrip_model();
        save_checkpoint(&path, &model, 42, "abc123").unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.seed, 42);
        assert_eq!(header.config_hash, "abc123");
        assert_eq!(header.spec, *model.spec());
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
        assert!(loaded.params().iter().all(|p| p.requires_grad()));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE rest of file").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = roundtrip_model();
        save_checkpoint(&path, &model, 1, "h").unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 10]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset > 0),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn shape_disagreement_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let model = roundtrip_model();
        save_checkpoint(&a, &model, 1, "h").unwrap();
        // Corrupt one stored dimension.
        let mut bytes = std::fs::read(&a).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        // First tensor: count(4) + rank(4) then dims start.
        let dim_pos = 12 + header_len + 4 + 4;
        bytes[dim_pos] = bytes[dim_pos].wrapping_add(1);
        std::fs::write(&a, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&a), Err(Error::Format { .. })));
    }
}

//! Small shared helpers: seed derivation, hashing, grids, counted reads.

use std::io::Read;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Derive a child seed from a base seed and a context tag.
///
/// Used wherever one logical experiment fans out into independent random
/// streams (scan points, replicates, per-target visualization seeds) so that
/// runs stay reproducible regardless of execution order.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `take` distinct indices out of `0..count`, sorted ascending so callers
/// preserve the source ordering. `take >= count` returns every index.
pub fn sample_indices(count: usize, take: usize, seed: u64) -> Vec<usize> {
    if take >= count {
        return (0..count).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, count, take).into_vec();
    picked.sort_unstable();
    picked
}

/// `n` linearly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Reader that tracks its byte offset so binary-format errors can point at
/// the exact failure position.
pub(crate) struct CountingReader<R> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    pub fn read_exact_at(&mut self, buf: &mut [u8], path: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(path, self.offset, format!("truncated read: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u32_le(&mut self, path: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, path)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn f32_vec_le(&mut self, n: usize, path: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact_at(&mut bytes, path)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect())
    }

    pub fn u32_vec_le(&mut self, n: usize, path: &str) -> Result<Vec<u32>> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact_at(&mut bytes, path)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect())
    }
}

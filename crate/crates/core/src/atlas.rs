//! Activation collection, embedding-grid binning, and whitened per-cell
//! direction vectors.
//!
//! The pipeline walks §[`collect_activations`] -> 2-D embedding (the
//! [`crate::embedding`] module) -> [`bin_to_grid`] -> [`average_and_whiten`].
//! Each occupied grid cell yields one direction vector: the whitened mean
//! of the activations whose embeddings fall in that cell. Whitening uses
//! the full collection's covariance with a relative ridge, stored so the
//! map can be inverted exactly. [`neuron_directions`] produces one-hot
//! targets for single-neuron visualization instead.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::embedding::Embedding2D;
use crate::models::ModelParams;
use crate::util::{derive_seed, CountingReader};
use crate::{Error, Result};

/// Relative ridge added to the covariance spectrum: `1e-5 * trace / n`.
const RIDGE_SCALE: f64 = 1e-5;

/// Cells with fewer member activations than this render blank.
pub const DEFAULT_MIN_OCCUPANCY: usize = 5;

const ATLAS_MAGIC: &[u8; 4] = b"ATLG";
const ATLAS_VERSION: u32 = 1;
const COLLECT_BATCH: usize = 256;

/// Where activation vectors come from.
pub enum TapSource<'a> {
    /// A named tap of a model; `"fc-penultimate"` always resolves.
    Model(&'a ModelParams<f32>, &'a str),
    /// The flattened raw input; used to sanity-check the downstream
    /// pipeline without any network.
    Identity,
}

/// How to pick the spatial position when tapping a convolutional layer.
/// Dense taps ignore this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialMode {
    /// One position uniform over the feature map, per input, seeded.
    Random,
    /// The fixed center position; for deterministic comparisons.
    Center,
}

/// One activation vector per dataset row, plus where each row came from.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    /// Flat `[count, width]` row-major.
    pub vectors: Vec<f32>,
    pub count: usize,
    pub width: usize,
    pub layer: String,
    pub checkpoint_hash: String,
    pub source_index: Vec<u32>,
    /// `(y, x)` per row for conv taps; `None` for dense and identity taps.
    pub spatial: Option<Vec<(u32, u32)>>,
    pub labels: Vec<u32>,
}

impl ActivationSet {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.width..(i + 1) * self.width]
    }

    /// Copy widened to `f64`, the element type the embedding stage takes.
    pub fn vectors_f64(&self) -> Vec<f64> {
        self.vectors.iter().map(|&v| v as f64).collect()
    }

    /// Keep only the listed rows, in the given order; provenance columns
    /// follow so each kept vector still names its source image.
    pub fn subset(&self, indices: &[usize]) -> Result<ActivationSet> {
        if indices.is_empty() {
            return Err(Error::contract("activation subset needs at least one row"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count) {
            return Err(Error::contract(format!(
                "activation row {bad} out of range for {} rows",
                self.count
            )));
        }
        let mut vectors = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            vectors.extend_from_slice(self.row(i));
        }
        Ok(ActivationSet {
            vectors,
            count: indices.len(),
            width: self.width,
            layer: self.layer.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            source_index: indices.iter().map(|&i| self.source_index[i]).collect(),
            spatial: self
                .spatial
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Run the dataset through the tap and keep one vector per input.
pub fn collect_activations(
    source: TapSource<'_>,
    data: &LabeledDataset,
    spatial_mode: SpatialMode,
    seed: u64,
) -> Result<ActivationSet> {
    if data.is_empty() {
        return Err(Error::contract("cannot collect activations from an empty dataset"));
    }
    let count = data.len();
    let labels = data.labels().values.clone();
    let source_index: Vec<u32> = (0..count as u32).collect();

    let (params, layer) = match source {
        TapSource::Identity => {
            return Ok(ActivationSet {
                vectors: data.images().to_vec(),
                count,
                width: data.input_dim(),
                layer: "identity".to_string(),
                checkpoint_hash: "identity".to_string(),
                source_index,
                spatial: None,
                labels,
            });
        }
        TapSource::Model(params, layer) => (params, layer),
    };

    let frozen = params.frozen();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "atlas-spatial", 0));
    let mut vectors: Vec<f32> = Vec::new();
    let mut spatial: Option<Vec<(u32, u32)>> = None;
    let mut width = 0usize;

    let mut start = 0;
    while start < count {
        let end = (start + COLLECT_BATCH).min(count);
        let indices: Vec<usize> = (start..end).collect();
        let (x, _) = data.batch(&indices)?;
        let pass = frozen.forward(&x)?;
        let tap = pass.tap(layer).ok_or_else(|| {
            let known: Vec<&str> = pass.tap_names().collect();
            Error::contract(format!(
                "unknown tap {layer:?}; this model taps: {} (and the alias {:?})",
                known.join(", "),
                crate::models::PENULTIMATE_TAP,
            ))
        })?;
        match tap.shape() {
            [b, n] => {
                width = *n;
                vectors.extend_from_slice(&tap.data()[..b * n]);
            }
            [b, c, h, w] => {
                width = *c;
                let sp = spatial.get_or_insert_with(Vec::new);
                let td = tap.data();
                for bi in 0..*b {
                    let (y, xpos) = match spatial_mode {
                        SpatialMode::Random => {
                            use rand::Rng;
                            (rng.gen_range(0..*h), rng.gen_range(0..*w))
                        }
                        SpatialMode::Center => (*h / 2, *w / 2),
                    };
                    for ci in 0..*c {
                        vectors.push(td[((bi * c + ci) * h + y) * w + xpos]);
                    }
                    sp.push((y as u32, xpos as u32));
                }
            }
            other => {
                return Err(Error::contract(format!(
                    "tap {layer:?} has unsupported rank {:?}",
                    other
                )))
            }
        }
        start = end;
    }

    Ok(ActivationSet {
        vectors,
        count,
        width,
        layer: layer.to_string(),
        checkpoint_hash: params.content_hash(),
        source_index,
        spatial,
        labels,
    })
}

fn cell_1d(v: f64, min: f64, span: f64, g: usize) -> usize {
    if span <= 0.0 {
        return 0;
    }
    let t = (v - min) / span;
    if t <= 0.0 {
        0
    } else {
        // Boundary points belong to the lower cell; the maximum lands in
        // the last cell.
        ((t * g as f64).ceil() as usize - 1).min(g - 1)
    }
}

/// Assign every embedded point to a cell of the g-by-g partition of the
/// embedding's bounding box. Cell index is `row * g + column` with rows
/// following y and columns following x, both ascending.
pub fn bin_to_grid(embedding: &Embedding2D, g: usize) -> Result<Vec<u32>> {
    if g == 0 {
        return Err(Error::contract("grid size must be at least 1"));
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..embedding.count {
        let (x, y) = embedding.point(i);
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span_x = max_x - min_x;
    let span_y = max_y - min_y;
    Ok((0..embedding.count)
        .map(|i| {
            let (x, y) = embedding.point(i);
            let ix = cell_1d(x, min_x, span_x, g);
            let iy = cell_1d(y, min_y, span_y, g);
            (iy * g + ix) as u32
        })
        .collect())
}

/// The affine whitening map fitted to an activation collection:
/// `z = F (v - mean)` with `F` the inverse symmetric square root of the
/// ridged covariance, and its exact inverse `v = I z + mean`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Whitening {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `[dim, dim]` row-major forward map.
    pub forward: Vec<f64>,
    /// `[dim, dim]` row-major inverse map.
    pub inverse: Vec<f64>,
    pub ridge: f64,
}

impl Whitening {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..n)
            .map(|i| {
                self.forward[i * n..(i + 1) * n]
                    .iter()
                    .zip(&centered)
                    .map(|(w, c)| w * c)
                    .sum()
            })
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                self.inverse[i * n..(i + 1) * n]
                    .iter()
                    .zip(z)
                    .map(|(w, c)| w * c)
                    .sum::<f64>()
                    + self.mean[i]
            })
            .collect()
    }
}

/// Grid of whitened direction vectors with its occupancy bookkeeping.
#[derive(Debug, Clone)]
pub struct AtlasGrid {
    pub g: usize,
    /// Activation width of each direction vector.
    pub width: usize,
    pub layer: String,
    pub checkpoint_hash: String,
    pub ridge: f64,
    pub min_occupancy: usize,
    /// `g*g` flags; directions are defined only where true.
    pub occupied: Vec<bool>,
    /// `g*g` member counts, including cells below the occupancy threshold.
    pub counts: Vec<u32>,
    /// Flat `[g*g, width]`; masked cells hold zero rows.
    pub directions: Vec<f32>,
}

impl AtlasGrid {
    pub fn cells(&self) -> usize {
        self.g * self.g
    }

    /// Direction vector of an occupied cell.
    pub fn direction(&self, cell: usize) -> Option<&[f32]> {
        if self.occupied[cell] {
            Some(&self.directions[cell * self.width..(cell + 1) * self.width])
        } else {
            None
        }
    }

    pub fn occupied_cells(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

/// Mean the activations of every sufficiently occupied cell and whiten the
/// means against the full collection's ridged covariance.
pub fn average_and_whiten(
    acts: &ActivationSet,
    assignments: &[u32],
    g: usize,
    min_occupancy: usize,
) -> Result<(AtlasGrid, Whitening)> {
    let n = acts.width;
    let count = acts.count;
    if assignments.len() != count {
        return Err(Error::contract(format!(
            "{} assignments for {count} activation rows",
            assignments.len()
        )));
    }
    let cells = g * g;
    if g == 0 || assignments.iter().any(|&c| c as usize >= cells) {
        return Err(Error::contract(format!(
            "cell assignment out of range for a {g}x{g} grid"
        )));
    }
    if count == 0 || n == 0 {
        return Err(Error::contract("empty activation set"));
    }

    let mut mean = vec![0.0f64; n];
    for i in 0..count {
        for (m, &v) in mean.iter_mut().zip(acts.row(i)) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }

    // Covariance of the centered collection, accumulated in row blocks so
    // the centered copy never materializes whole.
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut start = 0;
    while start < count {
        let rows = (count - start).min(1024);
        let mut block = DMatrix::<f64>::zeros(rows, n);
        for r in 0..rows {
            let src = acts.row(start + r);
            for c in 0..n {
                block[(r, c)] = src[c] as f64 - mean[c];
            }
        }
        cov.gemm(1.0, &block.transpose(), &block, 1.0);
        start += rows;
    }
    cov *= 1.0 / count as f64;

    let ridge = RIDGE_SCALE * cov.trace() / n as f64;
    let eig = cov.symmetric_eigen();
    let lam_min = eig.eigenvalues.min();
    if lam_min + ridge <= 0.0 {
        return Err(Error::numeric(format!(
            "covariance not positive-definite even with ridge {ridge:.3e}: smallest eigenvalue {lam_min:.3e}"
        )));
    }

    let mut scaled_fwd = eig.eigenvectors.clone();
    let mut scaled_inv = eig.eigenvectors.clone();
    for j in 0..n {
        let s = (eig.eigenvalues[j] + ridge).sqrt();
        for i in 0..n {
            scaled_fwd[(i, j)] /= s;
            scaled_inv[(i, j)] *= s;
        }
    }
    let vt = eig.eigenvectors.transpose();
    let fwd = &scaled_fwd * &vt;
    let inv = &scaled_inv * &vt;
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(m[(i, j)]);
            }
        }
        out
    };
    let whitening = Whitening {
        dim: n,
        mean,
        forward: row_major(&fwd),
        inverse: row_major(&inv),
        ridge,
    };

    let mut counts = vec![0u32; cells];
    let mut sums = vec![0.0f64; cells * n];
    for (i, &cell) in assignments.iter().enumerate() {
        let cell = cell as usize;
        counts[cell] += 1;
        for (s, &v) in sums[cell * n..(cell + 1) * n].iter_mut().zip(acts.row(i)) {
            *s += v as f64;
        }
    }

    let threshold = min_occupancy.max(1) as u32;
    let mut occupied = vec![false; cells];
    let mut directions = vec![0.0f32; cells * n];
    for cell in 0..cells {
        if counts[cell] < threshold {
            continue;
        }
        occupied[cell] = true;
        let cell_mean: Vec<f64> = sums[cell * n..(cell + 1) * n]
            .iter()
            .map(|s| s / counts[cell] as f64)
            .collect();
        let z = whitening.apply(&cell_mean);
        for (d, v) in directions[cell * n..(cell + 1) * n].iter_mut().zip(z) {
            *d = v as f32;
        }
    }

    let grid = AtlasGrid {
        g,
        width: n,
        layer: acts.layer.clone(),
        checkpoint_hash: acts.checkpoint_hash.clone(),
        ridge,
        min_occupancy,
        occupied,
        counts,
        directions,
    };
    Ok((grid, whitening))
}

/// `count` distinct one-hot targets in an `n`-wide layer, sampled
/// uniformly without replacement. Returns (neuron index, basis vector).
pub fn neuron_directions(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, Vec<f32>)>> {
    if count > n {
        return Err(Error::contract(format!(
            "cannot sample {count} distinct neurons from a width-{n} layer"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "neuron-sample", 0));
    let picks = rand::seq::index::sample(&mut rng, n, count);
    Ok(picks
        .into_iter()
        .map(|idx| {
            let mut v = vec![0.0f32; n];
            v[idx] = 1.0;
            (idx, v)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct AtlasFileHeader {
    g: usize,
    width: usize,
    layer: String,
    checkpoint_hash: String,
    ridge: f64,
    min_occupancy: usize,
    counts: Vec<u32>,
}

/// Persist a grid: magic, version, JSON metadata, occupancy mask bytes,
/// dense little-endian `f32` direction matrix.
pub fn save_atlas(path: &Path, grid: &AtlasGrid) -> Result<()> {
    let header = AtlasFileHeader {
        g: grid.g,
        width: grid.width,
        layer: grid.layer.clone(),
        checkpoint_hash: grid.checkpoint_hash.clone(),
        ridge: grid.ridge,
        min_occupancy: grid.min_occupancy,
        counts: grid.counts.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(ATLAS_MAGIC)?;
    out.write_all(&ATLAS_VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    for &o in &grid.occupied {
        out.write_all(&[o as u8])?;
    }
    for &v in &grid.directions {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Load a grid written by [`save_atlas`], validating structure as it reads.
pub fn load_atlas(path: &Path) -> Result<AtlasGrid> {
    let display = path.display().to_string();
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, &display)?;
    if &magic != ATLAS_MAGIC {
        return Err(Error::format(&display, 0, "not an atlas file (bad magic)"));
    }
    let version = r.u32_le(&display)?;
    if version != ATLAS_VERSION {
        return Err(Error::format(
            &display,
            4,
            format!("unsupported atlas version {version}"),
        ));
    }
    let header_len = r.u32_le(&display)? as usize;
    let header_start = r.offset;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact_at(&mut header_bytes, &display)?;
    let header: AtlasFileHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(&display, header_start, format!("bad header: {e}")))?;

    let cells = header.g * header.g;
    if header.g == 0 || header.width == 0 || header.counts.len() != cells {
        return Err(Error::format(
            &display,
            header_start,
            "header geometry inconsistent",
        ));
    }
    let mut mask = vec![0u8; cells];
    let mask_start = r.offset;
    r.read_exact_at(&mut mask, &display)?;
    if mask.iter().any(|&b| b > 1) {
        return Err(Error::format(&display, mask_start, "occupancy mask byte not 0/1"));
    }
    let data_start = r.offset;
    let directions = r.f32_vec_le(cells * header.width, &display)?;
    if directions.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(
            &display,
            data_start,
            "non-finite direction value",
        ));
    }
    Ok(AtlasGrid {
        g: header.g,
        width: header.width,
        layer: header.layer,
        checkpoint_hash: header.checkpoint_hash,
        ridge: header.ridge,
        min_occupancy: header.min_occupancy,
        occupied: mask.into_iter().map(|b| b == 1).collect(),
        counts: header.counts,
        directions,
    })
}

/// Occupancy histogram of an assignment vector; keys are cell indices.
pub fn occupancy(assignments: &[u32]) -> HashMap<u32, u32> {
    let mut map = HashMap::new();
    for &c in assignments {
        *map.entry(c).or_insert(0) += 1;
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::tiny_digits;
    use crate::embedding::EmbeddingConfig;
    use crate::models::{build_model, ModelSpec};
    use rand::Rng;

    fn embedding_from(coords: Vec<f64>) -> Embedding2D {
        let count = coords.len() / 2;
        Embedding2D {
            coords,
            count,
            config: EmbeddingConfig::default(),
        }
    }

    fn random_acts(count: usize, width: usize, seed: u64) -> ActivationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActivationSet {
            vectors: (0..count * width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            count,
            width,
            layer: "fc1".into(),
            checkpoint_hash: "test".into(),
            source_index: (0..count as u32).collect(),
            spatial: None,
            labels: vec![0; count],
        }
    }

    #[test]
    fn activation_subset_keeps_rows_aligned() {
        let mut acts = random_acts(6, 3, 9);
        acts.labels = (0..6).collect();
        acts.spatial = Some((0..6).map(|i| (i, i + 10)).collect());
        let sub = acts.subset(&[4, 1]).unwrap();
        assert_eq!(sub.count, 2);
        assert_eq!(sub.row(0), acts.row(4));
        assert_eq!(sub.row(1), acts.row(1));
        assert_eq!(sub.labels, vec![4, 1]);
        assert_eq!(sub.source_index, vec![4, 1]);
        assert_eq!(sub.spatial.as_ref().unwrap()[0], (4, 14));
        assert!(acts.subset(&[]).is_err());
        assert!(acts.subset(&[6]).is_err());
    }

    #[test]
    fn identity_collection_is_flattened_images() {
        let data = tiny_digits(12, 5, 5);
        let acts =
            collect_activations(TapSource::Identity, &data, SpatialMode::Random, 0).unwrap();
        assert_eq!(acts.count, 12);
        assert_eq!(acts.width, 25);
        assert_eq!(acts.vectors, data.images());
        assert_eq!(acts.labels, data.labels().values);
        assert!(acts.spatial.is_none());
    }

    #[test]
    fn dense_tap_matches_single_image_forward() {
        let data = tiny_digits(10, 4, 4);
        let spec = ModelSpec::mlp(16, 6, 2, 10);
        let model = build_model::<f32>(&spec, 3).unwrap();
        let acts = collect_activations(
            TapSource::Model(&model, "fc-penultimate"),
            &data,
            SpatialMode::Random,
            0,
        )
        .unwrap();
        assert_eq!(acts.count, 10);
        assert_eq!(acts.width, 6);
        assert_eq!(acts.checkpoint_hash, model.content_hash());
        let (x, _) = data.batch(&[4]).unwrap();
        let single = model.frozen().forward(&x).unwrap();
        for (a, b) in acts.row(4).iter().zip(single.penultimate().data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_tap_samples_positions_deterministically() {
        let data = tiny_digits(9, 8, 8);
        let spec = ModelSpec::cnn(1, 8, 8, 16, 10).unwrap();
        let model = build_model::<f32>(&spec, 1).unwrap();
        let a = collect_activations(
            TapSource::Model(&model, "conv1a"),
            &data,
            SpatialMode::Random,
            7,
        )
        .unwrap();
        assert_eq!(a.width, 4);
        let positions = a.spatial.as_ref().unwrap();
        assert_eq!(positions.len(), 9);
        assert!(positions.iter().all(|&(y, x)| y < 8 && x < 8));
        let b = collect_activations(
            TapSource::Model(&model, "conv1a"),
            &data,
            SpatialMode::Random,
            7,
        )
        .unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.spatial, b.spatial);
        let centered = collect_activations(
            TapSource::Model(&model, "conv1a"),
            &data,
            SpatialMode::Center,
            0,
        )
        .unwrap();
        assert!(centered.spatial.unwrap().iter().all(|&p| p == (4, 4)));
    }

    #[test]
    fn unknown_tap_lists_available_names() {
        let data = tiny_digits(4, 4, 4);
        let spec = ModelSpec::mlp(16, 6, 1, 10);
        let model = build_model::<f32>(&spec, 0).unwrap();
        let err = collect_activations(
            TapSource::Model(&model, "conv9z"),
            &data,
            SpatialMode::Random,
            0,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("fc1"), "missing tap list: {err}");
        assert!(err.contains("fc-penultimate"), "missing alias: {err}");
    }

    #[test]
    fn corners_fill_a_two_by_two_grid() {
        let e = embedding_from(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let cells = bin_to_grid(&e, 2).unwrap();
        assert_eq!(cells, vec![0, 1, 2, 3]);
    }

    #[test]
    fn grid_of_one_holds_everything() {
        let e = embedding_from(vec![-3.0, 2.0, 5.0, -7.0, 0.1, 0.2]);
        assert_eq!(bin_to_grid(&e, 1).unwrap(), vec![0, 0, 0]);
        assert!(bin_to_grid(&e, 0).is_err());
    }

    #[test]
    fn boundary_points_take_the_lower_cell() {
        // x = 0.5 sits exactly on the 2-cell boundary of span [0, 1].
        let e = embedding_from(vec![0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let cells = bin_to_grid(&e, 2).unwrap();
        assert_eq!(cells, vec![0, 0, 1]);
    }

    #[test]
    fn binning_is_affine_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Coordinates on a 1/1024 lattice keep the rescaled arithmetic
        // exact, so assignments must match bit-for-bit.
        let coords: Vec<f64> = (0..120)
            .map(|_| rng.gen_range(0..1024) as f64 / 1024.0)
            .collect();
        let base = embedding_from(coords.clone());
        let scaled = embedding_from(
            coords
                .chunks(2)
                .flat_map(|p| [2.0 * p[0] + 1.0, 0.5 * p[1] - 3.0])
                .collect(),
        );
        assert_eq!(
            bin_to_grid(&base, 15).unwrap(),
            bin_to_grid(&scaled, 15).unwrap()
        );
    }

    #[test]
    fn whitened_collection_has_identity_covariance() {
        let acts = random_acts(400, 16, 21);
        let e = embedding_from(vec![0.0; 800]);
        let assignments = bin_to_grid(&e, 1).unwrap();
        let (_, wh) = average_and_whiten(&acts, &assignments, 1, 1).unwrap();

        let n = acts.width;
        let whitened: Vec<Vec<f64>> = (0..acts.count)
            .map(|i| wh.apply(&acts.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect();
        let mut cov = vec![0.0f64; n * n];
        for row in &whitened {
            for i in 0..n {
                for j in 0..n {
                    cov[i * n + j] += row[i] * row[j];
                }
            }
        }
        let mut frob = 0.0;
        for i in 0..n {
            for j in 0..n {
                let c = cov[i * n + j] / acts.count as f64 - if i == j { 1.0 } else { 0.0 };
                frob += c * c;
            }
        }
        frob = frob.sqrt() / n as f64;
        assert!(frob <= 1e-3, "Frobenius/n deviation {frob}");
    }

    #[test]
    fn whitening_inverts_cell_means() {
        let acts = random_acts(300, 8, 33);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords: Vec<f64> = (0..600).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let e = embedding_from(coords);
        let assignments = bin_to_grid(&e, 3).unwrap();
        let (grid, wh) = average_and_whiten(&acts, &assignments, 3, 1).unwrap();

        assert_eq!(grid.counts.iter().map(|&c| c as usize).sum::<usize>(), 300);
        for cell in 0..grid.cells() {
            let Some(dir) = grid.direction(cell) else {
                continue;
            };
            // Recompute the raw cell mean independently.
            let members: Vec<usize> = (0..acts.count)
                .filter(|&i| assignments[i] as usize == cell)
                .collect();
            let mut mean = vec![0.0f64; acts.width];
            for &i in &members {
                for (m, &v) in mean.iter_mut().zip(acts.row(i)) {
                    *m += v as f64;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            let z: Vec<f64> = dir.iter().map(|&v| v as f64).collect();
            let back = wh.invert(&z);
            for (a, b) in back.iter().zip(&mean) {
                let rel = (a - b).abs() / b.abs().max(1e-9);
                // f32 storage of the direction dominates the error budget.
                assert!(rel < 1e-4, "recovered {a} expected {b}");
            }
            let exact = wh.invert(&wh.apply(&mean));
            for (a, b) in exact.iter().zip(&mean) {
                assert!((a - b).abs() / b.abs().max(1e-9) < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_cell_direction_is_zero() {
        let acts = random_acts(50, 4, 9);
        let e = embedding_from(vec![0.25; 100]);
        let assignments = bin_to_grid(&e, 1).unwrap();
        let (grid, _) = average_and_whiten(&acts, &assignments, 1, 1).unwrap();
        let dir = grid.direction(0).unwrap();
        assert!(dir.iter().all(|v| v.abs() < 1e-5), "direction {dir:?}");
    }

    #[test]
    fn sparse_cells_are_masked() {
        let acts = random_acts(13, 4, 2);
        // Ten rows in cell 0, three in cell 3.
        let assignments: Vec<u32> = (0..13).map(|i| if i < 10 { 0 } else { 3 }).collect();
        let (grid, _) = average_and_whiten(&acts, &assignments, 2, 5).unwrap();
        assert!(grid.occupied[0]);
        assert!(!grid.occupied[3]);
        assert_eq!(grid.counts[3], 3);
        assert_eq!(grid.direction(3), None);
        assert_eq!(grid.occupied_cells(), 1);
        assert!(grid.directions[3 * 4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_covariance_reports_eigenvalue() {
        let acts = ActivationSet {
            vectors: vec![0.5; 40],
            count: 10,
            width: 4,
            layer: "fc1".into(),
            checkpoint_hash: "test".into(),
            source_index: (0..10).collect(),
            spatial: None,
            labels: vec![0; 10],
        };
        let err = average_and_whiten(&acts, &vec![0; 10], 1, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("eigenvalue"), "unexpected error: {err}");
    }

    #[test]
    fn neuron_sampling_is_exhaustive_and_seeded() {
        let all = neuron_directions(20, 20, 4).unwrap();
        let mut seen: Vec<usize> = all.iter().map(|(i, _)| *i).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        for (idx, v) in &all {
            assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 19);
            assert_eq!(v[*idx], 1.0);
        }
        let again = neuron_directions(20, 20, 4).unwrap();
        assert_eq!(
            all.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
            again.iter().map(|(i, _)| *i).collect::<Vec<_>>()
        );
        assert!(neuron_directions(5, 6, 0).is_err());
    }

    #[test]
    fn atlas_file_round_trips() {
        let acts = random_acts(60, 5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = embedding_from(coords);
        let assignments = bin_to_grid(&e, 2).unwrap();
        let (grid, _) = average_and_whiten(&acts, &assignments, 2, 5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.atlas");
        save_atlas(&path, &grid).unwrap();
        let back = load_atlas(&path).unwrap();
        assert_eq!(back.g, grid.g);
        assert_eq!(back.width, grid.width);
        assert_eq!(back.layer, grid.layer);
        assert_eq!(back.checkpoint_hash, grid.checkpoint_hash);
        assert_eq!(back.ridge, grid.ridge);
        assert_eq!(back.occupied, grid.occupied);
        assert_eq!(back.counts, grid.counts);
        assert_eq!(back.directions, grid.directions);

        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        assert!(matches!(load_atlas(&path), Err(Error::Format { .. })));
        std::fs::write(&path, b"GLTA then junk").unwrap();
        let err = load_atlas(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn occupancy_sums_to_total() {
        let assignments = vec![0, 0, 1, 3, 3, 3];
        let occ = occupancy(&assignments);
        assert_eq!(occ[&0], 2);
        assert_eq!(occ[&3], 3);
        assert_eq!(occ.values().sum::<u32>(), 6);
    }
}

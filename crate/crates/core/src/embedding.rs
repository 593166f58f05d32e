//! UMAP-style reduction of activation vectors to two dimensions.
//!
//! Three stages, composed by [`embed`]:
//! 1. [`knn_graph`]: exact k-nearest neighbors by brute force. Desk-scale
//!    collections (tens of thousands of points) make an approximate index
//!    unnecessary, and exactness removes a correctness risk.
//! 2. [`fuzzy_affinities`]: per-point bandwidths solved by bisection so
//!    each row's smoothed degree hits log2(k), then symmetrization by
//!    probabilistic union.
//! 3. [`layout_2d`]: force-directed stochastic descent with the standard
//!    low-dimensional kernel fitted to `min_dist`, edge-frequency
//!    scheduling and negative sampling. Single-threaded so that a seed
//!    pins the output exactly.
//!
//! Coordinates are never comparable to any external implementation;
//! downstream checks are structural (cluster purity, separation).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::derive_seed;
use crate::{Error, Result};

/// Distance used by the k-NN stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// Hyperparameters of the embedding pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub layout_epochs: usize,
    pub negative_sample_rate: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            n_neighbors: 15,
            min_dist: 0.1,
            layout_epochs: 500,
            negative_sample_rate: 5,
            metric: Metric::Euclidean,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    fn validate(&self, count: usize) -> Result<()> {
        if self.n_neighbors < 2 || self.n_neighbors >= count {
            return Err(Error::contract(format!(
                "n_neighbors must be in [2, count); got {} for {} points",
                self.n_neighbors, count
            )));
        }
        if !(0.0..1.0).contains(&self.min_dist) {
            return Err(Error::contract(format!(
                "min_dist must be in [0, 1); got {}",
                self.min_dist
            )));
        }
        if self.layout_epochs == 0 || self.negative_sample_rate == 0 {
            return Err(Error::contract(
                "layout_epochs and negative_sample_rate must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Exact k-nearest-neighbor graph; row `i` occupies `[i*k, (i+1)*k)` in
/// `indices` and `distances`, sorted by (distance, index) ascending.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub count: usize,
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl KnnGraph {
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Symmetric affinity graph. `edges` holds both directions of every
/// undirected edge with equal weight, sorted by (head, tail).
#[derive(Debug, Clone)]
pub struct FuzzyGraph {
    pub count: usize,
    pub edges: Vec<Edge>,
    /// Per-point bandwidth from the bisection solve.
    pub sigmas: Vec<f64>,
    /// Per-point nearest-neighbor distance.
    pub rhos: Vec<f64>,
    /// Rows where bisection failed and the mean-distance fallback was used.
    pub fallback_rows: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub head: u32,
    pub tail: u32,
    pub weight: f64,
}

/// 2-D coordinates produced by the layout, flat `[count, 2]` row-major.
#[derive(Debug, Clone)]
pub struct Embedding2D {
    pub coords: Vec<f64>,
    pub count: usize,
    pub config: EmbeddingConfig,
}

impl Embedding2D {
    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.coords[2 * i], self.coords[2 * i + 1])
    }

    /// Diagonal of the axis-aligned bounding box of the coordinates.
    pub fn diameter(&self) -> f64 {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..self.count {
            let (x, y) = self.point(i);
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        ((max_x - min_x).powi(2) + (max_y - min_y).powi(2)).sqrt()
    }
}

fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || points.is_empty() || points.len() % dim != 0 {
        return Err(Error::contract(format!(
            "points buffer of {} values is not a nonempty [count, {}] matrix",
            points.len(),
            dim
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("points must be finite".to_string()));
    }
    Ok(points.len() / dim)
}

fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for (x, y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
        }
    }
}

/// Exact k nearest neighbors of every row, self excluded, ties broken by
/// the lower index.
pub fn knn_graph(points: &[f64], dim: usize, k: usize, metric: Metric) -> Result<KnnGraph> {
    let count = check_points(points, dim)?;
    if k == 0 || k >= count {
        return Err(Error::contract(format!(
            "k must be in [1, count); got k={} for {} points",
            k, count
        )));
    }

    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let a = &points[i * dim..(i + 1) * dim];
            // Max-heap of the current k best; worst candidate on top.
            let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
            for j in 0..count {
                if j == i {
                    continue;
                }
                let d = distance(metric, a, &points[j * dim..(j + 1) * dim]);
                heap.push((d, j as u32));
                heap.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                heap.truncate(k);
            }
            let (dists, idxs): (Vec<f64>, Vec<u32>) = heap.into_iter().unzip();
            (idxs, dists)
        })
        .collect();

    let mut indices = Vec::with_capacity(count * k);
    let mut distances = Vec::with_capacity(count * k);
    for (idxs, dists) in rows {
        indices.extend(idxs);
        distances.extend(dists);
    }
    Ok(KnnGraph {
        count,
        k,
        indices,
        distances,
    })
}

const BISECT_ITERS: usize = 64;
const SMOOTH_TOL: f64 = 1e-3;

/// Smoothed degree of one row at bandwidth `sigma`; distances at or below
/// `rho` contribute exactly 1 regardless of `sigma`.
fn smooth_degree(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists
        .iter()
        .map(|&d| if d <= rho { 1.0 } else { (-(d - rho) / sigma).exp() })
        .sum()
}

/// Bandwidth solving `smooth_degree == log2(k)`; `None` when no bracket
/// exists or the residual stays above tolerance.
fn solve_sigma(dists: &[f64], rho: f64, target: f64) -> Option<f64> {
    let mut hi = 1.0;
    let mut doublings = 0;
    while smooth_degree(dists, rho, hi) < target && doublings < BISECT_ITERS {
        hi *= 2.0;
        doublings += 1;
    }
    let mut lo = 0.0;
    let mut mid = hi;
    for _ in 0..BISECT_ITERS {
        mid = 0.5 * (lo + hi);
        if smooth_degree(dists, rho, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (smooth_degree(dists, rho, mid) - target).abs() <= SMOOTH_TOL {
        Some(mid)
    } else {
        None
    }
}

/// Probabilistic union of two directed membership strengths.
fn fuzzy_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// Fuzzy affinity graph: per-row bandwidths by bisection, directed weights
/// `exp(-(d - rho)/sigma)`, symmetrized by probabilistic union.
pub fn fuzzy_affinities(knn: &KnnGraph) -> FuzzyGraph {
    let target = (knn.k as f64).log2();
    let solved: Vec<(f64, f64, bool)> = (0..knn.count)
        .into_par_iter()
        .map(|i| {
            let dists = knn.neighbor_distances(i);
            let rho = dists[0];
            match solve_sigma(dists, rho, target) {
                Some(sigma) => (sigma, rho, false),
                None => {
                    // Degenerate row (for example all-equal distances); the
                    // mean keeps weights bounded and the row connected.
                    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
                    (mean, rho, true)
                }
            }
        })
        .collect();

    let fallback_rows = solved.iter().filter(|s| s.2).count();
    if fallback_rows > 0 {
        log::warn!(
            "affinity bandwidth bisection fell back to mean distance for {} of {} rows",
            fallback_rows,
            knn.count
        );
    }
    let sigmas: Vec<f64> = solved.iter().map(|s| s.0).collect();
    let rhos: Vec<f64> = solved.iter().map(|s| s.1).collect();

    // Directed weights keyed by the unordered pair, (low->high, high->low).
    let mut pairs: HashMap<(u32, u32), (f64, f64)> = HashMap::new();
    for i in 0..knn.count {
        let dists = knn.neighbor_distances(i);
        for (j, &nb) in knn.neighbors(i).iter().enumerate() {
            let d = dists[j];
            let w = if d <= rhos[i] {
                1.0
            } else {
                (-(d - rhos[i]) / sigmas[i]).exp()
            };
            let key = ((i as u32).min(nb), (i as u32).max(nb));
            let slot = pairs.entry(key).or_insert((0.0, 0.0));
            if (i as u32) < nb {
                slot.0 = w;
            } else {
                slot.1 = w;
            }
        }
    }

    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for (&(lo, hi), &(a, b)) in &pairs {
        let w = fuzzy_union(a, b);
        if w > 0.0 {
            edges.push(Edge {
                head: lo,
                tail: hi,
                weight: w,
            });
            edges.push(Edge {
                head: hi,
                tail: lo,
                weight: w,
            });
        }
    }
    edges.sort_unstable_by_key(|e| (e.head, e.tail));

    FuzzyGraph {
        count: knn.count,
        edges,
        sigmas,
        rhos,
        fallback_rows,
    }
}

/// Fit `(a, b)` of the low-dimensional kernel `1/(1 + a d^(2b))` to the
/// target curve `1` below `min_dist`, `exp(-(d - min_dist))` above, by
/// damped Gauss-Newton over 300 samples of d in [0, 3].
pub fn fit_kernel(min_dist: f64) -> (f64, f64) {
    let xs = crate::util::linspace(0.0, 3.0, 300);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist)).exp() })
        .collect();
    let cost = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - y) * (f - y)
            })
            .sum()
    };

    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut current = cost(a, b);
    for _ in 0..200 {
        // Accumulate the 2x2 normal equations.
        let (mut jaa, mut jab, mut jbb, mut ra, mut rb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let f = 1.0 / denom;
            let r = f - y;
            let da = -p / (denom * denom);
            let db = -2.0 * a * p * x.ln() / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ra += da * r;
            rb += db * r;
        }
        let m00 = jaa * (1.0 + lambda);
        let m11 = jbb * (1.0 + lambda);
        let det = m00 * m11 - jab * jab;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = (-ra * m11 + rb * jab) / det;
        let step_b = (-rb * m00 + ra * jab) / det;
        let (na, nb) = (a + step_a, b + step_b);
        if na > 0.0 && nb > 0.0 && cost(na, nb) < current {
            a = na;
            b = nb;
            current = cost(a, b);
            lambda = (lambda / 3.0).max(1e-12);
            if step_a.abs() + step_b.abs() < 1e-12 {
                break;
            }
        } else {
            lambda *= 3.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

fn clip4(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

/// Force-directed layout of the affinity graph into the plane.
///
/// Random init in [-10, 10]^2; per epoch, edges fire on a frequency
/// schedule proportional to their weight, attracting both endpoints, and
/// each firing draws `negative_sample_rate` repulsive samples that push
/// only the head. The step size decays linearly to zero.
pub fn layout_2d(graph: &FuzzyGraph, config: &EmbeddingConfig) -> Result<Embedding2D> {
    let count = graph.count;
    if count == 0 {
        return Err(Error::contract("layout of an empty graph".to_string()));
    }
    if count == 1 {
        return Ok(Embedding2D {
            coords: vec![0.0, 0.0],
            count: 1,
            config: config.clone(),
        });
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "layout-init", 0));
    let mut coords: Vec<f64> = (0..2 * count)
        .map(|_| init_rng.gen_range(-10.0..10.0))
        .collect();

    let edges: Vec<&Edge> = graph.edges.iter().filter(|e| e.weight > 0.0).collect();
    if !edges.is_empty() {
        let (a, b) = fit_kernel(config.min_dist);
        let w_max = edges.iter().map(|e| e.weight).fold(0.0_f64, f64::max);
        let epochs = config.layout_epochs;
        let eps: Vec<f64> = edges.iter().map(|e| w_max / e.weight).collect();
        let epn: Vec<f64> = eps
            .iter()
            .map(|&e| e / config.negative_sample_rate as f64)
            .collect();
        let mut next_sample = eps.clone();
        let mut next_negative = epn.clone();
        let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "layout-negative", 0));

        for epoch in 0..epochs {
            let now = epoch as f64;
            let alpha = 1.0 - now / epochs as f64;
            for (ei, edge) in edges.iter().enumerate() {
                if next_sample[ei] > now {
                    continue;
                }
                let h = edge.head as usize;
                let t = edge.tail as usize;
                attract(&mut coords, h, t, a, b, alpha);
                next_sample[ei] += eps[ei];

                let n_neg = (((now - next_negative[ei]) / epn[ei]).max(0.0)) as usize;
                for _ in 0..n_neg {
                    let other = neg_rng.gen_range(0..count);
                    repel(&mut coords, h, other, a, b, alpha);
                }
                next_negative[ei] += n_neg as f64 * epn[ei];
            }
        }
    }

    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("layout produced non-finite coordinates"));
    }
    Ok(Embedding2D {
        coords,
        count,
        config: config.clone(),
    })
}

fn attract(coords: &mut [f64], i: usize, j: usize, a: f64, b: f64, alpha: f64) {
    let dx = coords[2 * i] - coords[2 * j];
    let dy = coords[2 * i + 1] - coords[2 * j + 1];
    let d2 = dx * dx + dy * dy;
    if d2 <= 0.0 {
        return;
    }
    let coeff = (-2.0 * a * b * d2.powf(b - 1.0)) / (1.0 + a * d2.powf(b));
    let gx = clip4(coeff * dx) * alpha;
    let gy = clip4(coeff * dy) * alpha;
    coords[2 * i] += gx;
    coords[2 * i + 1] += gy;
    coords[2 * j] -= gx;
    coords[2 * j + 1] -= gy;
}

fn repel(coords: &mut [f64], i: usize, j: usize, a: f64, b: f64, alpha: f64) {
    if i == j {
        return;
    }
    let dx = coords[2 * i] - coords[2 * j];
    let dy = coords[2 * i + 1] - coords[2 * j + 1];
    let d2 = dx * dx + dy * dy;
    if d2 > 0.0 {
        let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
        coords[2 * i] += clip4(coeff * dx) * alpha;
        coords[2 * i + 1] += clip4(coeff * dy) * alpha;
    } else {
        // Coincident distinct points carry no direction; a fixed kick
        // breaks the tie so they can separate.
        coords[2 * i] += 4.0 * alpha;
        coords[2 * i + 1] += 4.0 * alpha;
    }
}

/// Full pipeline: k-NN graph, fuzzy affinities, 2-D layout.
pub fn embed(points: &[f64], dim: usize, config: &EmbeddingConfig) -> Result<Embedding2D> {
    let count = check_points(points, dim)?;
    config.validate(count)?;
    let knn = knn_graph(points, dim, config.n_neighbors, config.metric)?;
    let fuzzy = fuzzy_affinities(&knn);
    layout_2d(&fuzzy, config)
}

/// Write `index,x,y,label` rows for every embedded point.
pub fn write_embedding_csv<W: Write>(
    embedding: &Embedding2D,
    labels: &[u32],
    out: &mut W,
) -> Result<()> {
    if labels.len() != embedding.count {
        return Err(Error::contract(format!(
            "{} labels for {} embedded points",
            labels.len(),
            embedding.count
        )));
    }
    writeln!(out, "index,x,y,label")?;
    for i in 0..embedding.count {
        let (x, y) = embedding.point(i);
        writeln!(out, "{},{},{},{}", i, x, y, labels[i])?;
    }
    Ok(())
}

/// [`write_embedding_csv`] to a file path.
pub fn save_embedding_csv(embedding: &Embedding2D, labels: &[u32], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embedding_csv(embedding, labels, &mut file)?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Isotropic Gaussian clusters in `dim` dimensions; returns flat
    /// points and per-point cluster labels.
    pub fn gaussian_clusters(
        centers: &[Vec<f64>],
        per_cluster: usize,
        sigma: f64,
        seed: u64,
    ) -> (Vec<f64>, Vec<u32>, usize) {
        use rand_distr::{Distribution, Normal};
        let dim = centers[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut points = Vec::with_capacity(centers.len() * per_cluster * dim);
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_cluster {
                for &m in center {
                    points.push(m + normal.sample(&mut rng));
                }
                labels.push(c as u32);
            }
        }
        (points, labels, dim)
    }

    /// Mean fraction of each point's k nearest embedded neighbors sharing
    /// its label.
    pub fn knn_purity(embedding: &Embedding2D, labels: &[u32], k: usize) -> f64 {
        let knn = knn_graph(&embedding.coords, 2, k, Metric::Euclidean).unwrap();
        let mut total = 0.0;
        for i in 0..embedding.count {
            let same = knn
                .neighbors(i)
                .iter()
                .filter(|&&j| labels[j as usize] == labels[i])
                .count();
            total += same as f64 / k as f64;
        }
        total / embedding.count as f64
    }
}

//! Input-space optimization toward an activation direction.
//!
//! Given a frozen model and a target direction in some tapped layer,
//! [`optimize_input`] ascends an image from near-neutral noise so the
//! layer's activation aligns with the target, applying a random jitter /
//! rescale / rotate transform before every forward pass. Two objective
//! modes exist: `cosine-power` (the default, maximized) and
//! `paper-literal`, the printed formula `(h.y) * max(0.1, angle)^4`
//! taken at face value as a minimization. The printed form drives the dot
//! product negative rather than aligning the activation, so it is kept
//! behind the mode switch rather than silently corrected; results record
//! which mode produced them.
//!
//! Images live in `[0,1]`. The default parameterization optimizes raw
//! pixels with a clamp after every step; `fourier-decorrelated`
//! optimizes frequency coefficients scaled toward low frequencies and
//! maps them through a sigmoid instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::ModelParams;
use crate::tensor::kernels::compose_affine;
use crate::tensor::{backward, AffineMatrix, Optimizer, Tensor};
use crate::util::derive_seed;
use crate::{Error, Result};

/// What the objective compares the activation against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizTarget {
    /// Direction in activation space; nonzero and finite.
    pub direction: Vec<f32>,
    /// Tap name the activation is read from.
    pub layer: String,
    pub kind: TargetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetKind {
    /// Whitened cell mean of an atlas grid.
    AtlasCell { cell: usize },
    /// Single neuron (one-hot direction).
    Neuron { index: usize },
}

impl VizTarget {
    fn validate(&self) -> Result<()> {
        if self.direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("target direction must be finite"));
        }
        if self.direction.iter().all(|&v| v == 0.0) {
            return Err(Error::contract("target direction must be nonzero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// `(h.y) * max(0.1, angle(h,y))^4`, minimized exactly as printed.
    PaperLiteral,
    /// `(h.y) * max(0.1, cos angle(h,y))^4`, maximized.
    CosinePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    Pixel,
    FourierDecorrelated,
}

/// Optimization settings; every result records the config that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct VizConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub jitter_px: f64,
    /// Uniform rescale factor range, inside (0, 2).
    pub scale_range: (f64, f64),
    /// Rotation bound in radians; draws are uniform in `[-r, r]`.
    pub rotation_range: f64,
    /// Value out-of-frame pixels take after a transform (0 for MNIST-like
    /// data, 1 for CIFAR-like).
    pub pad_fill: f32,
    pub objective_mode: ObjectiveMode,
    pub parameterization: Parameterization,
    pub seed: u64,
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            steps: 512,
            learning_rate: 0.05,
            jitter_px: 2.0,
            scale_range: (0.95, 1.05),
            rotation_range: 5.0_f64.to_radians(),
            pad_fill: 0.0,
            objective_mode: ObjectiveMode::CosinePower,
            parameterization: Parameterization::Pixel,
            seed: 0,
        }
    }
}

impl VizConfig {
    /// Identity transform on every step; isolates the objective dynamics.
    pub fn without_transforms(mut self) -> Self {
        self.jitter_px = 0.0;
        self.scale_range = (1.0, 1.0);
        self.rotation_range = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.jitter_px < 0.0 {
            return Err(Error::contract("jitter must be non-negative"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi < 2.0) {
            return Err(Error::contract(format!(
                "scale range must lie inside (0, 2), got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.rotation_range) {
            return Err(Error::contract(format!(
                "rotation bound must lie in [0, pi], got {}",
                self.rotation_range
            )));
        }
        if !(0.0..=1.0).contains(&self.pad_fill) {
            return Err(Error::contract(format!(
                "pad fill must lie in [0, 1], got {}",
                self.pad_fill
            )));
        }
        Ok(())
    }

    /// Digest of the serialized config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        crate::util::sha256_hex(&bytes)
    }
}

/// Where the compared activation comes from.
pub enum VizExtractor<'a> {
    /// Tap named by the target's `layer` on this model.
    Model(&'a ModelParams<f32>),
    /// The flattened input itself; closed-form oracle for the optimizer.
    Identity,
}

/// One optimized image and the trace that produced it.
#[derive(Debug, Clone)]
pub struct VizResult {
    /// `[C, H, W]` values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Objective value per step, in the mode's own sign convention.
    pub objective: Vec<f64>,
    pub target: VizTarget,
    pub config: VizConfig,
    pub config_hash: String,
}

/// Outcome of one grid cell in a batch render.
#[derive(Debug)]
pub enum TargetOutcome {
    /// Masked cell, nothing to optimize.
    Blank,
    Done(Box<VizResult>),
    /// The failure of one cell leaves the rest of the batch intact.
    Failed { cell: usize, message: String },
}

const ANGLE_FLOOR: f32 = 0.1;
// Keeps acos' gradient finite when activations align exactly.
const COS_CLAMP: f32 = 1.0 - 1e-6;
const NORM_EPS: f32 = 1e-12;

/// Alignment objective between an activation `h` (shape `[1, n]` or `[n]`)
/// and a fixed direction `y`. Differentiable in `h`; zero-norm `h` reads
/// as a right angle.
pub fn objective(h: &Tensor<f32>, y: &Tensor<f32>, mode: ObjectiveMode) -> Result<Tensor<f32>> {
    if y.data().iter().all(|&v| v == 0.0) {
        return Err(Error::contract("objective target must have nonzero norm"));
    }
    let dot = h.mul(y)?.sum()?;
    let norm_h = h.mul(h)?.sum()?.add(&Tensor::scalar(NORM_EPS))?.sqrt_elem()?;
    let norm_y = (y.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()).sqrt() as f32;
    let cos = dot.div(&norm_h.mul(&Tensor::scalar(norm_y))?)?;
    let cos = cos.clamp(-COS_CLAMP, COS_CLAMP)?;
    let factor = match mode {
        ObjectiveMode::PaperLiteral => {
            // max(0.1, angle): the angle never exceeds pi, so any upper
            // clamp above pi is inert.
            cos.acos_elem()?.clamp(ANGLE_FLOOR, 4.0)?
        }
        ObjectiveMode::CosinePower => cos.clamp(ANGLE_FLOOR, 2.0)?,
    };
    let f2 = factor.mul(&factor)?;
    let f4 = f2.mul(&f2)?;
    dot.mul(&f4).map_err(Error::from)
}

/// Draw one output-to-source sampling matrix: the inverse of the visual
/// chain jitter(1 px) -> rotate -> rescale -> jitter(jitter-px), all
/// anchored at the image center. Zero-width ranges skip their draw, so an
/// all-zero config is the exact identity.
pub fn sample_transform<R: Rng>(
    config: &VizConfig,
    h: usize,
    w: usize,
    rng: &mut R,
) -> AffineMatrix {
    let uniform = |rng: &mut R, lo: f64, hi: f64| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let dx2 = uniform(rng, -config.jitter_px, config.jitter_px);
    let dy2 = uniform(rng, -config.jitter_px, config.jitter_px);
    let s = uniform(rng, config.scale_range.0, config.scale_range.1);
    let theta = uniform(rng, -config.rotation_range, config.rotation_range);
    let dx1 = uniform(rng, -1.0, 1.0) * if config.jitter_px == 0.0 { 0.0 } else { 1.0 };
    let dy1 = uniform(rng, -1.0, 1.0) * if config.jitter_px == 0.0 { 0.0 } else { 1.0 };

    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let unjitter1: AffineMatrix = [1.0, 0.0, -dx1, 0.0, 1.0, -dy1];
    let (sin, cos) = theta.sin_cos();
    let unrotate: AffineMatrix = [
        cos,
        sin,
        cx - cos * cx - sin * cy,
        -sin,
        cos,
        cy + sin * cx - cos * cy,
    ];
    let unscale: AffineMatrix = [1.0 / s, 0.0, cx - cx / s, 0.0, 1.0 / s, cy - cy / s];
    let unjitter2: AffineMatrix = [1.0, 0.0, -dx2, 0.0, 1.0, -dy2];
    compose_affine(
        &unjitter1,
        &compose_affine(&unrotate, &compose_affine(&unscale, &unjitter2)),
    )
}

/// Warp with a constant fill: shift so the fill level is zero, warp (the
/// kernel pads with zero), shift back. Differentiable in `x`.
fn warp_with_fill(
    x: &Tensor<f32>,
    matrix: &AffineMatrix,
    out_hw: (usize, usize),
    fill: f32,
) -> Result<Tensor<f32>> {
    if fill == 0.0 {
        return x.affine_transform_2d(matrix, out_hw).map_err(Error::from);
    }
    let shifted = x.add(&Tensor::scalar(-fill))?;
    let warped = shifted.affine_transform_2d(matrix, out_hw)?;
    warped.add(&Tensor::scalar(fill)).map_err(Error::from)
}

/// Activation the objective sees, shaped `[1, n]`. Conv taps read the
/// center spatial position through a differentiable one-hot contraction.
fn extract(extractor: &VizExtractor<'_>, image: &Tensor<f32>, layer: &str) -> Result<Tensor<f32>> {
    match extractor {
        VizExtractor::Identity => {
            let n: usize = image.shape().iter().product();
            image.reshape(&[1, n]).map_err(Error::from)
        }
        VizExtractor::Model(params) => {
            let pass = params.forward(image)?;
            let tap = pass.tap(layer).ok_or_else(|| {
                let known: Vec<&str> = pass.tap_names().collect();
                Error::contract(format!(
                    "unknown tap {layer:?}; this model taps: {}",
                    known.join(", ")
                ))
            })?;
            match *tap.shape() {
                [_, n] => tap.reshape(&[1, n]).map_err(Error::from),
                [_, c, fh, fw] => {
                    let mut onehot = vec![0.0f32; fh * fw];
                    onehot[(fh / 2) * fw + fw / 2] = 1.0;
                    let pick = Tensor::from_vec(onehot, &[fh * fw, 1])?;
                    Ok(tap.reshape(&[c, fh * fw])?.matmul(&pick)?.reshape(&[1, c])?)
                }
                _ => Err(Error::contract(format!(
                    "tap {layer:?} has unsupported shape {:?}",
                    tap.shape()
                ))),
            }
        }
    }
}

/// Orthonormal DCT-II matrix, `[n, n]` row-major, row = frequency.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let c = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for y in 0..n {
            m[k * n + y] = c * (std::f64::consts::PI * (2.0 * y as f64 + 1.0) * k as f64
                / (2.0 * n as f64))
                .cos();
        }
    }
    m
}

/// Frequency-to-pixel basis `[h*w, h*w]` with rows scaled down at high
/// frequency, so equal coefficient steps move low frequencies most.
fn fourier_basis(h: usize, w: usize) -> Vec<f32> {
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);
    let f0 = 1.0 / (2.0 * h.max(w) as f64);
    let mut basis = vec![0.0f32; h * w * h * w];
    for ky in 0..h {
        for kx in 0..w {
            let freq = ((ky as f64 / (2.0 * h as f64)).powi(2)
                + (kx as f64 / (2.0 * w as f64)).powi(2))
            .sqrt();
            let scale = f0 / freq.max(f0);
            let row = ky * w + kx;
            for y in 0..h {
                for x in 0..w {
                    basis[row * h * w + y * w + x] = (scale * dh[ky * h + y] * dw[kx * w + x]) as f32;
                }
            }
        }
    }
    basis
}

/// The free parameter being optimized, and how it renders to an image.
enum ImageParam {
    Pixel(Tensor<f32>),
    Fourier {
        coeffs: Tensor<f32>,
        basis: Tensor<f32>,
        shape: [usize; 4],
    },
}

impl ImageParam {
    fn init(
        parameterization: Parameterization,
        (c, h, w): (usize, usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        match parameterization {
            Parameterization::Pixel => {
                let data: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(0.45..0.55)).collect();
                Ok(ImageParam::Pixel(Tensor::param(data, &[1, c, h, w])?))
            }
            Parameterization::FourierDecorrelated => {
                let data: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(-0.05..0.05)).collect();
                Ok(ImageParam::Fourier {
                    coeffs: Tensor::param(data, &[c, h * w])?,
                    basis: Tensor::from_vec(fourier_basis(h, w), &[h * w, h * w])?,
                    shape: [1, c, h, w],
                })
            }
        }
    }

    /// Image `[1, C, H, W]` in `[0, 1]`, attached to the parameter.
    fn image(&self) -> Result<Tensor<f32>> {
        match self {
            ImageParam::Pixel(x) => Ok(x.clone()),
            ImageParam::Fourier { coeffs, basis, shape } => {
                Ok(coeffs.matmul(basis)?.sigmoid()?.reshape(shape)?)
            }
        }
    }

    fn tensor_mut(&mut self) -> &mut Tensor<f32> {
        match self {
            ImageParam::Pixel(x) => x,
            ImageParam::Fourier { coeffs, .. } => coeffs,
        }
    }

    /// Pixel mode projects back into `[0, 1]` after each step; the
    /// sigmoid keeps Fourier mode inside the range by construction.
    fn project(&mut self) -> Result<()> {
        if let ImageParam::Pixel(x) = self {
            let clamped: Vec<f32> = x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
            *x = Tensor::param(clamped, &[x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]])?;
        }
        Ok(())
    }
}

/// Optimize an input image toward the target direction.
pub fn optimize_input(
    extractor: &VizExtractor<'_>,
    input_shape: (usize, usize, usize),
    target: &VizTarget,
    config: &VizConfig,
) -> Result<VizResult> {
    config.validate()?;
    target.validate()?;
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::contract("input shape must be nonzero"));
    }

    let y = Tensor::from_vec(target.direction.clone(), &[target.direction.len()])?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "viz-init", 0));
    let mut transform_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "viz-transform", 0));
    let mut param = ImageParam::init(config.parameterization, input_shape, &mut init_rng)?;
    let mut optimizer = Optimizer::adam_default(config.learning_rate)?;
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let at = |e: Error| Error::numeric(format!("aborted at step {step}: {e}"));
        let image = param.image().map_err(at)?;
        let matrix = sample_transform(config, h, w, &mut transform_rng);
        let warped = warp_with_fill(&image, &matrix, (h, w), config.pad_fill).map_err(at)?;
        let activation = extract(extractor, &warped, &target.layer).map_err(at)?;
        let obj = objective(&activation, &y, config.objective_mode).map_err(at)?;
        let value = obj.item().map_err(Error::from).map_err(at)? as f64;
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "objective became non-finite at step {step}"
            )));
        }
        trace.push(value);

        let loss = match config.objective_mode {
            ObjectiveMode::PaperLiteral => obj,
            ObjectiveMode::CosinePower => obj.mul(&Tensor::scalar(-1.0)).map_err(Error::from).map_err(at)?,
        };
        let grads = backward(&loss).map_err(Error::from).map_err(at)?;
        let params = std::slice::from_mut(param.tensor_mut());
        optimizer.step(params, &grads).map_err(Error::from).map_err(at)?;
        param.project().map_err(at)?;
    }

    let final_image = param.image()?.detach().reshape(&[c, h, w])?;
    if final_image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("final image is not finite"));
    }
    Ok(VizResult {
        image: final_image,
        objective: trace,
        target: target.clone(),
        config: config.clone(),
        config_hash: config.hash(),
    })
}

/// Optimize every unmasked target, in cell order. Each cell derives its
/// own seed from its index, so results do not depend on batch order, and
/// one cell's failure leaves the others intact.
pub fn render_targets(
    extractor: &VizExtractor<'_>,
    input_shape: (usize, usize, usize),
    targets: &[Option<VizTarget>],
    config: &VizConfig,
) -> Vec<TargetOutcome> {
    let run = |(cell, target): (usize, &Option<VizTarget>)| -> TargetOutcome {
        let Some(target) = target else {
            return TargetOutcome::Blank;
        };
        let cell_config = VizConfig {
            seed: derive_seed(config.seed, "viz-target", cell as u64),
            ..config.clone()
        };
        match optimize_input(extractor, input_shape, target, &cell_config) {
            Ok(result) => TargetOutcome::Done(Box::new(result)),
            Err(e) => TargetOutcome::Failed {
                cell,
                message: e.to_string(),
            },
        }
    };
    match extractor {
        // A model extractor is immutable shared state; cells parallelize.
        VizExtractor::Model(_) => targets.par_iter().enumerate().map(run).collect(),
        VizExtractor::Identity => targets.iter().enumerate().map(run).collect(),
    }
}

/// Targets for every occupied cell of an atlas grid, `None` elsewhere.
pub fn atlas_targets(grid: &crate::atlas::AtlasGrid) -> Vec<Option<VizTarget>> {
    (0..grid.cells())
        .map(|cell| {
            grid.direction(cell).map(|dir| VizTarget {
                direction: dir.to_vec(),
                layer: grid.layer.clone(),
                kind: TargetKind::AtlasCell { cell },
            })
        })
        .collect()
}

/// One-hot targets from sampled neuron indices.
pub fn neuron_targets(layer: &str, picks: &[(usize, Vec<f32>)]) -> Vec<Option<VizTarget>> {
    picks
        .iter()
        .map(|(index, direction)| {
            Some(VizTarget {
                direction: direction.clone(),
                layer: layer.to_string(),
                kind: TargetKind::Neuron { index: *index },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec};
    use crate::tensor::gradcheck::gradcheck;

    fn neuron_target(n: usize, index: usize) -> VizTarget {
        let mut direction = vec![0.0f32; n];
        direction[index] = 1.0;
        VizTarget {
            direction,
            layer: "identity".into(),
            kind: TargetKind::Neuron { index },
        }
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn objective_parallel_vectors() {
        let h = Tensor::from_vec(vec![2.0f32, 0.0, 0.0], &[1, 3]).unwrap();
        let y = Tensor::from_vec(vec![2.0f32, 0.0, 0.0], &[3]).unwrap();
        // Angle clamps to 0.1: value = (h.y) * 1e-4.
        let paper = objective(&h, &y, ObjectiveMode::PaperLiteral).unwrap().item().unwrap();
        assert!((paper - 4.0e-4).abs() < 1e-6, "paper objective {paper}");
        let cospow = objective(&h, &y, ObjectiveMode::CosinePower).unwrap().item().unwrap();
        assert!((cospow - 4.0).abs() < 1e-3, "cosine-power objective {cospow}");
    }

    #[test]
    fn objective_orthogonal_is_zero() {
        let h = Tensor::from_vec(vec![1.0f32, 0.0], &[1, 2]).unwrap();
        let y = Tensor::from_vec(vec![0.0f32, 1.0], &[2]).unwrap();
        for mode in [ObjectiveMode::PaperLiteral, ObjectiveMode::CosinePower] {
            let v = objective(&h, &y, mode).unwrap().item().unwrap();
            assert!(v.abs() < 1e-7, "{mode:?} gave {v}");
        }
    }

    #[test]
    fn objective_unit_identical_cosine_power() {
        let h = Tensor::from_vec(vec![1.0f32, 0.0], &[1, 2]).unwrap();
        let y = Tensor::from_vec(vec![1.0f32, 0.0], &[2]).unwrap();
        let v = objective(&h, &y, ObjectiveMode::CosinePower).unwrap().item().unwrap();
        assert!((v - 1.0).abs() < 1e-4, "objective {v}");
    }

    #[test]
    fn objective_zero_activation_is_right_angle() {
        let h = Tensor::param(vec![0.0f32, 0.0], &[1, 2]).unwrap();
        let y = Tensor::from_vec(vec![1.0f32, 0.0], &[2]).unwrap();
        let obj = objective(&h, &y, ObjectiveMode::PaperLiteral).unwrap();
        assert_eq!(obj.item().unwrap(), 0.0);
        let grads = backward(&obj).unwrap();
        let g = grads.get(&h).unwrap();
        assert!(g.data().iter().all(|v| v.is_finite()));
        let err = objective(&h, &Tensor::zeros(&[2]), ObjectiveMode::PaperLiteral).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn objective_gradient_is_finite_near_alignment() {
        let h = Tensor::param(vec![1.0f32, 1e-4], &[1, 2]).unwrap();
        let y = Tensor::from_vec(vec![1.0f32, 0.0], &[2]).unwrap();
        for mode in [ObjectiveMode::PaperLiteral, ObjectiveMode::CosinePower] {
            let obj = objective(&h, &y, mode).unwrap();
            let grads = backward(&obj).unwrap();
            let g = grads.get(&h).unwrap();
            assert!(g.data().iter().all(|v| v.is_finite()), "{mode:?}: {:?}", g.data());
        }
    }

    #[test]
    fn zero_ranges_give_exact_identity_transform() {
        let config = VizConfig::default().without_transforms();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_transform(&config, 8, 8, &mut rng);
        assert_eq!(m, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn transform_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x76697a, "warp-fd", 0));
        let x0: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cot: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let config = VizConfig {
            jitter_px: 1.5,
            scale_range: (0.9, 1.1),
            rotation_range: 0.3,
            ..VizConfig::default()
        };
        let matrix = sample_transform(&config, 6, 6, &mut rng);
        let report = gradcheck(&x0, &[1, 1, 6, 6], 1e-4, |x| {
            let c = Tensor::from_vec(cot.clone(), &[1, 1, 6, 6])?;
            x.affine_transform_2d(&matrix, (6, 6))?.mul(&c)?.sum()
        })
        .unwrap();
        assert!(
            report.max_rel_error < 1e-3,
            "warp gradient error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn pad_fill_fills_out_of_frame_pixels() {
        let x = Tensor::from_vec(vec![0.5f32; 16], &[1, 1, 4, 4]).unwrap();
        // Shift sampling by +10: every output pixel reads out of frame.
        let m: AffineMatrix = [1.0, 0.0, 10.0, 0.0, 1.0, 0.0];
        let warped = warp_with_fill(&x, &m, (4, 4), 1.0).unwrap();
        assert!(warped.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let zero_fill = warp_with_fill(&x, &m, (4, 4), 0.0).unwrap();
        assert!(zero_fill.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_extractor_recovers_basis_image() {
        let target = neuron_target(36, 13);
        let config = VizConfig {
            steps: 400,
            seed: 5,
            ..VizConfig::default()
        }
        .without_transforms();
        let result =
            optimize_input(&VizExtractor::Identity, (1, 6, 6), &target, &config).unwrap();
        let cos = cosine(result.image.data(), &target.direction);
        assert!(cos >= 0.99, "cosine to basis image {cos}");
        assert_eq!(result.objective.len(), 400);
        // Alignment improved from initialization.
        assert!(result.objective[399] > result.objective[0]);
        let initial_angle = {
            let init = optimize_input(
                &VizExtractor::Identity,
                (1, 6, 6),
                &target,
                &VizConfig { steps: 0, seed: 5, ..config.clone() },
            )
            .unwrap();
            cosine(init.image.data(), &target.direction).acos()
        };
        assert!(cos.acos() < initial_angle, "angle did not shrink");
    }

    #[test]
    fn zero_steps_returns_untouched_init() {
        let target = neuron_target(16, 2);
        let config = VizConfig {
            steps: 0,
            seed: 3,
            ..VizConfig::default()
        };
        let a = optimize_input(&VizExtractor::Identity, (1, 4, 4), &target, &config).unwrap();
        assert!(a.objective.is_empty());
        assert!(a.image.data().iter().all(|&v| (0.45..0.55).contains(&v)));
        let b = optimize_input(&VizExtractor::Identity, (1, 4, 4), &target, &config).unwrap();
        assert_eq!(a.image.data(), b.image.data());
    }

    #[test]
    fn same_seed_same_bytes_through_a_model() {
        let spec = ModelSpec::mlp(16, 8, 1, 4);
        let model = build_model::<f32>(&spec, 2).unwrap();
        let target = VizTarget {
            direction: vec![1.0, 0.0, -0.5, 0.0, 0.0, 0.25, 0.0, 0.0],
            layer: "fc1".into(),
            kind: TargetKind::AtlasCell { cell: 0 },
        };
        let config = VizConfig {
            steps: 25,
            seed: 11,
            ..VizConfig::default()
        };
        let ex = VizExtractor::Model(&model);
        let a = optimize_input(&ex, (1, 4, 4), &target, &config).unwrap();
        let b = optimize_input(&ex, (1, 4, 4), &target, &config).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.config_hash, b.config_hash);
        // The trace really did record 25 live steps.
        assert_eq!(a.objective.len(), 25);
    }

    #[test]
    fn doubling_the_target_doubles_the_trace() {
        let base = neuron_target(16, 5);
        let mut doubled = base.clone();
        for v in &mut doubled.direction {
            *v *= 2.0;
        }
        let config = VizConfig {
            steps: 60,
            seed: 7,
            ..VizConfig::default()
        }
        .without_transforms();
        let a = optimize_input(&VizExtractor::Identity, (1, 4, 4), &base, &config).unwrap();
        let b = optimize_input(&VizExtractor::Identity, (1, 4, 4), &doubled, &config).unwrap();
        for (x, y) in a.objective.iter().zip(&b.objective) {
            assert!((y / x - 2.0).abs() < 1e-3, "ratio {} at {} vs {}", y / x, x, y);
        }
    }

    #[test]
    fn divergence_reports_step_index() {
        let spec = ModelSpec::mlp(16, 8, 1, 4);
        let mut model = build_model::<f32>(&spec, 2).unwrap();
        // Overflow the first matmul in f32.
        let huge = Tensor::param(vec![1e30f32; 16 * 8], &[16, 8]).unwrap();
        model.params_mut()[0] = huge;
        let target = VizTarget {
            direction: vec![1.0; 8],
            layer: "fc1".into(),
            kind: TargetKind::Neuron { index: 0 },
        };
        let config = VizConfig {
            steps: 4,
            ..VizConfig::default()
        };
        let err = optimize_input(&VizExtractor::Model(&model), (1, 4, 4), &target, &config)
            .unwrap_err()
            .to_string();
        assert!(err.contains("step 0"), "missing step index: {err}");
    }

    #[test]
    fn conv_tap_target_optimizes() {
        let spec = ModelSpec::cnn(1, 8, 8, 16, 4).unwrap();
        let model = build_model::<f32>(&spec, 9).unwrap();
        let target = VizTarget {
            direction: vec![1.0, 0.0, 0.0, -1.0],
            layer: "conv1b".into(),
            kind: TargetKind::AtlasCell { cell: 3 },
        };
        let config = VizConfig {
            steps: 10,
            seed: 1,
            ..VizConfig::default()
        };
        let r = optimize_input(&VizExtractor::Model(&model), (1, 8, 8), &target, &config).unwrap();
        assert_eq!(r.image.shape(), &[1, 8, 8]);
        assert!(r.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fourier_parameterization_stays_in_range_and_improves() {
        let target = neuron_target(64, 20);
        let config = VizConfig {
            steps: 150,
            parameterization: Parameterization::FourierDecorrelated,
            seed: 13,
            ..VizConfig::default()
        }
        .without_transforms();
        let a = optimize_input(&VizExtractor::Identity, (1, 8, 8), &target, &config).unwrap();
        assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(
            a.objective[149] > a.objective[0],
            "no improvement: {} -> {}",
            a.objective[0],
            a.objective[149]
        );
        let b = optimize_input(&VizExtractor::Identity, (1, 8, 8), &target, &config).unwrap();
        assert_eq!(a.image.data(), b.image.data());
    }

    #[test]
    fn render_skips_blanks_and_survives_failures() {
        let good_a = neuron_target(16, 1);
        let good_b = neuron_target(16, 8);
        let bad = VizTarget {
            direction: vec![0.0; 16],
            layer: "identity".into(),
            kind: TargetKind::AtlasCell { cell: 2 },
        };
        let targets = vec![Some(good_a.clone()), None, Some(bad), Some(good_b.clone())];
        let config = VizConfig {
            steps: 5,
            ..VizConfig::default()
        };
        let out = render_targets(&VizExtractor::Identity, (1, 4, 4), &targets, &config);
        assert_eq!(out.len(), 4);
        assert!(matches!(out[0], TargetOutcome::Done(_)));
        assert!(matches!(out[1], TargetOutcome::Blank));
        match &out[2] {
            TargetOutcome::Failed { cell, message } => {
                assert_eq!(*cell, 2);
                assert!(message.contains("nonzero"), "message: {message}");
            }
            other => panic!("expected failure, got {other:?}"),
        }
        assert!(matches!(out[3], TargetOutcome::Done(_)));

        // Per-cell seeds: the same target in the same slot renders the
        // same image regardless of its neighbors.
        let solo = render_targets(
            &VizExtractor::Identity,
            (1, 4, 4),
            &[None, None, None, Some(good_b)],
            &config,
        );
        let (TargetOutcome::Done(full), TargetOutcome::Done(alone)) = (&out[3], &solo[3]) else {
            panic!("expected two rendered cells");
        };
        assert_eq!(full.image.data(), alone.image.data());
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let bad_scale = VizConfig {
            scale_range: (0.5, 2.5),
            ..VizConfig::default()
        };
        assert!(bad_scale.validate().is_err());
        let bad_rot = VizConfig {
            rotation_range: 4.0,
            ..VizConfig::default()
        };
        assert!(bad_rot.validate().is_err());
        let bad_lr = VizConfig {
            learning_rate: 0.0,
            ..VizConfig::default()
        };
        assert!(bad_lr.validate().is_err());
        let bad_fill = VizConfig {
            pad_fill: 1.5,
            ..VizConfig::default()
        };
        assert!(bad_fill.validate().is_err());
    }
}

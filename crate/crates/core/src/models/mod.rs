//! Model architectures, initialization, and constant-parameter width plans.
//!
//! Two families exist: plain MLPs with equal hidden widths, and a fixed
//! CNN of two conv blocks (two 3x3 conv layers then a 2x2 maxpool each)
//! followed by two fully-connected layers. Widths scale; structure never
//! does. Initialization is He-style: hidden weights N(0, 2/n_in), final
//! weights N(0, 1/n_in), biases zero.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

/// Tap name of the activation the atlas pipeline reads by default.
pub const PENULTIMATE_TAP: &str = "fc-penultimate";

/// Architecture description. Widths and class counts vary; layer structure
/// is fixed per family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Mlp {
        /// Flattened input dimension.
        input_dim: usize,
        /// One entry per hidden layer; the last is the penultimate width.
        hidden: Vec<usize>,
        classes: usize,
    },
    Cnn {
        in_channels: usize,
        height: usize,
        width: usize,
        /// Filter count for every conv layer in both blocks.
        filters: usize,
        /// Width of the first fully-connected layer.
        penultimate: usize,
        classes: usize,
    },
}

impl ModelSpec {
    /// MLP with `depth` hidden layers of equal `width`.
    pub fn mlp(input_dim: usize, width: usize, depth: usize, classes: usize) -> Self {
        ModelSpec::Mlp {
            input_dim,
            hidden: vec![width; depth],
            classes,
        }
    }

    /// CNN with the filter plan derived from the penultimate width.
    pub fn cnn(
        in_channels: usize,
        height: usize,
        width: usize,
        penultimate: usize,
        classes: usize,
    ) -> Result<Self> {
        let filters = scale_cnn_filters(penultimate)?;
        Ok(ModelSpec::Cnn {
            in_channels,
            height,
            width,
            filters,
            penultimate,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Mlp { classes, .. } | ModelSpec::Cnn { classes, .. } => *classes,
        }
    }

    /// Width of the activation vector at the penultimate tap.
    pub fn penultimate_width(&self) -> usize {
        match self {
            ModelSpec::Mlp { hidden, .. } => *hidden.last().expect("validated: depth >= 1"),
            ModelSpec::Cnn { penultimate, .. } => *penultimate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                if *input_dim == 0 || *classes == 0 {
                    return Err(Error::contract("mlp input and class dims must be positive"));
                }
                if hidden.is_empty() {
                    return Err(Error::contract("mlp needs at least one hidden layer"));
                }
                if hidden.iter().any(|&w| w == 0) {
                    return Err(Error::contract("mlp hidden widths must be positive"));
                }
            }
            ModelSpec::Cnn {
                in_channels,
                height,
                width,
                filters,
                penultimate,
                classes,
            } => {
                if *in_channels == 0 || *classes == 0 || *filters == 0 || *penultimate == 0 {
                    return Err(Error::contract("cnn dims must be positive"));
                }
                if *height < 4 || *width < 4 {
                    return Err(Error::contract(format!(
                        "cnn input must be at least 4x4 to survive two maxpools, got {height}x{width}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerPlan> {
        match self {
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let mut layers = Vec::with_capacity(hidden.len() + 1);
                let mut prev = *input_dim;
                for &w in hidden {
                    layers.push(LayerPlan::dense(prev, w, false));
                    prev = w;
                }
                layers.push(LayerPlan::dense(prev, *classes, true));
                layers
            }
            ModelSpec::Cnn {
                in_channels,
                height,
                width,
                filters,
                penultimate,
                classes,
            } => {
                let f = *filters;
                let flat = f * (height / 4) * (width / 4);
                vec![
                    LayerPlan::conv(*in_channels, f),
                    LayerPlan::conv(f, f),
                    LayerPlan::conv(f, f),
                    LayerPlan::conv(f, f),
                    LayerPlan::dense(flat, *penultimate, false),
                    LayerPlan::dense(*penultimate, *classes, true),
                ]
            }
        }
    }

    /// Shapes of the parameter tensors in declaration order (weight, bias
    /// per layer).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for layer in self.layers() {
            shapes.push(layer.weight_shape());
            shapes.push(layer.bias_shape());
        }
        shapes
    }
}

/// One parameterized layer: a conv or dense transform plus bias.
struct LayerPlan {
    kind: LayerKind,
    fan_in: usize,
    fan_out: usize,
    is_final: bool,
}

enum LayerKind {
    Dense,
    /// 3x3 same-padding convolution.
    Conv { in_channels: usize },
}

impl LayerPlan {
    fn dense(fan_in: usize, fan_out: usize, is_final: bool) -> Self {
        LayerPlan {
            kind: LayerKind::Dense,
            fan_in,
            fan_out,
            is_final,
        }
    }

    fn conv(in_channels: usize, filters: usize) -> Self {
        LayerPlan {
            kind: LayerKind::Conv { in_channels },
            fan_in: 9 * in_channels,
            fan_out: filters,
            is_final: false,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_in, self.fan_out],
            LayerKind::Conv { in_channels } => vec![self.fan_out, in_channels, 3, 3],
        }
    }

    fn bias_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_out],
            // Shaped to broadcast over [N, C, H, W].
            LayerKind::Conv { .. } => vec![self.fan_out, 1, 1],
        }
    }

    fn weight_std(&self) -> f64 {
        let scale = if self.is_final { 1.0 } else { 2.0 };
        (scale / self.fan_in as f64).sqrt()
    }
}

/// Exact number of scalar parameters (weights plus biases) of a model.
pub fn param_count(spec: &ModelSpec) -> usize {
    spec.param_shapes()
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

/// Constant-parameter width plan for an MLP scan over depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthPlan {
    pub depth: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub max_width: usize,
    /// Planned equal width of every hidden layer.
    pub width: usize,
}

/// Width that keeps an `depth`-hidden-layer MLP's parameter count at the
/// level of a single hidden layer of `max_width`.
///
/// Depth 1 returns `max_width`. Deeper plans solve
/// `(L-1)n^2 + (L + n0 + nk)n - n_max(n0 + nk + 1) = 0` for `n` and floor
/// the positive root.
pub fn plan_width(depth: usize, input_dim: usize, output_dim: usize, max_width: usize) -> Result<WidthPlan> {
    if depth == 0 || input_dim == 0 || output_dim == 0 || max_width == 0 {
        return Err(Error::contract("plan_width arguments must be positive"));
    }
    let width = if depth == 1 {
        max_width
    } else {
        let l = depth as f64;
        let n0 = input_dim as f64;
        let nk = output_dim as f64;
        let nmax = max_width as f64;
        let b = l + n0 + nk;
        let disc = b * b + 4.0 * (l - 1.0) * (n0 + nk + 1.0) * nmax;
        let root = (-b + disc.sqrt()) / (2.0 * (l - 1.0));
        if !root.is_finite() || root < 1.0 {
            return Err(Error::numeric(format!(
                "width plan degenerate for depth {depth}: root {root}"
            )));
        }
        root.floor() as usize
    };
    Ok(WidthPlan {
        depth,
        input_dim,
        output_dim,
        max_width,
        width,
    })
}

impl WidthPlan {
    pub fn spec(&self, classes: usize) -> ModelSpec {
        ModelSpec::mlp(self.input_dim, self.width, self.depth, classes)
    }
}

/// Conv filter count for both blocks given the penultimate width: `n / 4`,
/// anchored so width 512 gives 128 filters.
pub fn scale_cnn_filters(penultimate: usize) -> Result<usize> {
    if penultimate == 0 || penultimate % 4 != 0 {
        let nearest = ((penultimate + 2) / 4).max(1) * 4;
        return Err(Error::contract(format!(
            "penultimate width must be a positive multiple of 4, got {penultimate} (nearest valid: {nearest})"
        )));
    }
    Ok(penultimate / 4)
}

/// A model's parameters plus the spec that shapes them. Parameter tensors
/// are stored in declaration order as weight/bias pairs.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Element> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
}

/// Activations recorded during one forward pass, addressable by tap name.
pub struct ForwardPass<T: Element> {
    taps: Vec<(String, Tensor<T>)>,
    penultimate_idx: usize,
}

impl<T: Element> ForwardPass<T> {
    /// Activation at a named layer; `"fc-penultimate"` always resolves.
    pub fn tap(&self, name: &str) -> Option<&Tensor<T>> {
        if name == PENULTIMATE_TAP {
            return Some(&self.taps[self.penultimate_idx].1);
        }
        self.taps.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.taps.iter().map(|(n, _)| n.as_str())
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.taps.last().expect("forward always records logits").1
    }

    pub fn penultimate(&self) -> &Tensor<T> {
        &self.taps[self.penultimate_idx].1
    }
}

/// Sample fresh parameters for `spec`. Identical seeds give identical
/// parameters.
pub fn build_model<T: Element>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for layer in spec.layers() {
        let shape = layer.weight_shape();
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, layer.weight_std()).expect("std is finite and positive");
        let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
        params.push(Tensor::param(data, &shape)?);
        params.push(Tensor::param(
            vec![T::zero(); layer.bias_shape().iter().product()],
            &layer.bias_shape(),
        )?);
    }
    Ok(ModelParams {
        spec: spec.clone(),
        params,
    })
}

impl<T: Element> ModelParams<T> {
    /// Reassemble from raw tensors, checking shapes against the spec.
    pub fn from_tensors(spec: ModelSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if params.len() != expected.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (tensor, shape) in params.iter().zip(&expected) {
            if tensor.shape() != shape.as_slice() {
                return Err(Error::contract(format!(
                    "parameter shape {:?} does not match spec shape {:?}",
                    tensor.shape(),
                    shape
                )));
            }
        }
        Ok(ModelParams { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable access for the optimizer; order and shapes must not change.
    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Copy whose parameters neither require gradients nor build graphs.
    /// Used for evaluation and as a frozen feature extractor.
    pub fn frozen(&self) -> Self {
        ModelParams {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::detach).collect(),
        }
    }

    /// Digest over the spec and the exact parameter bytes; two models agree
    /// iff their architecture and weights agree.
    pub fn content_hash(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.spec).expect("spec serializes");
        for p in &self.params {
            for &v in p.data() {
                bytes.extend_from_slice(&Element::to_f64(v).to_le_bytes());
            }
        }
        crate::util::sha256_hex(&bytes)
    }

    /// Run the network, recording every post-nonlinearity activation.
    ///
    /// MLP input may be `[N, D]` or `[N, C, H, W]` (flattened on entry);
    /// CNN input must be `[N, C, H, W]` matching the spec.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ForwardPass<T>> {
        match &self.spec {
            ModelSpec::Mlp {
                input_dim, hidden, ..
            } => {
                let batch = x.shape()[0];
                let flat_dim: usize = x.shape()[1..].iter().product();
                if flat_dim != *input_dim {
                    return Err(Error::contract(format!(
                        "input of shape {:?} does not flatten to {input_dim}",
                        x.shape()
                    )));
                }
                let mut h = x.reshape(&[batch, flat_dim])?;
                let mut taps = Vec::with_capacity(hidden.len() + 1);
                for i in 0..hidden.len() {
                    let w = &self.params[2 * i];
                    let b = &self.params[2 * i + 1];
                    h = h.matmul(w)?.add(b)?.relu()?;
                    taps.push((format!("fc{}", i + 1), h.clone()));
                }
                let w = &self.params[2 * hidden.len()];
                let b = &self.params[2 * hidden.len() + 1];
                let logits = h.matmul(w)?.add(b)?;
                taps.push(("logits".into(), logits));
                Ok(ForwardPass {
                    penultimate_idx: hidden.len() - 1,
                    taps,
                })
            }
            ModelSpec::Cnn {
                in_channels,
                height,
                width,
                penultimate: _,
                ..
            } => {
                if x.shape().len() != 4
                    || x.shape()[1] != *in_channels
                    || x.shape()[2] != *height
                    || x.shape()[3] != *width
                {
                    return Err(Error::contract(format!(
                        "cnn expects [N, {in_channels}, {height}, {width}] input, got {:?}",
                        x.shape()
                    )));
                }
                let batch = x.shape()[0];
                let mut taps = Vec::with_capacity(8);
                let conv = |h: &Tensor<T>, i: usize| -> Result<Tensor<T>> {
                    let w = &self.params[2 * i];
                    let b = &self.params[2 * i + 1];
                    Ok(h.conv2d(w)?.add(b)?.relu()?)
                };
                let mut h = conv(x, 0)?;
                taps.push(("conv1a".to_string(), h.clone()));
                h = conv(&h, 1)?;
                taps.push(("conv1b".to_string(), h.clone()));
                h = h.maxpool2d()?;
                taps.push(("pool1".to_string(), h.clone()));
                h = conv(&h, 2)?;
                taps.push(("conv2a".to_string(), h.clone()));
                h = conv(&h, 3)?;
                taps.push(("conv2b".to_string(), h.clone()));
                h = h.maxpool2d()?;
                taps.push(("pool2".to_string(), h.clone()));
                let flat: usize = h.shape()[1..].iter().product();
                h = h.reshape(&[batch, flat])?;
                let w = &self.params[8];
                let b = &self.params[9];
                h = h.matmul(w)?.add(b)?.relu()?;
                taps.push((PENULTIMATE_TAP.to_string(), h.clone()));
                let w = &self.params[10];
                let b = &self.params[11];
                let logits = h.matmul(w)?.add(b)?;
                taps.push(("logits".into(), logits));
                Ok(ForwardPass {
                    penultimate_idx: 6,
                    taps,
                })
            }
        }
    }
}

//! `viz-neurons`: optimize images for a sample of single neurons.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use log::warn;
use serde::{Deserialize, Serialize};

use atlasbench_core::atlas::neuron_directions;
use atlasbench_core::models::{load_checkpoint, ModelSpec, PENULTIMATE_TAP};
use atlasbench_core::render::{save_image_png, TileMosaic};
use atlasbench_core::tensor::Tensor;
use atlasbench_core::viz::{
    neuron_targets, render_targets, TargetOutcome, VizConfig, VizExtractor,
};

use super::atlas::{ObjectiveArg, ParameterizationArg};
use crate::common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct VizNeuronsConfig {
    pub checkpoint: String,
    /// Tap holding the neurons; `fc-penultimate` exists on every model.
    pub layer: String,
    /// How many neurons to sample from the layer.
    pub count: usize,
    /// Input height for MLP checkpoints; 0 infers a square image.
    pub height: usize,
    /// Input width for MLP checkpoints; 0 infers a square image.
    pub width: usize,
    pub tile_pad: usize,
    pub steps: usize,
    pub viz_learning_rate: f64,
    pub jitter: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub rotation_deg: f64,
    pub pad_fill: f32,
    pub objective: ObjectiveArg,
    pub parameterization: ParameterizationArg,
    pub seed: u64,
}

impl Default for VizNeuronsConfig {
    fn default() -> Self {
        let viz = VizConfig::default();
        VizNeuronsConfig {
            checkpoint: String::new(),
            layer: PENULTIMATE_TAP.into(),
            count: 10,
            height: 0,
            width: 0,
            tile_pad: 2,
            steps: viz.steps,
            viz_learning_rate: viz.learning_rate,
            jitter: viz.jitter_px,
            scale_lo: viz.scale_range.0,
            scale_hi: viz.scale_range.1,
            rotation_deg: viz.rotation_range.to_degrees(),
            pad_fill: viz.pad_fill,
            objective: ObjectiveArg::CosinePower,
            parameterization: ParameterizationArg::Pixel,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct VizNeuronsArgs {
    /// Checkpoint to probe
    #[arg(long)]
    checkpoint: Option<String>,

    /// Tap holding the neurons
    #[arg(long)]
    layer: Option<String>,

    /// How many neurons to sample
    #[arg(long)]
    count: Option<usize>,

    /// Input height for MLP checkpoints (0 infers a square)
    #[arg(long)]
    height: Option<usize>,

    /// Input width for MLP checkpoints (0 infers a square)
    #[arg(long)]
    width: Option<usize>,

    /// Padding around each mosaic tile in pixels
    #[arg(long)]
    tile_pad: Option<usize>,

    /// Optimization steps per neuron
    #[arg(long)]
    steps: Option<usize>,

    /// Optimization learning rate
    #[arg(long)]
    viz_learning_rate: Option<f64>,

    /// Translation jitter bound in pixels
    #[arg(long)]
    jitter: Option<f64>,

    /// Lower rescale bound
    #[arg(long)]
    scale_lo: Option<f64>,

    /// Upper rescale bound
    #[arg(long)]
    scale_hi: Option<f64>,

    /// Rotation bound in degrees
    #[arg(long)]
    rotation_deg: Option<f64>,

    /// Out-of-frame fill after transforms
    #[arg(long)]
    pad_fill: Option<f32>,

    /// Alignment objective (cosine-power or paper-literal)
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,

    /// Image parameterization (pixel or fourier-decorrelated)
    #[arg(long, value_enum)]
    parameterization: Option<ParameterizationArg>,

    /// Seed for neuron sampling and optimization init
    #[arg(long)]
    seed: Option<u64>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Output directory for the neuron images
    #[arg(long, required = true)]
    out: PathBuf,
}

/// Input image shape for a checkpoint: CNN dims come from the spec; MLP
/// inputs are re-folded to `1 x H x W`, square unless overridden.
fn input_shape(spec: &ModelSpec, height: usize, width: usize) -> Result<(usize, usize, usize)> {
    match spec {
        ModelSpec::Cnn {
            in_channels,
            height,
            width,
            ..
        } => Ok((*in_channels, *height, *width)),
        ModelSpec::Mlp { input_dim, .. } => {
            if height > 0 && width > 0 {
                if height * width != *input_dim {
                    bail!("{height}x{width} does not flatten to the model's input dimension {input_dim}");
                }
                return Ok((1, height, width));
            }
            let side = (*input_dim as f64).sqrt().round() as usize;
            if side * side != *input_dim {
                bail!(
                    "input dimension {input_dim} is not square; pass --height and --width explicitly"
                );
            }
            Ok((1, side, side))
        }
    }
}

pub fn run(args: VizNeuronsArgs) -> Result<()> {
    let mut config: VizNeuronsConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args);
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.checkpoint.is_empty() {
        bail!("no checkpoint given (--checkpoint flag or `checkpoint` config key)");
    }

    let ckpt_path = common::resolve_data_path(&config.checkpoint);
    let (model, _) = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let (c, h, w) = input_shape(model.spec(), config.height, config.width)?;

    // One probe forward tells us the layer width; conv taps report their
    // channel count in the same slot.
    let probe = model.forward(&Tensor::zeros(&[1, c, h, w]))?;
    let tap = probe.tap(&config.layer).with_context(|| {
        let names: Vec<&str> = probe.tap_names().collect();
        format!("no tap named {:?}; taps: {}", config.layer, names.join(", "))
    })?;
    let layer_width = tap.shape()[1];

    let picks = neuron_directions(layer_width, config.count, config.seed)?;
    let targets = neuron_targets(&config.layer, &picks);
    let viz_config = VizConfig {
        steps: config.steps,
        learning_rate: config.viz_learning_rate,
        jitter_px: config.jitter,
        scale_range: (config.scale_lo, config.scale_hi),
        rotation_range: config.rotation_deg.to_radians(),
        pad_fill: config.pad_fill,
        objective_mode: config.objective.into(),
        parameterization: config.parameterization.into(),
        seed: config.seed,
    };
    let outcomes = render_targets(&VizExtractor::Model(&model), (c, h, w), &targets, &viz_config);

    std::fs::create_dir_all(&args.out)?;
    let grid = (targets.len() as f64).sqrt().ceil().max(1.0) as usize;
    let mut mosaic = TileMosaic::new(grid, h.max(w), config.tile_pad, c)?;
    let mut rendered = 0usize;
    for (slot, outcome) in outcomes.iter().enumerate() {
        match outcome {
            TargetOutcome::Blank => {}
            TargetOutcome::Done(result) => {
                let neuron = picks[slot].0;
                save_image_png(
                    &args.out.join(format!("neuron-{neuron:04}.png")),
                    result.image.data(),
                    (c, h, w),
                )?;
                if h == w {
                    mosaic.set_tile(slot, &result.image)?;
                }
                rendered += 1;
            }
            TargetOutcome::Failed { cell, message } => {
                warn!("neuron slot {cell} failed: {message}");
            }
        }
    }
    if h == w {
        mosaic.render().save_png(&args.out.join("mosaic.png"))?;
    }
    let picked_indices: Vec<usize> = picks.iter().map(|(i, _)| *i).collect();
    std::fs::write(
        args.out.join("neurons.json"),
        serde_json::to_vec_pretty(&picked_indices)?,
    )?;
    common::write_manifest(&args.out, &hash)?;

    println!(
        "{rendered} of {} neurons rendered from {} (width {layer_width}) into {}",
        picks.len(),
        config.layer,
        args.out.display()
    );
    Ok(())
}

fn merge(config: &mut VizNeuronsConfig, args: &VizNeuronsArgs) {
    if let Some(v) = &args.checkpoint {
        config.checkpoint = v.clone();
    }
    if let Some(v) = &args.layer {
        config.layer = v.clone();
    }
    if let Some(v) = args.count {
        config.count = v;
    }
    if let Some(v) = args.height {
        config.height = v;
    }
    if let Some(v) = args.width {
        config.width = v;
    }
    if let Some(v) = args.tile_pad {
        config.tile_pad = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.viz_learning_rate {
        config.viz_learning_rate = v;
    }
    if let Some(v) = args.jitter {
        config.jitter = v;
    }
    if let Some(v) = args.scale_lo {
        config.scale_lo = v;
    }
    if let Some(v) = args.scale_hi {
        config.scale_hi = v;
    }
    if let Some(v) = args.rotation_deg {
        config.rotation_deg = v;
    }
    if let Some(v) = args.pad_fill {
        config.pad_fill = v;
    }
    if let Some(v) = args.objective {
        config.objective = v;
    }
    if let Some(v) = args.parameterization {
        config.parameterization = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
}

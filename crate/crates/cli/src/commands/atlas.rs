//! `atlas`: the end-to-end atlas pipeline for one checkpoint and layer.
//!
//! Collect activations, embed a seeded sample in 2-D, bin to a grid,
//! average and whiten per cell, optimize an image per occupied cell, and
//! lay the results out as a mosaic.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use log::warn;
use serde::{Deserialize, Serialize};

use atlasbench_core::atlas::{
    average_and_whiten, bin_to_grid, collect_activations, save_atlas, SpatialMode, TapSource,
    DEFAULT_MIN_OCCUPANCY,
};
use atlasbench_core::data::Split;
use atlasbench_core::embedding::{embed, save_embedding_csv, EmbeddingConfig};
use atlasbench_core::models::load_checkpoint;
use atlasbench_core::render::{render_embedding, save_image_png, TileMosaic};
use atlasbench_core::util::{derive_seed, sample_indices};
use atlasbench_core::viz::{
    atlas_targets, render_targets, ObjectiveMode, Parameterization, TargetOutcome, VizConfig,
    VizExtractor,
};

use crate::common;

/// Which spatial position a conv tap keeps per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialArg {
    /// One random position per image (seeded).
    Random,
    /// The center position.
    Center,
}

impl From<SpatialArg> for SpatialMode {
    fn from(arg: SpatialArg) -> Self {
        match arg {
            SpatialArg::Random => SpatialMode::Random,
            SpatialArg::Center => SpatialMode::Center,
        }
    }
}

/// Direction-alignment objective for the input optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArg {
    /// Maximize projection times a floored power of the cosine.
    CosinePower,
    /// Minimize projection times the fourth power of the floored angle.
    PaperLiteral,
}

impl From<ObjectiveArg> for ObjectiveMode {
    fn from(arg: ObjectiveArg) -> Self {
        match arg {
            ObjectiveArg::CosinePower => ObjectiveMode::CosinePower,
            ObjectiveArg::PaperLiteral => ObjectiveMode::PaperLiteral,
        }
    }
}

/// Image parameterization for the input optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterizationArg {
    /// Raw pixels, clamped to [0, 1] after each step.
    Pixel,
    /// Frequency-scaled cosine basis behind a sigmoid.
    FourierDecorrelated,
}

impl From<ParameterizationArg> for Parameterization {
    fn from(arg: ParameterizationArg) -> Self {
        match arg {
            ParameterizationArg::Pixel => Parameterization::Pixel,
            ParameterizationArg::FourierDecorrelated => Parameterization::FourierDecorrelated,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct AtlasConfig {
    pub checkpoint: String,
    pub dataset: String,
    /// Split the activations come from.
    pub test_split: bool,
    /// Tap to read; `fc-penultimate` exists on every model.
    pub layer: String,
    pub grid: usize,
    /// Cells with fewer hits than this render blank.
    pub min_occupancy: usize,
    /// At most this many activation vectors are embedded (0 = all).
    pub sample: usize,
    pub spatial: SpatialArg,
    /// Padding around each mosaic tile, in pixels.
    pub tile_pad: usize,
    /// Embedding histogram resolution.
    pub bins: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub layout_epochs: usize,
    /// Optimization steps per occupied cell.
    pub steps: usize,
    pub viz_learning_rate: f64,
    /// Translation jitter bound in pixels.
    pub jitter: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Rotation bound in degrees.
    pub rotation_deg: f64,
    /// Out-of-frame fill after transforms (0 for dark data, 1 for light).
    pub pad_fill: f32,
    pub objective: ObjectiveArg,
    pub parameterization: ParameterizationArg,
    pub seed: u64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        let viz = VizConfig::default();
        AtlasConfig {
            checkpoint: String::new(),
            dataset: String::new(),
            test_split: false,
            layer: "fc-penultimate".into(),
            grid: 15,
            min_occupancy: DEFAULT_MIN_OCCUPANCY,
            sample: 8000,
            spatial: SpatialArg::Random,
            tile_pad: 2,
            bins: 100,
            n_neighbors: 15,
            min_dist: 0.1,
            layout_epochs: 500,
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

impl AtlasConfig {
    pub fn viz_config(&self) -> VizConfig {
        VizConfig {
            steps: self.steps,
            learning_rate: self.viz_learning_rate,
            jitter_px: self.jitter,
            scale_range: (self.scale_lo, self.scale_hi),
            rotation_range: self.rotation_deg.to_radians(),
            pad_fill: self.pad_fill,
            objective_mode: self.objective.into(),
            parameterization: self.parameterization.into(),
            seed: self.seed,
        }
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            layout_epochs: self.layout_epochs,
            seed: derive_seed(self.seed, "embed", 0),
            ..EmbeddingConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AtlasArgs {
    /// Checkpoint whose activations the atlas maps
    #[arg(long)]
    checkpoint: Option<String>,

    /// Dataset name under the data root, or a path to an .atld pair directory
    #[arg(long)]
    dataset: Option<String>,

    /// Use the test split instead of the train split (true/false)
    #[arg(long, value_name = "BOOL")]
    test_split: Option<bool>,

    /// Tap to read activations from
    #[arg(long)]
    layer: Option<String>,

    /// Atlas grid side length
    #[arg(long)]
    grid: Option<usize>,

    /// Minimum hits for a cell to render
    #[arg(long)]
    min_occupancy: Option<usize>,

    /// Cap on embedded activation vectors (0 = all)
    #[arg(long)]
    sample: Option<usize>,

    /// Conv-tap position rule (random or center)
    #[arg(long, value_enum)]
    spatial: Option<SpatialArg>,

    /// Padding around each mosaic tile in pixels
    #[arg(long)]
    tile_pad: Option<usize>,

    /// Embedding histogram resolution
    #[arg(long)]
    bins: Option<usize>,

    /// Embedding neighborhood size
    #[arg(long)]
    n_neighbors: Option<usize>,

    /// Embedding minimum low-dimensional distance
    #[arg(long)]
    min_dist: Option<f64>,

    /// Embedding layout epochs
    #[arg(long)]
    layout_epochs: Option<usize>,

    /// Optimization steps per occupied cell
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

    /// Seed for sampling, embedding, and optimization init
    #[arg(long)]
    seed: Option<u64>,

    /// Config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit
    #[arg(long)]
    dump_config: bool,

    /// Output directory for the atlas artifacts
    #[arg(long, required = true)]
    out: PathBuf,
}

pub fn run(args: AtlasArgs) -> Result<()> {
    let mut config: AtlasConfig = common::base_config(args.config.as_deref())?;
    merge(&mut config, &args);
    let Some(hash) = common::hash_or_dump(&config, args.dump_config)? else {
        return Ok(());
    };
    if config.checkpoint.is_empty() {
        bail!("no checkpoint given (--checkpoint flag or `checkpoint` config key)");
    }
    if config.dataset.is_empty() {
        bail!("no dataset given (--dataset flag or `dataset` config key)");
    }

    let ckpt_path = common::resolve_data_path(&config.checkpoint);
    let (model, header) = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let split = if config.test_split { Split::Test } else { Split::Train };
    let data = common::load_split(&config.dataset, split)?;
    let (c, h, w) = data.dims();
    if h != w {
        bail!("mosaic tiles must be square; dataset images are {h}x{w}");
    }

    let acts = collect_activations(
        TapSource::Model(&model, &config.layer),
        &data,
        config.spatial.into(),
        config.seed,
    )?;
    let acts = if config.sample > 0 && acts.count > config.sample {
        let picked = sample_indices(acts.count, config.sample, derive_seed(config.seed, "atlas-sample", 0));
        acts.subset(&picked)?
    } else {
        acts
    };
    println!("collected {} activations of width {} from {}", acts.count, acts.width, config.layer);

    let embedding = embed(&acts.vectors_f64(), acts.width, &config.embedding_config())?;
    std::fs::create_dir_all(&args.out)?;
    save_embedding_csv(&embedding, &acts.labels, &args.out.join("embedding.csv"))?;
    render_embedding(&embedding, &acts.labels, config.bins)?
        .save_png(&args.out.join("embedding.png"))?;

    let assignments = bin_to_grid(&embedding, config.grid)?;
    let (grid, whitening) = average_and_whiten(&acts, &assignments, config.grid, config.min_occupancy)?;
    save_atlas(&args.out.join("atlas.atlg"), &grid)?;
    std::fs::write(
        args.out.join("whitening.json"),
        serde_json::to_vec_pretty(&whitening)?,
    )?;
    println!(
        "grid {0}x{0}: {1} of {2} cells occupied",
        config.grid,
        grid.occupied_cells(),
        grid.cells()
    );

    let targets = atlas_targets(&grid);
    let outcomes = render_targets(&VizExtractor::Model(&model), (c, h, w), &targets, &config.viz_config());

    let cells_dir = args.out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let mut mosaic = TileMosaic::new(config.grid, h, config.tile_pad, c)?;
    let mut rendered = 0usize;
    let mut failed = 0usize;
    for (cell, outcome) in outcomes.iter().enumerate() {
        match outcome {
            TargetOutcome::Blank => {}
            TargetOutcome::Done(result) => {
                mosaic.set_tile(cell, &result.image)?;
                save_image_png(
                    &cells_dir.join(format!("cell-{cell:04}.png")),
                    result.image.data(),
                    (c, h, w),
                )?;
                rendered += 1;
            }
            TargetOutcome::Failed { cell, message } => {
                warn!("cell {cell} failed: {message}");
                failed += 1;
            }
        }
    }
    mosaic.render().save_png(&args.out.join("mosaic.png"))?;
    common::write_manifest(&args.out, &hash)?;

    println!(
        "mosaic {}: {rendered} cells rendered, {failed} failed (checkpoint {})",
        args.out.join("mosaic.png").display(),
        header.config_hash
    );
    Ok(())
}

fn merge(config: &mut AtlasConfig, args: &AtlasArgs) {
    if let Some(v) = &args.checkpoint {
        config.checkpoint = v.clone();
    }
    if let Some(v) = &args.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = args.test_split {
        config.test_split = v;
    }
    if let Some(v) = &args.layer {
        config.layer = v.clone();
    }
    if let Some(v) = args.grid {
        config.grid = v;
    }
    if let Some(v) = args.min_occupancy {
        config.min_occupancy = v;
    }
    if let Some(v) = args.sample {
        config.sample = v;
    }
    if let Some(v) = args.spatial {
        config.spatial = v;
    }
    if let Some(v) = args.tile_pad {
        config.tile_pad = v;
    }
    if let Some(v) = args.bins {
        config.bins = v;
    }
    if let Some(v) = args.n_neighbors {
        config.n_neighbors = v;
    }
    if let Some(v) = args.min_dist {
        config.min_dist = v;
    }
    if let Some(v) = args.layout_epochs {
        config.layout_epochs = v;
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

//! `render`: rebuild PNG artifacts from saved outputs (cell images,
//! embedding CSVs, scan tables) without recomputing anything.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use atlasbench_core::embedding::{Embedding2D, EmbeddingConfig};
use atlasbench_core::render::{render_embedding, render_scan, TileMosaic};
use atlasbench_core::tensor::Tensor;
use atlasbench_core::transfer::read_scan_csv;

use crate::common;

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(subcommand)]
    what: RenderWhat,
}

#[derive(Debug, Subcommand)]
enum RenderWhat {
    /// Lay saved tile PNGs back out as a mosaic
    Mosaic {
        /// Directory of cell-NNNN.png tiles (see --sequential for other names)
        #[arg(long)]
        cells: PathBuf,

        /// Grid side length
        #[arg(long, required = true)]
        grid: usize,

        /// Padding around each tile in pixels
        #[arg(long, default_value_t = 2)]
        tile_pad: usize,

        /// Ignore filenames and fill cells in sorted file order
        #[arg(long)]
        sequential: bool,

        /// Output directory
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Redraw the class-colored histogram of an embedding CSV
    Embedding {
        /// embedding.csv written by the atlas command (index,x,y,label)
        #[arg(long)]
        csv: PathBuf,

        /// Histogram resolution
        #[arg(long, default_value_t = 100)]
        bins: usize,

        /// Output directory
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Redraw the accuracy-vs-width plot from a scan table CSV
    Scan {
        /// table.csv written by the scan command
        #[arg(long)]
        table: PathBuf,

        /// Linear-baseline accuracy for the dashed reference line
        #[arg(long)]
        baseline: Option<f64>,

        /// Output directory
        #[arg(long, required = true)]
        out: PathBuf,
    },
}

/// Hashed stand-in for a config file; render subcommands are flag-only.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RenderConfig {
    Mosaic { cells: String, grid: usize, tile_pad: usize, sequential: bool },
    Embedding { csv: String, bins: usize },
    Scan { table: String, baseline: Option<f64> },
}

pub fn run(args: RenderArgs) -> Result<()> {
    match args.what {
        RenderWhat::Mosaic {
            cells,
            grid,
            tile_pad,
            sequential,
            out,
        } => {
            let config = RenderConfig::Mosaic {
                cells: cells.display().to_string(),
                grid,
                tile_pad,
                sequential,
            };
            let hash = atlasbench_core::config::config_hash(&config)?;
            mosaic(&cells, grid, tile_pad, sequential, &out)?;
            common::write_manifest(&out, &hash)
        }
        RenderWhat::Embedding { csv, bins, out } => {
            let config = RenderConfig::Embedding {
                csv: csv.display().to_string(),
                bins,
            };
            let hash = atlasbench_core::config::config_hash(&config)?;
            embedding(&csv, bins, &out)?;
            common::write_manifest(&out, &hash)
        }
        RenderWhat::Scan { table, baseline, out } => {
            let config = RenderConfig::Scan {
                table: table.display().to_string(),
                baseline,
            };
            let hash = atlasbench_core::config::config_hash(&config)?;
            scan(&table, baseline, &out)?;
            common::write_manifest(&out, &hash)
        }
    }
}

/// Decode one tile PNG to a planar `[C, H, W]` tensor.
fn decode_tile(path: &Path) -> Result<(Tensor<f32>, usize, usize)> {
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    let (c, h, w, planar): (usize, usize, usize, Vec<f32>) = match img.color().channel_count() {
        1 => {
            let gray = img.to_luma8();
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            (1, h, w, gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect())
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut planes = vec![0.0; 3 * h * w];
            for (i, p) in rgb.pixels().enumerate() {
                for ch in 0..3 {
                    planes[ch * h * w + i] = p.0[ch] as f32 / 255.0;
                }
            }
            (3, h, w, planes)
        }
    };
    let tensor = Tensor::from_vec(planar, &[c, h, w]).map_err(atlasbench_core::Error::from)?;
    Ok((tensor, h, w))
}

fn mosaic(cells: &Path, grid: usize, tile_pad: usize, sequential: bool, out: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(cells)
        .with_context(|| format!("listing {}", cells.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .png tiles under {}", cells.display());
    }

    let mut placed: Vec<(usize, PathBuf)> = Vec::with_capacity(files.len());
    for (order, path) in files.iter().enumerate() {
        let cell = if sequential {
            order
        } else {
            tile_cell_index(path).with_context(|| {
                format!(
                    "{} does not look like cell-NNNN.png; pass --sequential to place files in sorted order",
                    path.display()
                )
            })?
        };
        placed.push((cell, path.clone()));
    }

    let (first, h, w) = decode_tile(&placed[0].1)?;
    if h != w {
        bail!("tiles must be square; {} is {h}x{w}", placed[0].1.display());
    }
    let channels = first.shape()[0];
    let mut mosaic = TileMosaic::new(grid, h, tile_pad, channels)?;
    for (cell, path) in &placed {
        let (tile, _, _) = decode_tile(path)?;
        mosaic
            .set_tile(*cell, &tile)
            .with_context(|| format!("placing {}", path.display()))?;
    }
    std::fs::create_dir_all(out)?;
    mosaic.render().save_png(&out.join("mosaic.png"))?;
    println!("mosaic of {} tiles -> {}", placed.len(), out.join("mosaic.png").display());
    Ok(())
}

/// Cell index encoded in a `cell-NNNN.png` filename.
fn tile_cell_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("cell-")?.parse().ok()
}

fn embedding(csv: &Path, bins: usize, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv)
        .with_context(|| format!("reading {}", csv.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim_end();
    if header != "index,x,y,label" {
        bail!("not an embedding CSV, header is {header:?}");
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("embedding CSV row {} has {} fields, not 4", i + 2, fields.len());
        }
        let x: f64 = fields[1].parse().with_context(|| format!("row {}: bad x", i + 2))?;
        let y: f64 = fields[2].parse().with_context(|| format!("row {}: bad y", i + 2))?;
        let label: u32 = fields[3].parse().with_context(|| format!("row {}: bad label", i + 2))?;
        coords.push(x);
        coords.push(y);
        labels.push(label);
    }
    let embedding = Embedding2D {
        count: coords.len() / 2,
        coords,
        config: EmbeddingConfig::default(),
    };
    std::fs::create_dir_all(out)?;
    render_embedding(&embedding, &labels, bins)?.save_png(&out.join("embedding.png"))?;
    println!("{} points -> {}", embedding.count, out.join("embedding.png").display());
    Ok(())
}

fn scan(table: &Path, baseline: Option<f64>, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(table)
        .with_context(|| format!("reading {}", table.display()))?;
    let rows = read_scan_csv(&text)?;
    let (canvas, csv) = render_scan(&rows, baseline)?;
    std::fs::create_dir_all(out)?;
    canvas.save_png(&out.join("scan.png"))?;
    std::fs::write(out.join("table.csv"), &csv)?;
    println!("{} table rows -> {}", rows.len(), out.join("scan.png").display());
    Ok(())
}

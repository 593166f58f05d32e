//! Rasterizers for atlas mosaics, embedding histograms, and scan plots.
//!
//! Everything renders into an RGB [`Canvas`] with a small built-in 5x7
//! font, then encodes to PNG through the `image` crate. Renders are pure
//! functions of their inputs; no timestamps or environment leak into the
//! bytes, so identical inputs give identical files.

use std::io::Cursor;
use std::path::Path;

use crate::embedding::Embedding2D;
use crate::tensor::Tensor;
use crate::transfer::{write_scan_csv, ScanPointSummary};
use crate::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
/// Background and padding gray of mosaics.
pub const NEUTRAL_GRAY: Rgb = [128, 128, 128];

/// The common ten-color categorical scheme.
const PALETTE10: [Rgb; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Pastel companions that extend the ten-color scheme to fifteen.
const PALETTE15_TAIL: [Rgb; 5] = [
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Fixed class colors: up to 10 from the categorical scheme, up to 15
/// with its pastel extension, and up to 28 as an evenly spaced hue wheel
/// (shift labels are cyclic, so their colors are too).
pub fn class_palette(classes: usize) -> Result<Vec<Rgb>> {
    match classes {
        0 => Err(Error::contract("palette needs at least one class")),
        1..=10 => Ok(PALETTE10[..classes].to_vec()),
        11..=15 => {
            let mut p = PALETTE10.to_vec();
            p.extend_from_slice(&PALETTE15_TAIL[..classes - 10]);
            Ok(p)
        }
        16..=28 => Ok((0..classes)
            .map(|i| hsv_to_rgb(i as f64 / 28.0 * 360.0, 0.85, 0.9))
            .collect()),
        _ => Err(Error::contract(format!(
            "palette supports at most 28 classes, got {classes}"
        ))),
    }
}

/// Glyph bitmaps, 5 columns in the low bits of each of 7 rows.
const FONT: &[(char, [u8; 7])] = &[
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('a', [0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111]),
    ('b', [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b11110]),
    ('c', [0b00000, 0b00000, 0b01110, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('d', [0b00001, 0b00001, 0b01101, 0b10011, 0b10001, 0b10001, 0b01111]),
    ('e', [0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110]),
    ('f', [0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000]),
    ('g', [0b00000, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110]),
    ('h', [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001]),
    ('i', [0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('j', [0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('k', [0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010]),
    ('l', [0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('m', [0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101]),
    ('n', [0b00000, 0b00000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001]),
    ('o', [0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('p', [0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000]),
    ('q', [0b00000, 0b00000, 0b01101, 0b10011, 0b01111, 0b00001, 0b00001]),
    ('r', [0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000]),
    ('s', [0b00000, 0b00000, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110]),
    ('t', [0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110]),
    ('u', [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101]),
    ('v', [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('w', [0b00000, 0b00000, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]),
    ('x', [0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001]),
    ('y', [0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110]),
    ('z', [0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100]),
    ('-', [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000]),
    ('%', [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011]),
    ('/', [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000]),
    (':', [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000]),
    (' ', [0; 7]),
];

pub const GLYPH_WIDTH: usize = 6;
pub const GLYPH_HEIGHT: usize = 7;

fn glyph(c: char) -> [u8; 7] {
    let c = c.to_ascii_lowercase();
    FONT.iter()
        .find(|(g, _)| *g == c)
        .map(|(_, rows)| *rows)
        .unwrap_or([0; 7])
}

/// Plain RGB raster. Coordinates run x right, y down; drawing outside the
/// frame clips silently so plot math does not need bounds care.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Canvas {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: usize, h: usize, color: Rgb) {
        for dy in 0..h as i64 {
            for dx in 0..w as i64 {
                self.set(x + dx, y + dy, color);
            }
        }
    }

    pub fn hline(&mut self, x0: i64, x1: i64, y: i64, color: Rgb) {
        for x in x0.min(x1)..=x0.max(x1) {
            self.set(x, y, color);
        }
    }

    pub fn vline(&mut self, x: i64, y0: i64, y1: i64, color: Rgb) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.set(x, y, color);
        }
    }

    pub fn dashed_hline(&mut self, x0: i64, x1: i64, y: i64, color: Rgb, on: usize, off: usize) {
        let period = (on + off) as i64;
        for x in x0.min(x1)..=x0.max(x1) {
            if (x - x0.min(x1)) % period < on as i64 {
                self.set(x, y, color);
            }
        }
    }

    /// Bresenham segment.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draw `text` with its top-left corner at (x, y); unknown characters
    /// render as spaces. Returns the advance in pixels.
    pub fn draw_text(&mut self, x: i64, y: i64, text: &str, color: Rgb) -> usize {
        for (i, c) in text.chars().enumerate() {
            let rows = glyph(c);
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..5 {
                    if row >> (4 - dx) & 1 == 1 {
                        self.set(x + (i * GLYPH_WIDTH + dx) as i64, y + dy as i64, color);
                    }
                }
            }
        }
        text.chars().count() * GLYPH_WIDTH
    }

    pub fn text_width(text: &str) -> usize {
        text.chars().count() * GLYPH_WIDTH
    }

    /// PNG encoding of the canvas.
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut bytes),
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::numeric(format!("png encode: {e}")))?;
        Ok(bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.png_bytes()?)?;
        Ok(())
    }
}

fn level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a `[C, H, W]` image with values in `[0, 1]` as grayscale (C=1) or
/// RGB (C=3) PNG.
pub fn save_image_png(path: &Path, data: &[f32], (c, h, w): (usize, usize, usize)) -> Result<()> {
    if data.len() != c * h * w {
        return Err(Error::contract(format!(
            "{} values do not tile into {c}x{h}x{w}",
            data.len()
        )));
    }
    let (bytes, color) = match c {
        1 => (data.iter().map(|&v| level(v)).collect::<Vec<u8>>(), image::ExtendedColorType::L8),
        3 => {
            let mut out = Vec::with_capacity(h * w * 3);
            for i in 0..h * w {
                for ch in 0..3 {
                    out.push(level(data[ch * h * w + i]));
                }
            }
            (out, image::ExtendedColorType::Rgb8)
        }
        _ => {
            return Err(Error::contract(format!(
                "image export supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut encoded = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut encoded),
        &bytes,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::numeric(format!("png encode: {e}")))?;
    std::fs::write(path, encoded)?;
    Ok(())
}

/// Square grid of equally sized image tiles with uniform padding; masked
/// cells stay background gray.
#[derive(Debug, Clone)]
pub struct TileMosaic {
    grid: usize,
    tile: usize,
    pad: usize,
    channels: usize,
    tiles: Vec<Option<Vec<f32>>>,
}

impl TileMosaic {
    pub fn new(grid: usize, tile: usize, pad: usize, channels: usize) -> Result<Self> {
        if grid == 0 || tile == 0 {
            return Err(Error::contract("mosaic needs positive grid and tile sizes"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!(
                "mosaic tiles must have 1 or 3 channels, got {channels}"
            )));
        }
        Ok(TileMosaic {
            grid,
            tile,
            pad,
            channels,
            tiles: vec![None; grid * grid],
        })
    }

    /// Build from a complete row-major tile list; the length must be
    /// exactly grid squared.
    pub fn from_tiles(
        grid: usize,
        tile: usize,
        pad: usize,
        channels: usize,
        tiles: Vec<Option<Vec<f32>>>,
    ) -> Result<Self> {
        let mut mosaic = TileMosaic::new(grid, tile, pad, channels)?;
        if tiles.len() != grid * grid {
            return Err(Error::contract(format!(
                "{} tiles for a {grid}x{grid} grid",
                tiles.len()
            )));
        }
        for (cell, t) in tiles.into_iter().enumerate() {
            if let Some(values) = t {
                mosaic.place(cell, values)?;
            }
        }
        Ok(mosaic)
    }

    /// Put a `[C, tile, tile]` image into a cell.
    pub fn set_tile(&mut self, cell: usize, image: &Tensor<f32>) -> Result<()> {
        let want = [self.channels, self.tile, self.tile];
        if image.shape() != want {
            return Err(Error::contract(format!(
                "tile shape {:?} does not match {want:?}",
                image.shape()
            )));
        }
        self.place(cell, image.data().to_vec())
    }

    fn place(&mut self, cell: usize, values: Vec<f32>) -> Result<()> {
        if cell >= self.grid * self.grid {
            return Err(Error::contract(format!(
                "cell {cell} outside a {0}x{0} grid",
                self.grid
            )));
        }
        if values.len() != self.channels * self.tile * self.tile {
            return Err(Error::contract(format!(
                "tile of {} values does not fill {}x{}x{}",
                values.len(),
                self.channels,
                self.tile,
                self.tile
            )));
        }
        self.tiles[cell] = Some(values);
        Ok(())
    }

    /// Output edge length: grid * (tile + 2 pad).
    pub fn side(&self) -> usize {
        self.grid * (self.tile + 2 * self.pad)
    }

    pub fn render(&self) -> Canvas {
        let mut canvas = Canvas::filled(self.side(), self.side(), NEUTRAL_GRAY);
        let step = self.tile + 2 * self.pad;
        let plane = self.tile * self.tile;
        for (cell, values) in self.tiles.iter().enumerate() {
            let Some(values) = values else { continue };
            let x0 = (cell % self.grid) * step + self.pad;
            let y0 = (cell / self.grid) * step + self.pad;
            for py in 0..self.tile {
                for px in 0..self.tile {
                    let i = py * self.tile + px;
                    let color = if self.channels == 1 {
                        let v = level(values[i]);
                        [v, v, v]
                    } else {
                        [
                            level(values[i]),
                            level(values[plane + i]),
                            level(values[2 * plane + i]),
                        ]
                    };
                    canvas.set((x0 + px) as i64, (y0 + py) as i64, color);
                }
            }
        }
        canvas
    }
}

/// Class-majority histogram of an embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingHistogram {
    pub bins: usize,
    pub classes: usize,
    /// Majority class per bin, row-major with image orientation (row 0 is
    /// the top, highest embedding y); `None` where no point lands.
    pub majority: Vec<Option<u32>>,
    pub counts: Vec<u32>,
}

/// Bin embedding coordinates and take the modal class per bin (ties to
/// the lower class id).
pub fn histogram_embedding(
    embedding: &Embedding2D,
    labels: &[u32],
    bins: usize,
) -> Result<EmbeddingHistogram> {
    if bins == 0 || bins > 1024 {
        return Err(Error::contract(format!("bins must lie in [1, 1024], got {bins}")));
    }
    if labels.len() != embedding.count {
        return Err(Error::contract(format!(
            "{} labels for {} embedded points",
            labels.len(),
            embedding.count
        )));
    }
    if embedding.count == 0 {
        return Err(Error::contract("embedding holds no points"));
    }
    let classes = *labels.iter().max().expect("nonempty") as usize + 1;

    let (mut min_x, mut max_x) = (f64::MAX, f64::MIN);
    let (mut min_y, mut max_y) = (f64::MAX, f64::MIN);
    for i in 0..embedding.count {
        let (x, y) = embedding.point(i);
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (span_x, span_y) = (span(min_x, max_x), span(min_y, max_y));

    let mut tallies = vec![0u32; bins * bins * classes];
    let mut counts = vec![0u32; bins * bins];
    let cell = |v: f64, lo: f64, span: f64| {
        (((v - lo) / span * bins as f64).floor() as usize).min(bins - 1)
    };
    for i in 0..embedding.count {
        let (x, y) = embedding.point(i);
        let ix = cell(x, min_x, span_x);
        // Row 0 is the top of the image, which is the highest y.
        let iy = bins - 1 - cell(y, min_y, span_y);
        let bin = iy * bins + ix;
        tallies[bin * classes + labels[i] as usize] += 1;
        counts[bin] += 1;
    }
    let majority = (0..bins * bins)
        .map(|bin| {
            if counts[bin] == 0 {
                return None;
            }
            let slice = &tallies[bin * classes..(bin + 1) * classes];
            let mut best = 0;
            for (k, &n) in slice.iter().enumerate() {
                if n > slice[best] {
                    best = k;
                }
            }
            Some(best as u32)
        })
        .collect();
    Ok(EmbeddingHistogram {
        bins,
        classes,
        majority,
        counts,
    })
}

/// Render an embedding as a bins x bins histogram: each occupied bin
/// takes its majority class's palette color, faded toward white by count,
/// with a class legend on the right.
pub fn render_embedding(embedding: &Embedding2D, labels: &[u32], bins: usize) -> Result<Canvas> {
    let hist = histogram_embedding(embedding, labels, bins)?;
    let palette = class_palette(hist.classes)?;
    let cell = (512 / bins).clamp(1, 16);
    let plot = bins * cell;
    let legend_w = 16 + 4 * GLYPH_WIDTH;
    let mut canvas = Canvas::filled(plot + legend_w, plot, WHITE);

    let max_count = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    for bin in 0..bins * bins {
        let Some(class) = hist.majority[bin] else { continue };
        let alpha = hist.counts[bin] as f64 / max_count;
        let color = palette[class as usize];
        let faded = [
            (255.0 + (color[0] as f64 - 255.0) * alpha).round() as u8,
            (255.0 + (color[1] as f64 - 255.0) * alpha).round() as u8,
            (255.0 + (color[2] as f64 - 255.0) * alpha).round() as u8,
        ];
        let (ix, iy) = (bin % bins, bin / bins);
        canvas.fill_rect((ix * cell) as i64, (iy * cell) as i64, cell, cell, faded);
    }

    for (k, color) in palette.iter().enumerate() {
        let y = 4 + k as i64 * 10;
        if y + 8 > plot as i64 {
            break;
        }
        canvas.fill_rect(plot as i64 + 4, y, 8, 8, *color);
        canvas.draw_text(plot as i64 + 16, y, &format!("{k}"), BLACK);
    }
    Ok(canvas)
}

/// Accuracy-versus-width plot: one series with error bars per task, an
/// optional dashed baseline level, and the table echoed as CSV.
pub fn render_scan(
    table: &[ScanPointSummary],
    baseline: Option<f64>,
) -> Result<(Canvas, Vec<u8>)> {
    if table.is_empty() {
        return Err(Error::contract("scan plot needs at least one table row"));
    }
    let mut csv = Vec::new();
    write_scan_csv(&mut csv, table)?;

    let mut tasks = Vec::new();
    for row in table {
        if !tasks.contains(&row.task) {
            tasks.push(row.task);
        }
    }

    let (width, height) = (640, 480);
    let (left, right, top, bottom) = (64i64, 616i64, 24i64, 432i64);
    let mut canvas = Canvas::filled(width, height, WHITE);

    let log_w = |w: usize| (w.max(1) as f64).log10();
    let mut x_lo = table.iter().map(|r| log_w(r.width)).fold(f64::MAX, f64::min);
    let mut x_hi = table.iter().map(|r| log_w(r.width)).fold(f64::MIN, f64::max);
    if x_hi - x_lo < 1e-9 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let margin = (x_hi - x_lo) * 0.06;
    let (x_lo, x_hi) = (x_lo - margin, x_hi + margin);

    let mut y_lo = table.iter().map(|r| r.mean - r.std).fold(f64::MAX, f64::min);
    let mut y_hi = table.iter().map(|r| r.mean + r.std).fold(f64::MIN, f64::max);
    if let Some(b) = baseline {
        y_lo = y_lo.min(b);
        y_hi = y_hi.max(b);
    }
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.05;
        y_hi += 0.05;
    }
    let pad = (y_hi - y_lo) * 0.08;
    let (y_lo, y_hi) = ((y_lo - pad).max(0.0), (y_hi + pad).min(1.0).max(y_lo + 1e-9));

    let to_x = |w: usize| left + ((log_w(w) - x_lo) / (x_hi - x_lo) * (right - left) as f64).round() as i64;
    let to_y = |v: f64| bottom - ((v - y_lo) / (y_hi - y_lo) * (bottom - top) as f64).round() as i64;

    canvas.hline(left, right, bottom, BLACK);
    canvas.vline(left, top, bottom, BLACK);

    let mut widths: Vec<usize> = table.iter().map(|r| r.width).collect();
    widths.sort_unstable();
    widths.dedup();
    for &w in &widths {
        let x = to_x(w);
        canvas.vline(x, bottom, bottom + 4, BLACK);
        let label = format!("{w}");
        canvas.draw_text(x - Canvas::text_width(&label) as i64 / 2, bottom + 7, &label, BLACK);
    }
    canvas.draw_text(
        (left + right) / 2 - Canvas::text_width("width") as i64 / 2,
        bottom + 20,
        "width",
        BLACK,
    );
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = to_y(v);
        canvas.hline(left - 4, left, y, BLACK);
        let label = format!("{:.2}", v);
        canvas.draw_text(
            left - 6 - Canvas::text_width(&label) as i64,
            y - 3,
            &label,
            BLACK,
        );
    }
    canvas.draw_text(left, top - GLYPH_HEIGHT as i64 - 2, "accuracy", BLACK);

    if let Some(b) = baseline {
        canvas.dashed_hline(left, right, to_y(b), [80, 80, 80], 5, 4);
    }

    for (series, task) in tasks.iter().enumerate() {
        let color = PALETTE10[series % PALETTE10.len()];
        let mut rows: Vec<&ScanPointSummary> =
            table.iter().filter(|r| r.task == *task).collect();
        rows.sort_by_key(|r| r.width);
        for pair in rows.windows(2) {
            canvas.line(
                to_x(pair[0].width),
                to_y(pair[0].mean),
                to_x(pair[1].width),
                to_y(pair[1].mean),
                color,
            );
        }
        for row in &rows {
            let (x, y) = (to_x(row.width), to_y(row.mean));
            let (y0, y1) = (to_y(row.mean - row.std), to_y(row.mean + row.std));
            canvas.vline(x, y1, y0, color);
            canvas.hline(x - 2, x + 2, y0, color);
            canvas.hline(x - 2, x + 2, y1, color);
            canvas.fill_rect(x - 1, y - 1, 3, 3, color);
        }
    }

    let mut legend_y = top + 4;
    for (series, task) in tasks.iter().enumerate() {
        let color = PALETTE10[series % PALETTE10.len()];
        let name = serde_json::to_value(task)
            .map_err(|e| Error::Serde(e.to_string()))?
            .as_str()
            .expect("scheme serializes to a string")
            .to_string();
        canvas.fill_rect(right - 100, legend_y, 8, 8, color);
        canvas.draw_text(right - 88, legend_y, &name, BLACK);
        legend_y += 12;
    }
    if baseline.is_some() {
        canvas.dashed_hline(right - 100, right - 92, legend_y + 4, [80, 80, 80], 3, 2);
        canvas.draw_text(right - 88, legend_y, "baseline", BLACK);
    }
    Ok((canvas, csv))
}

//! Tile-based forward rasterizer.
//!
//! Every splat is projected with the EWA Jacobian, sorted by camera depth
//! (ties by scene index), binned into screen tiles, and composited front to
//! back per pixel. The same weights drive color, latent features, and the
//! per-pixel contribution lists used by the training stages.

mod brute;
mod image;
mod project;

pub use brute::render_bruteforce;
pub use image::{write_pgm, write_ppm};
pub use project::{project, Projected2D};

use rayon::prelude::*;
use thiserror::Error;

use crate::scene::{Camera, Scene, SceneError};

/// Contributions with α below this are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// A pixel stops compositing once its transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Added to the projected covariance (pixels²) before inversion.
pub const COV2D_DILATION: f64 = 0.3;
/// Splats at camera depth ≤ this are culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot render an empty scene")]
    EmptyScene,
    #[error("tile size must be at least 1")]
    InvalidTileSize,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Keep per-pixel (index, weight) lists. Training needs them; plain image renders do not.
    pub record_contrib: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { tile_size: 16, record_contrib: true }
    }
}

/// H×W×C row-major map of per-pixel vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    /// Copies channels `[start, start + len)` into a new map.
    pub fn channel_slice(&self, start: usize, len: usize) -> FeatureMap {
        assert!(start + len <= self.channels);
        let data = self.data.chunks_exact(self.channels.max(1)).flat_map(|px| px[start..start + len].iter().copied()).collect();
        FeatureMap { width: self.width, height: self.height, channels: len, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    pub weight: f64,
}

/// Per-pixel contribution lists in compressed row form, row-major pixel order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contributions {
    pub offsets: Vec<usize>,
    pub entries: Vec<Contribution>,
}

impl Contributions {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// H×W×3.
    pub color: Vec<f64>,
    /// H×W×d composited latents.
    pub feature: FeatureMap,
    /// H×W accumulated weight Σ wᵢ.
    pub alpha_sum: Vec<f64>,
    /// Empty unless `RenderOptions::record_contrib` was set.
    pub contrib: Contributions,
}

#[derive(Default)]
struct PixelAccum {
    color: [f64; 3],
    feature: Vec<f64>,
    alpha_sum: f64,
    contrib: Vec<Contribution>,
}

/// Front-to-back compositing for one pixel center over depth-ordered splats.
fn composite<'a>(scene: &Scene, px: f64, py: f64, splats: impl Iterator<Item = &'a Projected2D>, record: bool) -> PixelAccum {
    let d = scene.latent_dim;
    let mut acc = PixelAccum { feature: vec![0.0; d], ..Default::default() };
    let mut transmittance = 1.0;
    for p in splats {
        let alpha = p.alpha_at(px, py);
        if alpha < ALPHA_MIN {
            continue;
        }
        let w = alpha * transmittance;
        let g = &scene.gaussians[p.gaussian_index];
        for (c, &gc) in acc.color.iter_mut().zip(&g.color) {
            *c += w * gc as f64;
        }
        for (f, &z) in acc.feature.iter_mut().zip(&g.latent) {
            *f += w * z as f64;
        }
        acc.alpha_sum += w;
        if record {
            acc.contrib.push(Contribution { gaussian: p.gaussian_index as u32, weight: w });
        }
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    acc
}

pub(crate) fn depth_order(a: &Projected2D, b: &Projected2D) -> std::cmp::Ordering {
    a.depth.total_cmp(&b.depth).then(a.gaussian_index.cmp(&b.gaussian_index))
}

/// Projects, sorts and culls every splat for `cam`.
pub fn project_scene(scene: &Scene, cam: &Camera) -> Vec<Projected2D> {
    let mut projected: Vec<Projected2D> = scene.gaussians.par_iter().enumerate().filter_map(|(i, g)| project(g, i, cam)).collect();
    projected.sort_by(depth_order);
    projected
}

/// Renders color, latent features, accumulated alpha and per-pixel weights.
pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput, RenderError> {
    if scene.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    if opts.tile_size == 0 {
        return Err(RenderError::InvalidTileSize);
    }
    cam.validate()?;
    let (width, height, ts) = (cam.width, cam.height, opts.tile_size);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);

    let projected = project_scene(scene, cam);

    // Bin in global depth order so each tile list is already sorted.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, p) in projected.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = p.pixel_bounds(width, height) else { continue };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                bins[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }

    let tiles: Vec<Vec<(usize, PixelAccum)>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(height) {
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    let splats = bin.iter().map(|&s| &projected[s as usize]);
                    out.push((y * width + x, composite(scene, x as f64 + 0.5, y as f64 + 0.5, splats, opts.record_contrib)));
                }
            }
            out
        })
        .collect();

    let mut pixels: Vec<Option<PixelAccum>> = (0..width * height).map(|_| None).collect();
    for (p, acc) in tiles.into_iter().flatten() {
        pixels[p] = Some(acc);
    }
    Ok(assemble(width, height, scene.latent_dim, pixels.into_iter().map(|p| p.expect("every pixel belongs to one tile")), opts.record_contrib))
}

fn assemble(width: usize, height: usize, d: usize, pixels: impl Iterator<Item = PixelAccum>, record: bool) -> RenderOutput {
    let n = width * height;
    let mut color = Vec::with_capacity(n * 3);
    let mut feature = FeatureMap { width, height, channels: d, data: Vec::with_capacity(n * d) };
    let mut alpha_sum = Vec::with_capacity(n);
    let mut contrib = Contributions::default();
    if record {
        contrib.offsets.reserve(n + 1);
        contrib.offsets.push(0);
    }
    for acc in pixels {
        color.extend_from_slice(&acc.color);
        feature.data.extend_from_slice(&acc.feature);
        alpha_sum.push(acc.alpha_sum);
        if record {
            contrib.entries.extend_from_slice(&acc.contrib);
            contrib.offsets.push(contrib.entries.len());
        }
    }
    RenderOutput { width, height, color, feature, alpha_sum, contrib }
}

//! Second-stage language-field optimizer.
//!
//! Geometry and appearance stay frozen; only per-splat latents move. Since a
//! rendered latent map is linear in the latents for fixed geometry, the
//! compositing weights recorded once per view give exact gradients:
//! ∂L/∂zᵢ = Σ_v wᵢ(v) · ∂L/∂Z(v).

mod rgb;
mod targets;

pub use rgb::{rgb_stage, RgbStageConfig, RgbStageReport};
pub use targets::{build_targets, MaskRegion, TargetFeatureMap, ViewSupervision};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{cosine_grad_into, CodecError};
use crate::raster::{render, Contributions, FeatureMap, RenderError, RenderOptions};
use crate::scene::{Camera, Scene};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("no supervised pixels")]
    EmptySupervision,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("mask {mask} overlaps another mask at pixel {pixel} in view {view}, level {level}")]
    OverlappingMasks { view: usize, level: usize, mask: usize, pixel: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Value of ‖Z − H‖₁ + γ(1 − cos(Z, H)) averaged over valid pixels, with ∂/∂Z.
#[derive(Clone, Debug, PartialEq)]
pub struct LangLoss {
    pub loss: f64,
    /// Mean per-pixel L1 distance.
    pub l1: f64,
    /// Mean per-pixel 1 − cos.
    pub cos_gap: f64,
    /// Same layout as Z; zero at invalid pixels.
    pub grad: Vec<f64>,
    pub valid_pixels: usize,
}

pub fn lang_loss(z: &FeatureMap, target: &TargetFeatureMap, gamma: f64) -> Result<LangLoss, FieldError> {
    let mut grad = vec![0.0; z.data.len()];
    let mut per_pixel = Vec::new();
    let (l1, cos_gap, valid_pixels) = lang_loss_into(z, target, gamma, &mut grad, &mut per_pixel)?;
    Ok(LangLoss { loss: l1 + gamma * cos_gap, l1, cos_gap, grad, valid_pixels })
}

/// Writes the gradient into `grad` (overwritten, same layout as Z) and returns
/// (mean L1, mean cosine gap, valid pixels).
fn lang_loss_into(
    z: &FeatureMap,
    target: &TargetFeatureMap,
    gamma: f64,
    grad: &mut [f64],
    per_pixel: &mut Vec<(f64, f64)>,
) -> Result<(f64, f64, usize), FieldError> {
    if (z.width, z.height, z.channels) != (target.width, target.height, target.channels) {
        return Err(FieldError::DimMismatch(format!(
            "rendered map is {}x{}x{}, target is {}x{}x{}",
            z.width, z.height, z.channels, target.width, target.height, target.channels
        )));
    }
    let k = z.channels;
    let valid = target.valid.iter().filter(|&&v| v).count();
    if valid == 0 {
        return Err(FieldError::EmptySupervision);
    }
    let inv = 1.0 / valid as f64;
    grad.par_chunks_mut(k.max(1))
        .enumerate()
        .map(|(p, g)| {
            if !target.valid[p] {
                g.iter_mut().for_each(|x| *x = 0.0);
                return (0.0, 0.0);
            }
            let zp = z.pixel(p);
            let hp = target.pixel(p);
            let mut l1 = 0.0;
            for ((gi, &a), &b) in g.iter_mut().zip(zp).zip(hp) {
                let r = a - b;
                l1 += r.abs();
                *gi = inv
                    * if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
            }
            let c = cosine_grad_into(zp, hp, -gamma * inv, g);
            (l1, 1.0 - c)
        })
        .collect_into_vec(per_pixel);
    // index-ordered reduction
    let (l1, gap) = per_pixel.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    Ok((l1 * inv, gap * inv, valid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldTrainConfig {
    /// Cosine weight γ inside the language loss.
    pub gamma: f64,
    /// Weight β of the language term in the total objective.
    pub beta: f64,
    pub lr: f64,
    /// Learning rate reached at the last iteration (exponential decay). `None` keeps `lr` constant.
    pub lr_final: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Hierarchy levels; latents are `levels × k` wide.
    pub levels: usize,
    pub tile_size: usize,
}

impl Default for FieldTrainConfig {
    fn default() -> Self {
        Self { gamma: 0.5, beta: 1.0, lr: 2.5e-3, lr_final: Some(2.5e-5), iterations: 2000, seed: 0, levels: 1, tile_size: 16 }
    }
}

impl FieldTrainConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::Config(m));
        if !(self.gamma >= 0.0 && self.beta >= 0.0) {
            return bad(format!("gamma and beta must be ≥ 0, got {} and {}", self.gamma, self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.lr_final.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return bad("learning rates must be positive".into());
        }
        if self.levels == 0 || self.tile_size == 0 {
            return bad("levels and tile_size must be ≥ 1".into());
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        match self.lr_final {
            Some(end) if self.iterations > 1 => {
                let t = iter as f64 / (self.iterations - 1) as f64;
                self.lr * (end / self.lr).powf(t)
            }
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub view: usize,
    pub level: usize,
    pub loss_l1: f64,
    pub loss_cos: f64,
    /// β · L_lang.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub curve: Vec<LossRecord>,
}

impl FieldReport {
    /// One JSON object per line: iter, view, level, loss_l1, loss_cos, total.
    pub fn to_jsonl(&self) -> String {
        self.curve.iter().map(|r| serde_json::to_string(r).expect("plain struct") + "\n").collect()
    }
}

/// Composites channels `[offset, offset + k)` of the latent matrix through recorded weights.
pub fn composite_latents(contrib: &Contributions, latents: &[f64], stride: usize, offset: usize, k: usize, width: usize, height: usize) -> FeatureMap {
    let mut z = FeatureMap::zeros(width, height, k);
    composite_into(contrib, latents, stride, offset, &mut z);
    z
}

fn composite_into(contrib: &Contributions, latents: &[f64], stride: usize, offset: usize, z: &mut FeatureMap) {
    let k = z.channels;
    z.data.par_chunks_mut(k.max(1)).enumerate().for_each(|(p, out)| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in contrib.pixel(p) {
            let row = &latents[c.gaussian as usize * stride + offset..][..k];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += c.weight * v;
            }
        }
    });
}

/// Scatters ∂L/∂Z back onto latent channels `[offset, offset + k)`, in pixel then depth order.
pub fn scatter_gradient(contrib: &Contributions, grad_z: &[f64], stride: usize, offset: usize, k: usize, out: &mut [f64]) {
    for (p, g) in grad_z.chunks_exact(k.max(1)).enumerate() {
        for c in contrib.pixel(p) {
            let row = &mut out[c.gaussian as usize * stride + offset..][..k];
            for (o, &gv) in row.iter_mut().zip(g) {
                *o += c.weight * gv;
            }
        }
    }
}

/// Recorded weights for every camera, so geometry is rasterized once.
pub struct FrozenViews {
    pub contrib: Vec<Contributions>,
    pub sizes: Vec<(usize, usize)>,
}

impl FrozenViews {
    pub fn new(scene: &Scene, cameras: &[Camera], tile_size: usize) -> Result<Self, FieldError> {
        let opts = RenderOptions { tile_size, record_contrib: true };
        let mut contrib = Vec::with_capacity(cameras.len());
        let mut sizes = Vec::with_capacity(cameras.len());
        for cam in cameras {
            let out = render(scene, cam, &opts)?;
            contrib.push(out.contrib);
            sizes.push((cam.width, cam.height));
        }
        Ok(Self { contrib, sizes })
    }
}

fn check_targets(scene: &Scene, views: &FrozenViews, targets: &[TargetFeatureMap], levels: usize) -> Result<usize, FieldError> {
    let first = targets.first().ok_or(FieldError::EmptySupervision)?;
    let k = first.channels;
    if scene.latent_dim != levels * k {
        return Err(FieldError::DimMismatch(format!("scene latent_dim {} != levels ({levels}) × target channels ({k})", scene.latent_dim)));
    }
    for t in targets {
        if t.channels != k {
            return Err(FieldError::DimMismatch("targets disagree on latent width".into()));
        }
        if t.level >= levels {
            return Err(FieldError::DimMismatch(format!("target level {} but only {levels} levels", t.level)));
        }
        let Some(&(w, h)) = views.sizes.get(t.view_id) else {
            return Err(FieldError::DimMismatch(format!("target references view {} of {}", t.view_id, views.sizes.len())));
        };
        if (w, h) != (t.width, t.height) {
            return Err(FieldError::DimMismatch(format!("target {}x{} vs camera {w}x{h}", t.width, t.height)));
        }
    }
    if targets.iter().all(|t| !t.valid.iter().any(|&v| v)) {
        return Err(FieldError::EmptySupervision);
    }
    Ok(k)
}

/// Unweighted language loss of one target map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermLoss {
    pub loss: f64,
    pub l1: f64,
    pub cos_gap: f64,
    pub valid_pixels: usize,
}

/// Buffers reused across iterations; large per-step allocations dominate otherwise.
#[derive(Default)]
struct Workspace {
    z: FeatureMap,
    grad_z: Vec<f64>,
    per_pixel: Vec<(f64, f64)>,
}

/// Frozen views plus targets: the language objective as a function of an
/// f64 latent matrix (N × levels·k, row-major).
pub struct LanguageProblem<'a> {
    pub views: FrozenViews,
    pub targets: &'a [TargetFeatureMap],
    /// Latent width per level.
    pub k: usize,
    pub stride: usize,
    pub gamma: f64,
    pub beta: f64,
}

impl<'a> LanguageProblem<'a> {
    pub fn new(scene: &Scene, cameras: &[Camera], targets: &'a [TargetFeatureMap], cfg: &FieldTrainConfig) -> Result<Self, FieldError> {
        cfg.validate()?;
        let views = FrozenViews::new(scene, cameras, cfg.tile_size)?;
        let k = check_targets(scene, &views, targets, cfg.levels)?;
        Ok(Self { views, targets, k, stride: scene.latent_dim, gamma: cfg.gamma, beta: cfg.beta })
    }

    /// L_lang for one target, accumulating β·∂L/∂latents into `grad`.
    pub fn target_term(&self, t: &TargetFeatureMap, latents: &[f64], grad: &mut [f64]) -> Result<TermLoss, FieldError> {
        self.target_term_in(&mut Workspace::default(), t, latents, grad)
    }

    fn target_term_in(&self, ws: &mut Workspace, t: &TargetFeatureMap, latents: &[f64], grad: &mut [f64]) -> Result<TermLoss, FieldError> {
        let (w, h) = self.views.sizes[t.view_id];
        let contrib = &self.views.contrib[t.view_id];
        let offset = t.level * self.k;
        if (ws.z.width, ws.z.height, ws.z.channels) != (w, h, self.k) {
            ws.z = FeatureMap::zeros(w, h, self.k);
            ws.grad_z = vec![0.0; w * h * self.k];
        }
        composite_into(contrib, latents, self.stride, offset, &mut ws.z);
        let (l1, cos_gap, valid_pixels) = lang_loss_into(&ws.z, t, self.gamma, &mut ws.grad_z, &mut ws.per_pixel)?;
        if self.beta != 1.0 {
            ws.grad_z.iter_mut().for_each(|g| *g *= self.beta);
        }
        scatter_gradient(contrib, &ws.grad_z, self.stride, offset, self.k, grad);
        Ok(TermLoss { loss: l1 + self.gamma * cos_gap, l1, cos_gap, valid_pixels })
    }

    /// Σ over supervised targets of β·L_lang, and its gradient.
    pub fn objective(&self, latents: &[f64]) -> Result<(f64, Vec<f64>), FieldError> {
        let mut grad = vec![0.0; latents.len()];
        let mut ws = Workspace::default();
        let mut total = 0.0;
        for t in self.targets.iter().filter(|t| t.valid.iter().any(|&v| v)) {
            total += self.beta * self.target_term_in(&mut ws, t, latents, &mut grad)?.loss;
        }
        Ok((total, grad))
    }
}

struct LatentAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl LatentAdam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cols: std::ops::Range<usize>, stride: usize) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for row in 0..params.len() / stride {
            for c in cols.clone() {
                let i = row * stride + c;
                let g = grad[i];
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

/// Fits latents so rendered latent maps match the targets. Views are cycled
/// round-robin, one full-batch step per target map. Returns a scene that
/// differs from the input only in its latents.
pub fn train_language_field(
    scene: &Scene,
    cameras: &[Camera],
    targets: &[TargetFeatureMap],
    cfg: &FieldTrainConfig,
) -> Result<(Scene, FieldReport), FieldError> {
    cfg.validate()?;
    if cfg.iterations == 0 {
        return Ok((scene.clone(), FieldReport::default()));
    }
    let problem = LanguageProblem::new(scene, cameras, targets, cfg)?;
    let supervised: Vec<&TargetFeatureMap> = targets.iter().filter(|t| t.valid.iter().any(|&v| v)).collect();
    let (k, stride) = (problem.k, problem.stride);
    let mut latents = scene.latent_matrix();
    let mut grad = vec![0.0; latents.len()];
    let mut adam: Vec<LatentAdam> = (0..cfg.levels).map(|_| LatentAdam { m: vec![0.0; latents.len()], v: vec![0.0; latents.len()], t: 0 }).collect();
    let mut report = FieldReport { curve: Vec::with_capacity(cfg.iterations) };
    let mut ws = Workspace::default();

    for iter in 0..cfg.iterations {
        let t = supervised[iter % supervised.len()];
        let offset = t.level * k;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = problem.target_term_in(&mut ws, t, &latents, &mut grad)?;
        let total = cfg.beta * l.loss;
        if !total.is_finite() {
            return Err(FieldError::Divergence { iteration: iter, loss: total });
        }
        adam[t.level].step(&mut latents, &grad, cfg.lr_at(iter), offset..offset + k, stride);
        if !latents.iter().all(|v| v.is_finite()) {
            return Err(FieldError::Divergence { iteration: iter, loss: f64::NAN });
        }
        report.curve.push(LossRecord { iter, view: t.view_id, level: t.level, loss_l1: l.l1, loss_cos: l.cos_gap, total });
    }
    let mut out = scene.clone();
    out.set_latents(&latents);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, SceneMetadata};
    use approx::assert_relative_eq;

    fn target(width: usize, height: usize, k: usize, values: Vec<f64>, valid: Vec<bool>) -> TargetFeatureMap {
        TargetFeatureMap { view_id: 0, level: 0, width, height, channels: k, values, valid }
    }

    #[test]
    fn matching_map_has_zero_loss() {
        let h = vec![0.3, -0.4, 1.0, 2.0];
        let z = FeatureMap { width: 2, height: 1, channels: 2, data: h.clone() };
        let l = lang_loss(&z, &target(2, 1, 2, h, vec![true; 2]), 0.5).unwrap();
        assert_relative_eq!(l.loss, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_render_against_unit_targets() {
        // L1 = ‖H‖₁ = 1 per pixel for one-hot H; cos(0, H) is taken as 0
        let h = vec![1.0, 0.0, 0.0, -1.0];
        let z = FeatureMap::zeros(2, 1, 2);
        let l = lang_loss(&z, &target(2, 1, 2, h, vec![true; 2]), 1.0).unwrap();
        assert_relative_eq!(l.l1, 1.0);
        assert_relative_eq!(l.loss, 2.0);
    }

    #[test]
    fn pure_l1_gradient_is_sign_over_valid_count() {
        let h = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let z = FeatureMap { width: 3, height: 1, channels: 2, data: vec![2.0, 0.0, 5.0, 5.0, 0.0, 0.0] };
        let l = lang_loss(&z, &target(3, 1, 2, h, vec![true, true, false]), 0.0).unwrap();
        assert_eq!(l.grad, vec![0.5, -0.5, 0.5, 0.5, 0.0, 0.0]);
        assert_relative_eq!(l.loss, (2.0 + 8.0) / 2.0);
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let z = FeatureMap::zeros(2, 1, 1);
        assert!(matches!(lang_loss(&z, &target(2, 1, 1, vec![0.0; 2], vec![false; 2]), 0.5), Err(FieldError::EmptySupervision)));
        assert!(matches!(lang_loss(&z, &target(1, 1, 1, vec![0.0], vec![true]), 0.5), Err(FieldError::DimMismatch(_))));
    }

    #[test]
    fn zero_iterations_leave_latents_unchanged() {
        let g = Gaussian::isotropic([0.0, 0.0, 2.0], 0.5, [0.5; 3], 0.9, vec![0.25, -0.5]).unwrap();
        let scene = Scene::new(vec![g], 2, SceneMetadata::default()).unwrap();
        let cam = Camera::identity_pose(4.0, 4.0, 2.0, 2.0, 4, 4).unwrap();
        let t = target(4, 4, 2, vec![1.0; 32], vec![true; 16]);
        let cfg = FieldTrainConfig { iterations: 0, ..Default::default() };
        let (out, report) = train_language_field(&scene, &[cam], &[t], &cfg).unwrap();
        assert_eq!(out, scene);
        assert!(report.curve.is_empty());
    }
}

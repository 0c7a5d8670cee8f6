//! Toy first stage: photometric L1 fit of colors and opacities with geometry fixed.

use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::raster::{render, RenderOptions, ALPHA_MIN};
use crate::scene::{Camera, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgbStageConfig {
    pub iterations: usize,
    pub lr: f64,
    pub optimize_color: bool,
    pub optimize_opacity: bool,
    /// Return the scene untouched.
    pub skip: bool,
    pub tile_size: usize,
}

impl Default for RgbStageConfig {
    fn default() -> Self {
        Self { iterations: 200, lr: 1e-2, optimize_color: true, optimize_opacity: true, skip: false, tile_size: 16 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RgbStageReport {
    /// Mean absolute error per iteration, before the step.
    pub curve: Vec<f64>,
}

/// `images[i]` is H×W×3 row-major RGB for `cameras[i]`.
pub fn rgb_stage(scene: &Scene, cameras: &[Camera], images: &[Vec<f64>], cfg: &RgbStageConfig) -> Result<(Scene, RgbStageReport), FieldError> {
    if cfg.skip || cfg.iterations == 0 {
        return Ok((scene.clone(), RgbStageReport::default()));
    }
    if cameras.is_empty() || cameras.len() != images.len() {
        return Err(FieldError::DimMismatch(format!("{} cameras, {} images", cameras.len(), images.len())));
    }
    for (c, im) in cameras.iter().zip(images) {
        if im.len() != c.pixel_count() * 3 {
            return Err(FieldError::DimMismatch(format!("image has {} values, camera needs {}", im.len(), c.pixel_count() * 3)));
        }
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || cfg.tile_size == 0 {
        return Err(FieldError::Config("lr must be positive and tile_size ≥ 1".into()));
    }

    let n = scene.len();
    let mut work = scene.clone();
    // params per splat: r, g, b, opacity
    let mut params: Vec<f64> = work.gaussians.iter().flat_map(|g| [g.color[0] as f64, g.color[1] as f64, g.color[2] as f64, g.opacity as f64]).collect();
    let mut m = vec![0.0; 4 * n];
    let mut v = vec![0.0; 4 * n];
    let opts = RenderOptions { tile_size: cfg.tile_size, record_contrib: true };
    let mut report = RgbStageReport::default();

    for iter in 0..cfg.iterations {
        let view = iter % cameras.len();
        for (g, p) in work.gaussians.iter_mut().zip(params.chunks_exact(4)) {
            g.color = [p[0] as f32, p[1] as f32, p[2] as f32];
            g.opacity = p[3] as f32;
        }
        let out = render(&work, &cameras[view], &opts)?;
        let target = &images[view];
        let inv = 1.0 / target.len() as f64;
        let mut grad = vec![0.0; 4 * n];
        let mut err = 0.0;
        for px in 0..out.width * out.height {
            let mut dc = [0.0; 3];
            for c in 0..3 {
                let r = out.color[px * 3 + c] - target[px * 3 + c];
                err += r.abs();
                dc[c] = inv * r.signum() * (r != 0.0) as u8 as f64;
            }
            let list = out.contrib.pixel(px);
            // suffix[j] = Σ_{i>j} cᵢ wᵢ, per channel
            let mut suffix = [0.0; 3];
            let mut trans = 1.0 - list.iter().map(|c| c.weight).sum::<f64>();
            for e in list.iter().rev() {
                let gi = e.gaussian as usize;
                let w = e.weight;
                trans += w;
                let col = &params[gi * 4..gi * 4 + 3];
                for c in 0..3 {
                    grad[gi * 4 + c] += dc[c] * w;
                }
                let alpha = w / trans;
                let o = params[gi * 4 + 3];
                if alpha < 1.0 && o > 0.0 {
                    // ∂C/∂α = c T − suffix / (1 − α); ∂α/∂o = α / o
                    let mut d = 0.0;
                    for c in 0..3 {
                        d += dc[c] * (col[c] * trans - suffix[c] / (1.0 - alpha));
                    }
                    grad[gi * 4 + 3] += d * alpha / o;
                }
                for c in 0..3 {
                    suffix[c] += col[c] * w;
                }
            }
        }
        report.curve.push(err * inv);

        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        let t = (iter + 1) as i32;
        let (c1, c2) = (1.0 - B1.powi(t), 1.0 - B2.powi(t));
        for i in 0..4 * n {
            let is_opacity = i % 4 == 3;
            if (is_opacity && !cfg.optimize_opacity) || (!is_opacity && !cfg.optimize_color) {
                continue;
            }
            m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
            v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            let lo = if is_opacity { ALPHA_MIN } else { 0.0 };
            params[i] = params[i].clamp(lo, 1.0);
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(FieldError::Divergence { iteration: iter, loss: f64::NAN });
        }
    }
    for (g, p) in work.gaussians.iter_mut().zip(params.chunks_exact(4)) {
        g.color = [p[0] as f32, p[1] as f32, p[2] as f32];
        g.opacity = p[3] as f32;
    }
    Ok((work, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, SceneMetadata};

    fn scene(color: [f32; 3]) -> (Scene, Camera) {
        let g = Gaussian::isotropic([0.0, 0.0, 2.0], 0.5, color, 0.9, vec![]).unwrap();
        let s = Scene::new(vec![g], 0, SceneMetadata::default()).unwrap();
        (s, Camera::identity_pose(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap())
    }

    fn image_of(s: &Scene, c: &Camera) -> Vec<f64> {
        render(s, c, &RenderOptions::default()).unwrap().color
    }

    #[test]
    fn skip_is_identity() {
        let (s, c) = scene([0.1, 0.2, 0.3]);
        let cfg = RgbStageConfig { skip: true, ..Default::default() };
        let (out, r) = rgb_stage(&s, &[c], &[vec![0.0; 192]], &cfg).unwrap();
        assert_eq!(out, s);
        assert!(r.curve.is_empty());
    }

    #[test]
    fn ground_truth_scene_stays_put() {
        let (s, c) = scene([0.1, 0.2, 0.3]);
        let img = image_of(&s, &c);
        let (out, r) = rgb_stage(&s, &[c], &[img], &RgbStageConfig { iterations: 20, ..Default::default() }).unwrap();
        assert!(r.curve.iter().all(|&e| e < 1e-6));
        for (a, b) in out.gaussians[0].color.iter().zip(s.gaussians[0].color) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_splat_color_converges() {
        let (truth, c) = scene([0.8, 0.3, 0.1]);
        let img = image_of(&truth, &c);
        let (start, _) = scene([0.5, 0.5, 0.5]);
        let cfg = RgbStageConfig { iterations: 400, lr: 0.01, optimize_opacity: false, ..Default::default() };
        let (out, r) = rgb_stage(&start, &[c], &[img], &cfg).unwrap();
        assert!(r.curve.last().unwrap() < &r.curve[0]);
        for (a, b) in out.gaussians[0].color.iter().zip(truth.gaussians[0].color) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn geometry_is_untouched() {
        let (truth, c) = scene([0.8, 0.3, 0.1]);
        let img = image_of(&truth, &c);
        let (start, _) = scene([0.5, 0.5, 0.5]);
        let (out, _) = rgb_stage(&start, &[c], &[img], &RgbStageConfig { iterations: 10, ..Default::default() }).unwrap();
        assert_eq!(out.gaussians[0].mu, start.gaussians[0].mu);
        assert_eq!(out.gaussians[0].scale, start.gaussians[0].scale);
        assert_eq!(out.gaussians[0].rotation, start.gaussians[0].rotation);
    }
}

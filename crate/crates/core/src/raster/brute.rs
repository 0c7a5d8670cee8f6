use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::project::project_unculled;
use super::{Contribution, Contributions, FeatureMap, Projected2D, RenderError, RenderOutput, ALPHA_MIN, COV2D_DILATION, TRANSMITTANCE_MIN};
use crate::scene::{Camera, Scene};

/// Reference renderer: every pixel walks the full, globally depth-sorted
/// splat list with no tiles and no footprint culling.
pub fn render_bruteforce(scene: &Scene, cam: &Camera) -> Result<RenderOutput, RenderError> {
    if scene.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    cam.validate()?;
    let mut splats: Vec<(Projected2D, Matrix2<f64>)> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_unculled(g, i, cam))
        .filter_map(|p| {
            let inv = (p.cov2d + Matrix2::identity() * COV2D_DILATION).try_inverse()?;
            Some((p, inv))
        })
        .collect();
    splats.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.gaussian_index.cmp(&b.0.gaussian_index)));

    let (w, h, d) = (cam.width, cam.height, scene.latent_dim);
    let rows: Vec<Vec<(Vec<f64>, Vec<Contribution>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let v = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    // [r, g, b, alpha_sum, feature...]
                    let mut px = vec![0.0; 4 + d];
                    let mut contrib = Vec::new();
                    let mut t = 1.0;
                    for (p, inv) in &splats {
                        let delta = v - Vector2::new(p.mean2d[0], p.mean2d[1]);
                        let alpha = p.opacity * (-0.5 * (delta.transpose() * inv * delta)[(0, 0)]).exp();
                        if alpha < ALPHA_MIN {
                            continue;
                        }
                        let weight = alpha * t;
                        let g = &scene.gaussians[p.gaussian_index];
                        for (o, &c) in px[..3].iter_mut().zip(&g.color) {
                            *o += weight * c as f64;
                        }
                        px[3] += weight;
                        for (f, &z) in px[4..].iter_mut().zip(&g.latent) {
                            *f += weight * z as f64;
                        }
                        contrib.push(Contribution { gaussian: p.gaussian_index as u32, weight });
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    (px, contrib)
                })
                .collect()
        })
        .collect();

    let mut out = RenderOutput {
        width: w,
        height: h,
        color: Vec::with_capacity(w * h * 3),
        feature: FeatureMap { width: w, height: h, channels: d, data: Vec::with_capacity(w * h * d) },
        alpha_sum: Vec::with_capacity(w * h),
        contrib: Contributions { offsets: vec![0], entries: Vec::new() },
    };
    for (px, contrib) in rows.into_iter().flatten() {
        out.color.extend_from_slice(&px[..3]);
        out.alpha_sum.push(px[3]);
        out.feature.data.extend_from_slice(&px[4..]);
        out.contrib.entries.extend(contrib);
        out.contrib.offsets.push(out.contrib.entries.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, SceneMetadata};
    use approx::assert_relative_eq;

    #[test]
    fn single_splat_follows_closed_form_falloff() {
        let cam = Camera::identity_pose(30.0, 30.0, 8.0, 8.0, 16, 16).unwrap();
        let g = Gaussian::isotropic([0.0, 0.0, 3.0], 0.2, [1.0; 3], 0.8, vec![1.0]).unwrap();
        let scene = Scene::new(vec![g], 1, SceneMetadata::default()).unwrap();
        let out = render_bruteforce(&scene, &cam).unwrap();
        // cov2d = (f s / z)² I plus dilation
        let var = (30.0f64 * 0.2f32 as f64 / 3.0).powi(2) + COV2D_DILATION;
        for (x, y) in [(8usize, 8usize), (10, 8), (3, 12)] {
            let (dx, dy) = (x as f64 + 0.5 - 8.0, y as f64 + 0.5 - 8.0);
            let expected = 0.8f32 as f64 * (-0.5 * (dx * dx + dy * dy) / var).exp();
            assert_relative_eq!(out.alpha_sum[y * 16 + x], expected, max_relative = 1e-9);
            assert_relative_eq!(out.feature.pixel(y * 16 + x)[0], expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn empty_pixel_is_zero() {
        let cam = Camera::identity_pose(30.0, 30.0, 8.0, 8.0, 16, 16).unwrap();
        let g = Gaussian::isotropic([0.0, 0.0, 3.0], 0.01, [1.0; 3], 1.0, vec![2.0]).unwrap();
        let out = render_bruteforce(&Scene::new(vec![g], 1, SceneMetadata::default()).unwrap(), &cam).unwrap();
        assert_eq!(out.alpha_sum[0], 0.0);
        assert_eq!(out.feature.pixel(0), &[0.0]);
    }
}

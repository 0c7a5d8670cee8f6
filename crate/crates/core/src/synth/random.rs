use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SynthError;
use crate::scene::{Camera, Gaussian, Scene, SceneMetadata};

/// Unstructured splats scattered through the frustum of an identity-pose
/// camera, a few behind it or past the image edge so culling is exercised.
pub fn random_scene(n: usize, latent_dim: usize, width: usize, height: usize, seed: u64) -> Result<(Scene, Camera), SynthError> {
    if width == 0 || height == 0 {
        return Err(SynthError::Params("image must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = width.max(height) as f64;
    let cam = Camera::identity_pose(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)?;
    let (hx, hy) = (0.5 * width as f64 / f, 0.5 * height as f64 / f);
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = if rng.random_bool(0.03) { rng.random_range(-1.0..0.2) } else { rng.random_range(1.0..6.0) };
        let spread = 1.3 * z.abs().max(0.5);
        let mu = [(rng.random_range(-hx..hx) * spread) as f32, (rng.random_range(-hy..hy) * spread) as f32, z as f32];
        let scale: [f32; 3] = std::array::from_fn(|_| (0.01f64 * 30f64.powf(rng.random::<f64>())) as f32);
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let rotation = q.map(|v| (v / qn) as f32);
        let color: [f32; 3] = std::array::from_fn(|_| rng.random::<f32>());
        let opacity = rng.random_range(0.02f32..1.0);
        let latent = (0..latent_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        gaussians.push(Gaussian::new(mu, scale, rotation, color, opacity, latent)?);
    }
    let scene = Scene::new(gaussians, latent_dim, SceneMetadata { name: "random".into(), seed, params: serde_json::Value::Null })?;
    Ok((scene, cam))
}

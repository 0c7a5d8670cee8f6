use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ConceptDictionary, SynthError};
use crate::codec::{cosine, Autoencoder};
use crate::field::{MaskRegion, ViewSupervision};
use crate::query::{BBox, BACKGROUND_ALPHA};
use crate::raster::{render, RenderOptions};
use crate::scene::{load_scene, load_tensor, save_scene, save_tensor, Camera, Gaussian, Scene, SceneMetadata, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_objects: usize,
    pub gaussians_per_object: usize,
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub camera_distance: f64,
    pub elevation_deg: f64,
    /// Minimum radius of the ring objects sit on.
    pub ring_radius: f64,
    pub object_radius: f64,
    /// Every object must cover at least this many mask pixels in every view.
    pub min_mask_pixels: usize,
    pub max_attempts: usize,
    /// Planted concepts are pairwise |cos| ≤ this.
    pub max_concept_cos: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_objects: 3,
            gaussians_per_object: 40,
            n_views: 5,
            width: 96,
            height: 96,
            fov_deg: 50.0,
            camera_distance: 4.0,
            elevation_deg: 55.0,
            ring_radius: 1.1,
            object_radius: 0.5,
            min_mask_pixels: 20,
            max_attempts: 32,
            max_concept_cos: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub scene: Scene,
    /// Gaussian index → object index.
    pub object_of: Vec<u32>,
    /// Object index → dictionary concept id.
    pub object_concepts: Vec<u32>,
    pub concept_labels: Vec<String>,
    /// Object index → unit embedding (f32-representable).
    pub embeddings: Vec<Vec<f64>>,
    pub cameras: Vec<Camera>,
    /// [view][object] → H×W mask.
    pub masks: Vec<Vec<Vec<bool>>>,
    /// [view][object] → inclusive box of the mask.
    pub boxes: Vec<Vec<Option<BBox>>>,
}

impl SyntheticWorld {
    pub fn n_objects(&self) -> usize {
        self.object_concepts.len()
    }

    pub fn concept_of_gaussian(&self, i: usize) -> u32 {
        self.object_concepts[self.object_of[i] as usize]
    }

    /// One level of non-empty object masks per view, labeled with the planted embeddings.
    pub fn supervision(&self) -> Vec<ViewSupervision> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(v, cam)| ViewSupervision {
                view_id: v,
                camera: cam.clone(),
                levels: vec![self.masks[v]
                    .iter()
                    .zip(&self.embeddings)
                    .filter(|(m, _)| m.iter().any(|&b| b))
                    .map(|(m, e)| MaskRegion { mask: m.clone(), embedding: e.clone() })
                    .collect()],
            })
            .collect()
    }

    /// Scene whose latents are the encoded planted embedding of each splat's object.
    pub fn oracle_scene(&self, ae: &Autoencoder) -> Result<Scene, SynthError> {
        let k = ae.latent_dim();
        let codes: Vec<Vec<f64>> = self.embeddings.iter().map(|e| ae.encode(e)).collect::<Result<_, _>>()?;
        let mut s = self.scene.with_latent_dim(k);
        let flat: Vec<f64> = self.object_of.iter().flat_map(|&o| codes[o as usize].iter().copied()).collect();
        s.set_latents(&flat);
        Ok(s)
    }

    /// H×W×3 ground-truth RGB for view `v`.
    pub fn render_rgb(&self, v: usize) -> Result<Vec<f64>, SynthError> {
        let opts = RenderOptions { record_contrib: false, ..Default::default() };
        Ok(render(&self.scene, &self.cameras[v], &opts)?.color)
    }
}

fn pick_concepts(dict: &ConceptDictionary, n: usize, max_cos: f64, rng: &mut ChaCha8Rng) -> Result<Vec<u32>, SynthError> {
    let mut order: Vec<usize> = (0..dict.len()).collect();
    order.shuffle(rng);
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    for i in order {
        let c = dict.concepts.row(i);
        if picked.iter().all(|&j| c.dot(&dict.concepts.row(j)).abs() <= max_cos) {
            picked.push(i);
            if picked.len() == n {
                return Ok(picked.into_iter().map(|i| i as u32).collect());
            }
        }
    }
    Err(SynthError::Params(format!("dictionary has no {n} concepts with pairwise |cos| ≤ {max_cos}")))
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|x| (x / n) as f32);
        }
    }
}

/// Splats, their owning object, and cameras.
type Layout = (Vec<Gaussian>, Vec<u32>, Vec<Camera>);

fn layout(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Layout, SynthError> {
    let n = cfg.n_objects;
    let ring = if n == 1 { 0.0 } else { cfg.ring_radius.max(0.75 * cfg.object_radius * 2.0 / (2.0 * (PI / n as f64).sin())) };
    let theta0 = rng.random_range(0.0..2.0 * PI);
    let mut gaussians = Vec::with_capacity(n * cfg.gaussians_per_object);
    let mut object_of = Vec::with_capacity(gaussians.capacity());
    for o in 0..n {
        let a = theta0 + 2.0 * PI * o as f64 / n as f64;
        let center = [ring * a.cos(), 0.0, ring * a.sin()];
        let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.9));
        for _ in 0..cfg.gaussians_per_object {
            let scale: [f32; 3] = std::array::from_fn(|_| (cfg.object_radius * rng.random_range(0.16..0.32)) as f32);
            // offsets stay inside the object ball minus the largest axis
            let reach = cfg.object_radius - scale.iter().fold(0.0f32, |m, &s| m.max(s)) as f64;
            let off = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break p.map(|x| x * reach);
                }
            };
            let mu = std::array::from_fn(|i| (center[i] + off[i]) as f32);
            let color = base.map(|c| (c + rng.random_range(-0.05..0.05)) as f32);
            let opacity = rng.random_range(0.7..1.0) as f32;
            gaussians.push(Gaussian::new(mu, scale, random_quat(rng), color, opacity, vec![])?);
            object_of.push(o as u32);
        }
    }
    let phi0 = rng.random_range(0.0..2.0 * PI);
    let elev = cfg.elevation_deg.to_radians();
    let cameras = (0..cfg.n_views)
        .map(|v| {
            let phi = phi0 + 2.0 * PI * v as f64 / cfg.n_views as f64;
            let eye = Vector3::new(elev.cos() * phi.cos(), elev.sin(), elev.cos() * phi.sin()) * cfg.camera_distance;
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), cfg.fov_deg.to_radians(), cfg.width, cfg.height)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((gaussians, object_of, cameras))
}

/// Per view and object: covered pixels (alpha ≥ the query background cutoff)
/// where that object holds more than half of the composited weight.
fn derive_masks(scene: &Scene, object_of: &[u32], n_objects: usize, cameras: &[Camera]) -> Result<Vec<Vec<Vec<bool>>>, SynthError> {
    let opts = RenderOptions { tile_size: 16, record_contrib: true };
    cameras
        .iter()
        .map(|cam| {
            let out = render(scene, cam, &opts)?;
            let mut masks = vec![vec![false; cam.pixel_count()]; n_objects];
            let mut share = vec![0.0; n_objects];
            for p in 0..cam.pixel_count() {
                share.iter_mut().for_each(|s| *s = 0.0);
                for c in out.contrib.pixel(p) {
                    share[object_of[c.gaussian as usize] as usize] += c.weight;
                }
                let total = out.alpha_sum[p];
                if total < BACKGROUND_ALPHA {
                    continue;
                }
                for (m, &s) in masks.iter_mut().zip(&share) {
                    m[p] = s > 0.5 * total;
                }
            }
            Ok(masks)
        })
        .collect()
}

pub fn gen_world(cfg: &WorldConfig, dict: &ConceptDictionary, seed: u64) -> Result<SyntheticWorld, SynthError> {
    if cfg.n_objects == 0 || cfg.gaussians_per_object == 0 || cfg.n_views == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(SynthError::Params("objects, splats per object, views and image size must be ≥ 1".into()));
    }
    if dict.is_empty() {
        return Err(SynthError::Params("empty concept dictionary".into()));
    }
    if !(cfg.fov_deg > 0.0 && cfg.fov_deg < 180.0 && cfg.object_radius > 0.0 && cfg.camera_distance > 0.0) {
        return Err(SynthError::Params("fov, object radius and camera distance must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let object_concepts = pick_concepts(dict, cfg.n_objects, cfg.max_concept_cos, &mut rng)?;
    let embeddings: Vec<Vec<f64>> = object_concepts.iter().map(|&c| dict.concepts.row(c as usize).iter().map(|&x| x as f32 as f64).collect()).collect();
    debug_assert!(embeddings.iter().all(|e| (cosine(e, e) - 1.0).abs() < 1e-6));

    for _ in 0..cfg.max_attempts {
        let (gaussians, object_of, cameras) = layout(cfg, &mut rng)?;
        let scene = Scene::new(gaussians, 0, SceneMetadata { name: "synthetic world".into(), seed, params: serde_json::to_value(cfg)? })?;
        let masks = derive_masks(&scene, &object_of, cfg.n_objects, &cameras)?;
        let visible = masks.iter().all(|view| view.iter().all(|m| m.iter().filter(|&&b| b).count() >= cfg.min_mask_pixels));
        if !visible {
            continue;
        }
        let boxes = masks.iter().map(|view| view.iter().map(|m| BBox::of_mask(m, cfg.width)).collect()).collect();
        return Ok(SyntheticWorld {
            config: cfg.clone(),
            seed,
            scene,
            object_of,
            concept_labels: object_concepts.iter().map(|&c| dict.labels[c as usize].clone()).collect(),
            object_concepts,
            embeddings,
            cameras,
            masks,
            boxes,
        });
    }
    Err(SynthError::InfeasibleLayout(cfg.max_attempts))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    config: WorldConfig,
    seed: u64,
    cameras: Vec<Camera>,
    object_of: Vec<u32>,
    object_concepts: Vec<u32>,
    concept_labels: Vec<String>,
    boxes: Vec<Vec<Option<BBox>>>,
}

/// Writes scene.gspl, masks.gten (V×O×H×W), concepts.gten (O×D) and manifest.json into `dir`.
pub fn save_world(world: &SyntheticWorld, dir: impl AsRef<Path>, provenance: Option<&str>) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_scene(&world.scene, dir.join("scene.gspl"))?;
    let (v, o) = (world.cameras.len(), world.n_objects());
    let (w, h) = (world.config.width, world.config.height);
    let flat: Vec<bool> = world.masks.iter().flatten().flatten().copied().collect();
    save_tensor(&Tensor::from_bools(vec![v, o, h, w], &flat)?, dir.join("masks.gten"))?;
    let d = world.embeddings.first().map_or(0, Vec::len);
    let emb: Vec<f64> = world.embeddings.iter().flatten().copied().collect();
    save_tensor(&Tensor::from_f64(vec![o, d], &emb)?, dir.join("concepts.gten"))?;
    let manifest = Manifest {
        provenance: provenance.map(str::to_string),
        config: world.config.clone(),
        seed: world.seed,
        cameras: world.cameras.clone(),
        object_of: world.object_of.clone(),
        object_concepts: world.object_concepts.clone(),
        concept_labels: world.concept_labels.clone(),
        boxes: world.boxes.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_world(dir: impl AsRef<Path>) -> Result<SyntheticWorld, SynthError> {
    let dir = dir.as_ref();
    let m: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let scene = load_scene(dir.join("scene.gspl"))?;
    let (v, o) = (m.cameras.len(), m.object_concepts.len());
    let (w, h) = (m.config.width, m.config.height);
    if m.object_of.len() != scene.len() || m.object_of.iter().any(|&x| x as usize >= o) {
        return Err(SynthError::Params("manifest object assignment does not match the scene".into()));
    }
    let masks_t = load_tensor(dir.join("masks.gten"))?;
    masks_t.expect_dims(&[v, o, h, w])?;
    let masks = masks_t
        .data
        .chunks(h * w)
        .map(|m| m.iter().map(|&x| x != 0.0).collect::<Vec<bool>>())
        .collect::<Vec<_>>()
        .chunks(o.max(1))
        .map(<[Vec<bool>]>::to_vec)
        .collect();
    let emb = load_tensor(dir.join("concepts.gten"))?;
    let d = emb.dims.get(1).copied().unwrap_or(0);
    emb.expect_dims(&[o, d])?;
    let embeddings = emb.to_f64().chunks(d.max(1)).map(<[f64]>::to_vec).collect();
    Ok(SyntheticWorld {
        config: m.config,
        seed: m.seed,
        scene,
        object_of: m.object_of,
        object_concepts: m.object_concepts,
        concept_labels: m.concept_labels,
        embeddings,
        cameras: m.cameras,
        masks,
        boxes: m.boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dictionary, DictionaryConfig};

    fn dict() -> ConceptDictionary {
        gen_dictionary(&DictionaryConfig { concepts: 32, dim: 64, intrinsic_dim: 12, noise: 0.05 }, 1).unwrap()
    }

    fn small(n_objects: usize, n_views: usize) -> WorldConfig {
        WorldConfig { n_objects, n_views, width: 48, height: 48, gaussians_per_object: 20, min_mask_pixels: 10, ..Default::default() }
    }

    #[test]
    fn same_seed_same_world() {
        let d = dict();
        let a = gen_world(&small(3, 2), &d, 5).unwrap();
        assert_eq!(a, gen_world(&small(3, 2), &d, 5).unwrap());
        assert_ne!(a.scene, gen_world(&small(3, 2), &d, 6).unwrap().scene);
    }

    #[test]
    fn masks_are_disjoint_and_boxed() {
        let w = gen_world(&small(3, 3), &dict(), 11).unwrap();
        for (view, boxes) in w.masks.iter().zip(&w.boxes) {
            for p in 0..48 * 48 {
                assert!(view.iter().filter(|m| m[p]).count() <= 1);
            }
            for (m, b) in view.iter().zip(boxes) {
                let b = b.expect("object visible");
                assert!(m.iter().enumerate().filter(|(_, &x)| x).all(|(p, _)| b.contains((p % 48, p / 48))));
            }
        }
        for i in 0..3 {
            for j in 0..i {
                assert!(cosine(&w.embeddings[i], &w.embeddings[j]).abs() <= 0.3 + 1e-6);
            }
        }
    }

    #[test]
    fn single_object_mask_is_alpha_footprint() {
        let w = gen_world(&small(1, 1), &dict(), 2).unwrap();
        let out = render(&w.scene, &w.cameras[0], &RenderOptions::default()).unwrap();
        let footprint: Vec<bool> = out.alpha_sum.iter().map(|&a| a >= BACKGROUND_ALPHA).collect();
        assert_eq!(w.masks[0][0], footprint);
    }

    #[test]
    fn every_splat_has_one_object() {
        let w = gen_world(&small(2, 1), &dict(), 4).unwrap();
        assert_eq!(w.object_of.len(), w.scene.len());
        assert_eq!(w.object_of.iter().filter(|&&o| o == 1).count(), 20);
        assert_eq!(w.concept_of_gaussian(0), w.object_concepts[0]);
    }

    #[test]
    fn save_load_round_trip() {
        let w = gen_world(&small(2, 2), &dict(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_world(&w, dir.path(), Some("cfg")).unwrap();
        assert_eq!(load_world(dir.path()).unwrap(), w);
    }

    #[test]
    fn impossible_visibility_is_reported() {
        let cfg = WorldConfig { min_mask_pixels: 48 * 48 + 1, max_attempts: 2, ..small(1, 1) };
        assert!(matches!(gen_world(&cfg, &dict(), 0), Err(SynthError::InfeasibleLayout(2))));
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{config_hash, provenance_line, HarnessError, StageExt};
use crate::codec::Autoencoder;
use crate::field::{build_targets, rgb_stage, train_language_field, FieldReport, FieldTrainConfig, RgbStageConfig};
use crate::query::{decode_map, iou, pca_visualize, Query, QueryResult, BACKGROUND_ALPHA, DEFAULT_THRESHOLD};
use crate::raster::{render, write_pgm, write_ppm, RenderOptions};
use crate::scene::{save_tensor, Scene, Tensor};
use crate::synth::SyntheticWorld;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub field: FieldTrainConfig,
    /// Photometric stage before the language stage; skipped when `None`.
    pub rgb: Option<RgbStageConfig>,
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { field: FieldTrainConfig::default(), rgb: None, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub view: usize,
    pub object: usize,
    pub concept: String,
    pub iou: f64,
    pub loc_point: (usize, usize),
    pub loc_hit: bool,
    pub score_at_loc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub provenance: String,
    pub views: usize,
    pub objects: usize,
    pub per_view_object: Vec<ObjectMetrics>,
    /// Per object, IoU averaged over views.
    pub per_object_iou: Vec<f64>,
    pub mean_iou: f64,
    pub localization_accuracy: f64,
    pub final_field_loss: Option<f64>,
    /// Every view's RGB render is bit-identical before and after language training.
    pub rgb_unchanged: Option<bool>,
    pub ae_checksum: String,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub metrics: PipelineMetrics,
    pub scene: Scene,
    /// [view][object].
    pub results: Vec<Vec<QueryResult>>,
    /// Per view, H×W×3 PCA false color of the rendered latents.
    pub pca: Vec<Vec<f64>>,
    pub field_report: FieldReport,
}

fn rgb_renders(scene: &Scene, world: &SyntheticWorld, tile_size: usize) -> Result<Vec<Vec<f64>>, HarnessError> {
    let opts = RenderOptions { tile_size, record_contrib: false };
    world.cameras.iter().map(|c| Ok(render(scene, c, &opts)?.color)).collect()
}

/// Renders every view of a latent-carrying scene and queries each planted object's embedding.
pub fn evaluate(
    world: &SyntheticWorld,
    scene: &Scene,
    ae: &Autoencoder,
    threshold: f64,
    tile_size: usize,
    provenance: &str,
) -> Result<PipelineOutput, HarnessError> {
    if scene.latent_dim != ae.latent_dim() {
        return Err(HarnessError::Config(format!("scene latents are {}-wide, autoencoder expects {}", scene.latent_dim, ae.latent_dim())));
    }
    let queries: Vec<Query> = world.embeddings.iter().zip(&world.concept_labels).map(|(e, l)| Query::new(l.clone(), e.clone())).collect::<Result<_, _>>()?;
    let opts = RenderOptions { tile_size, record_contrib: false };
    let (mut results, mut pca, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    let mut hits = 0usize;
    let mut boxed = 0usize;
    let mut per_object = vec![0.0; queries.len()];
    for (v, cam) in world.cameras.iter().enumerate() {
        let out = render(scene, cam, &opts)?;
        let valid: Vec<bool> = out.alpha_sum.iter().map(|&a| a >= BACKGROUND_ALPHA).collect();
        pca.push(pca_visualize(&out.feature, &valid)?);
        let decoded = decode_map(&out.feature, &out.alpha_sum, ae)?;
        let mut view = Vec::new();
        for (o, q) in queries.iter().enumerate() {
            let r = decoded.query(q, threshold)?;
            let score = iou(&r.mask, &world.masks[v][o])?;
            per_object[o] += score / world.cameras.len() as f64;
            let hit = world.boxes[v][o].is_some_and(|b| b.contains(r.loc_point));
            if world.boxes[v][o].is_some() {
                boxed += 1;
                hits += hit as usize;
            }
            rows.push(ObjectMetrics {
                view: v,
                object: o,
                concept: q.id.clone(),
                iou: score,
                loc_point: r.loc_point,
                loc_hit: hit,
                score_at_loc: r.score_at_loc,
            });
            view.push(r);
        }
        results.push(view);
    }
    let metrics = PipelineMetrics {
        provenance: provenance.to_string(),
        views: world.cameras.len(),
        objects: queries.len(),
        per_view_object: rows,
        mean_iou: per_object.iter().sum::<f64>() / per_object.len().max(1) as f64,
        per_object_iou: per_object,
        localization_accuracy: if boxed == 0 { 0.0 } else { hits as f64 / boxed as f64 },
        final_field_loss: None,
        rgb_unchanged: None,
        ae_checksum: ae.checksum(),
    };
    Ok(PipelineOutput { metrics, scene: scene.clone(), results, pca, field_report: FieldReport::default() })
}

#[derive(Serialize)]
struct Hashed<'a> {
    config: &'a PipelineConfig,
    world_seed: u64,
    world_config: &'a crate::synth::WorldConfig,
    ae: String,
}

/// Optional RGB stage, target encoding, language-field fit, then per-object queries.
pub fn run_pipeline(world: &SyntheticWorld, ae: &Autoencoder, cfg: &PipelineConfig) -> Result<PipelineOutput, HarnessError> {
    cfg.field.validate().stage("config")?;
    if cfg.field.levels != 1 {
        return Err(HarnessError::Config("synthetic worlds supervise a single level".into()));
    }
    let hash = config_hash(&Hashed { config: cfg, world_seed: world.seed, world_config: &world.config, ae: ae.checksum() });
    let tile = cfg.field.tile_size;
    let base = match &cfg.rgb {
        Some(rgb) => {
            let images = (0..world.cameras.len()).map(|v| world.render_rgb(v)).collect::<Result<Vec<_>, _>>().stage("rgb")?;
            rgb_stage(&world.scene, &world.cameras, &images, rgb).stage("rgb")?.0
        }
        None => world.scene.clone(),
    };
    let before = rgb_renders(&base, world, tile).stage("render")?;
    let targets = build_targets(&world.supervision(), ae).stage("targets")?;
    let start = base.with_latent_dim(ae.latent_dim());
    let (trained, report) = train_language_field(&start, &world.cameras, &targets, &cfg.field).stage("field")?;
    let after = rgb_renders(&trained, world, tile).stage("render")?;
    let same = before.iter().zip(&after).all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let mut out = evaluate(world, &trained, ae, cfg.threshold, tile, &provenance_line(&hash)).stage("query")?;
    out.metrics.final_field_loss = report.curve.last().map(|r| r.total);
    out.metrics.rgb_unchanged = Some(same);
    out.field_report = report;
    Ok(out)
}

fn relevancy_rgb(r: &[f64]) -> Vec<f64> {
    r.iter().flat_map(|&v| [(v + 1.0) / 2.0; 3]).collect()
}

/// metrics.json, and per view: pca_v{v}.ppm; per (view, object): relevancy GTEN + PPM and mask PGM.
pub fn write_query_outputs(out: &PipelineOutput, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let prov = out.metrics.provenance.as_str();
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&out.metrics)? + "\n")?;
    for (v, view) in out.results.iter().enumerate() {
        let Some(first) = view.first() else { continue };
        let (w, h) = (first.width, first.height);
        fs::write(dir.join(format!("pca_v{v}.ppm")), write_ppm(w, h, &out.pca[v], Some(prov)))?;
        for (o, r) in view.iter().enumerate() {
            save_tensor(&Tensor::from_f64(vec![h, w], &r.relevancy)?, dir.join(format!("relevancy_v{v}_o{o}.gten")))?;
            fs::write(dir.join(format!("relevancy_v{v}_o{o}.ppm")), write_ppm(w, h, &relevancy_rgb(&r.relevancy), Some(prov)))?;
            fs::write(dir.join(format!("mask_v{v}_o{o}.pgm")), write_pgm(w, h, &r.mask, Some(prov)))?;
        }
    }
    Ok(())
}

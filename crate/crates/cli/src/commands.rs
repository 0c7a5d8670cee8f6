use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gensplat_core::codec::{load_autoencoder, load_corpus, save_autoencoder, save_corpus, train_autoencoder};
use gensplat_core::field::{build_targets, rgb_stage, train_language_field, FieldTrainConfig, RgbStageConfig};
use gensplat_core::harness::{evaluate, run_ablation, run_efficiency, write_query_outputs, AblationConfig, EfficiencyConfig};
use gensplat_core::query::{pca_visualize, BACKGROUND_ALPHA, DEFAULT_THRESHOLD};
use gensplat_core::raster::{write_pgm, write_ppm};
use gensplat_core::scene::{load_scene, save_scene, save_tensor};
use gensplat_core::synth::{gen_corpus, gen_dictionary, gen_world, load_dictionary, load_world, save_dictionary, save_world, DictionaryConfig, WorldConfig};
use gensplat_core::{render, HarnessError, RenderOptions, Scene, Tensor, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{digest_files, provenance, with_sidecar, world_files};

fn json_file(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn create_parent(file: &Path) -> Result<(), HarnessError> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

// ---- synth-gen ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthGenConfig {
    pub dictionary: DictionaryConfig,
    pub world: WorldConfig,
    /// Worlds drawn from the one dictionary.
    pub worlds: usize,
    pub seed: u64,
}

impl Default for SynthGenConfig {
    fn default() -> Self {
        Self { dictionary: DictionaryConfig::default(), world: WorldConfig::default(), worlds: 1, seed: 0 }
    }
}

/// dictionary.gten (+ .json) and world_{i}/ under `out`.
pub fn synth_gen(cfg: &SynthGenConfig, out: &Path) -> Result<String, HarnessError> {
    if cfg.worlds == 0 {
        return Err(HarnessError::Config("worlds must be ≥ 1".into()));
    }
    let prov = provenance("synth-gen", cfg, &[]);
    create_dir(out)?;
    let dict_path = out.join("dictionary.gten");
    let dict = gen_dictionary(&cfg.dictionary, gensplat_core::harness::derive_seed(cfg.seed, 0))?;
    save_dictionary(&dict, &dict_path, Some(&prov))?;
    // worlds see the dictionary exactly as later commands will load it
    let dict = load_dictionary(&dict_path)?;
    for i in 0..cfg.worlds {
        let world = gen_world(&cfg.world, &dict, gensplat_core::harness::derive_seed(cfg.seed, 1 + i as u64))?;
        save_world(&world, out.join(format!("world_{i}")), Some(&prov))?;
    }
    Ok(format!("{} concepts, {} world(s) in {}", dict.len(), cfg.worlds, out.display()))
}

// ---- gen-corpus ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenCorpusConfig {
    pub samples_per_concept: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for GenCorpusConfig {
    fn default() -> Self {
        Self { samples_per_concept: 10, jitter: 0.2, seed: 0 }
    }
}

pub fn gen_corpus_cmd(cfg: &GenCorpusConfig, dictionary: &Path, out: &Path) -> Result<String, HarnessError> {
    let prov = provenance("gen-corpus", cfg, &[("dictionary", digest_files(&with_sidecar(dictionary))?)]);
    let dict = load_dictionary(dictionary)?;
    let corpus = gen_corpus(&dict, cfg.samples_per_concept, cfg.jitter, cfg.seed)?;
    create_parent(out)?;
    save_corpus(&corpus, out, Some(&prov))?;
    Ok(format!("{} rows of dim {} in {}", corpus.len(), corpus.dim(), out.display()))
}

// ---- train-ae ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainAeConfig {
    pub latent_dim: usize,
    pub train: TrainConfig,
}

impl Default for TrainAeConfig {
    fn default() -> Self {
        Self { latent_dim: 16, train: TrainConfig { epochs: 60, ..TrainConfig::default() } }
    }
}

/// Sidecar path for wall-clock numbers, kept out of the deterministic outputs.
pub fn timing_path(path: &Path) -> PathBuf {
    path.with_extension("timing.json")
}

/// `out` holds the weights; `out.json` the report, `out.timing.json` the wall-clock.
pub fn train_ae(cfg: &TrainAeConfig, corpus_path: &Path, out: &Path) -> Result<String, HarnessError> {
    let prov = provenance("train-ae", cfg, &[("corpus", digest_files(&with_sidecar(corpus_path))?)]);
    let corpus = load_corpus(corpus_path)?;
    let t0 = Instant::now();
    let (ae, report) = train_autoencoder(&corpus, cfg.latent_dim, &cfg.train)?;
    let secs = t0.elapsed().as_secs_f64();
    create_parent(out)?;
    save_autoencoder(&ae, out)?;
    let summary = json!({
        "provenance": prov,
        "input_dim": ae.input_dim(),
        "latent_dim": ae.latent_dim(),
        "parameters": ae.parameter_count(),
        "checksum": ae.checksum(),
        "report": report,
    });
    json_file(&out.with_extension("json"), &summary)?;
    json_file(&timing_path(out), &json!({ "provenance": prov, "train_seconds": secs }))?;
    Ok(format!("k={} val cosine {:.4} val mse {:.3e} after {} steps", cfg.latent_dim, report.val_cosine, report.val_mse, report.gradient_steps))
}

// ---- train-field ----

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFieldConfig {
    pub field: FieldTrainConfig,
    /// Photometric stage run first; skipped when absent.
    pub rgb: Option<RgbStageConfig>,
}

fn rgb_bits(scene: &Scene, cameras: &[gensplat_core::Camera], tile: usize) -> Result<Vec<Vec<u64>>, HarnessError> {
    let opts = RenderOptions { tile_size: tile, record_contrib: false };
    cameras.iter().map(|c| Ok(render(scene, c, &opts)?.color.iter().map(|v| v.to_bits()).collect())).collect()
}

/// scene.gspl, field_log.jsonl and field.json under `out`.
pub fn train_field(cfg: &TrainFieldConfig, world_dir: &Path, ae_path: &Path, out: &Path) -> Result<String, HarnessError> {
    let prov = provenance("train-field", cfg, &[("world", digest_files(&world_files(world_dir))?), ("autoencoder", digest_files(&[ae_path.to_path_buf()])?)]);
    let world = load_world(world_dir)?;
    let ae = load_autoencoder(ae_path)?;
    let mut scene = world.scene.clone();
    let mut rgb_log = None;
    if let Some(rgb) = &cfg.rgb {
        let images: Vec<Vec<f64>> = (0..world.cameras.len()).map(|v| world.render_rgb(v)).collect::<Result<_, _>>()?;
        let (s, rep) = rgb_stage(&scene, &world.cameras, &images, rgb).map_err(|e| HarnessError::Stage("rgb", Box::new(e.into())))?;
        scene = s;
        rgb_log = Some(rep);
    }
    let targets = build_targets(&world.supervision(), &ae).map_err(|e| HarnessError::Stage("targets", Box::new(e.into())))?;
    let start = scene.with_latent_dim(ae.latent_dim() * cfg.field.levels);
    let (mut trained, report) =
        train_language_field(&start, &world.cameras, &targets, &cfg.field).map_err(|e| HarnessError::Stage("field", Box::new(e.into())))?;
    let unchanged = rgb_bits(&start, &world.cameras, cfg.field.tile_size)? == rgb_bits(&trained, &world.cameras, cfg.field.tile_size)?;
    trained.metadata.name = "language-field".into();
    trained.metadata.params = json!({ "provenance": prov });
    create_dir(out)?;
    save_scene(&trained, out.join("scene.gspl"))?;
    let mut log = serde_json::to_string(&json!({ "provenance": prov }))? + "\n";
    log += &report.to_jsonl();
    fs::write(out.join("field_log.jsonl"), log)?;
    let final_loss = report.curve.last().map(|r| r.total);
    json_file(
        &out.join("field.json"),
        &json!({
            "provenance": prov,
            "iterations": report.curve.len(),
            "final_loss": final_loss,
            "rgb_unchanged": unchanged,
            "rgb_stage_iterations": rgb_log.as_ref().map(|r| r.curve.len()),
            "autoencoder_checksum": ae.checksum(),
        }),
    )?;
    if !unchanged {
        return Err(HarnessError::Stage("field", Box::new(HarnessError::Config("language training changed the RGB render".into()))));
    }
    Ok(format!("{} iterations, final loss {:.5}", report.curve.len(), final_loss.unwrap_or(f64::NAN)))
}

// ---- render ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Views to render; all when absent.
    pub views: Option<Vec<usize>>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { tile_size: 16, views: None }
    }
}

/// Per view: rgb_v{v}.ppm, alpha_v{v}.gten and, for latent scenes, latent_v{v}.gten and pca_v{v}.ppm.
pub fn render_cmd(cfg: &RenderConfig, scene_path: &Path, world_dir: &Path, out: &Path) -> Result<String, HarnessError> {
    let prov = provenance("render", cfg, &[("scene", digest_files(&[scene_path.to_path_buf()])?), ("world", digest_files(&world_files(world_dir))?)]);
    let scene = load_scene(scene_path)?;
    let world = load_world(world_dir)?;
    let views = cfg.views.clone().unwrap_or_else(|| (0..world.cameras.len()).collect());
    if let Some(v) = views.iter().find(|&&v| v >= world.cameras.len()) {
        return Err(HarnessError::Config(format!("view {v} out of range; world has {}", world.cameras.len())));
    }
    create_dir(out)?;
    let opts = RenderOptions { tile_size: cfg.tile_size, record_contrib: false };
    let mut files = Vec::new();
    for &v in &views {
        let cam = &world.cameras[v];
        let (w, h) = (cam.width, cam.height);
        let r = render(&scene, cam, &opts)?;
        let name = format!("rgb_v{v}.ppm");
        fs::write(out.join(&name), write_ppm(w, h, &r.color, Some(&prov)))?;
        files.push(name);
        let name = format!("alpha_v{v}.gten");
        save_tensor(&Tensor::from_f64(vec![h, w], &r.alpha_sum)?, out.join(&name))?;
        files.push(name);
        let covered: Vec<bool> = r.alpha_sum.iter().map(|&a| a >= BACKGROUND_ALPHA).collect();
        let name = format!("coverage_v{v}.pgm");
        fs::write(out.join(&name), write_pgm(w, h, &covered, Some(&prov)))?;
        files.push(name);
        if scene.latent_dim > 0 {
            let name = format!("latent_v{v}.gten");
            save_tensor(&Tensor::from_f64(vec![h, w, scene.latent_dim], &r.feature.data)?, out.join(&name))?;
            files.push(name);
            let pca = pca_visualize(&r.feature, &covered)?;
            let name = format!("pca_v{v}.ppm");
            fs::write(out.join(&name), write_ppm(w, h, &pca, Some(&prov)))?;
            files.push(name);
        }
    }
    json_file(&out.join("render.json"), &json!({ "provenance": prov, "views": views, "files": files }))?;
    Ok(format!("{} view(s) in {}", views.len(), out.display()))
}

// ---- query / eval ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub threshold: f64,
    pub tile_size: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, tile_size: 16 }
    }
}

fn query_inputs(scene: &Path, world: &Path, ae: &Path) -> Result<Vec<(&'static str, String)>, HarnessError> {
    Ok(vec![
        ("scene", digest_files(&[scene.to_path_buf()])?),
        ("world", digest_files(&world_files(world))?),
        ("autoencoder", digest_files(&[ae.to_path_buf()])?),
    ])
}

fn run_queries(
    command: &str,
    cfg: &QueryConfig,
    scene_path: &Path,
    world_dir: &Path,
    ae_path: &Path,
) -> Result<gensplat_core::harness::PipelineOutput, HarnessError> {
    let prov = provenance(command, cfg, &query_inputs(scene_path, world_dir, ae_path)?);
    let scene = load_scene(scene_path)?;
    let world = load_world(world_dir)?;
    let ae = load_autoencoder(ae_path)?;
    evaluate(&world, &scene, &ae, cfg.threshold, cfg.tile_size, &prov)
}

fn summary(m: &gensplat_core::harness::PipelineMetrics) -> String {
    format!("mean IoU {:.4}, localization accuracy {:.3} over {} objects × {} views", m.mean_iou, m.localization_accuracy, m.objects, m.views)
}

/// Relevancy maps, masks and PCA images for every planted concept, plus metrics.json.
pub fn query_cmd(cfg: &QueryConfig, scene: &Path, world: &Path, ae: &Path, out: &Path) -> Result<String, HarnessError> {
    let res = run_queries("query", cfg, scene, world, ae)?;
    write_query_outputs(&res, out)?;
    Ok(summary(&res.metrics))
}

pub fn eval_cmd(cfg: &QueryConfig, scene: &Path, world: &Path, ae: &Path, out: &Path) -> Result<String, HarnessError> {
    let res = run_queries("eval", cfg, scene, world, ae)?;
    create_parent(out)?;
    json_file(out, &res.metrics)?;
    Ok(summary(&res.metrics))
}

// ---- ablate ----

/// ablation.csv, ablation_timing.csv and ablation.svg. Returns whether any k diverged.
pub fn ablate(cfg: &AblationConfig, corpus_path: &Path, out: &Path) -> Result<(String, bool), HarnessError> {
    let corpus_id = digest_files(&with_sidecar(corpus_path))?;
    let corpus = load_corpus(corpus_path)?;
    let res = run_ablation(&corpus, &corpus_id, cfg)?;
    create_dir(out)?;
    fs::write(out.join("ablation.csv"), res.to_csv())?;
    fs::write(out.join("ablation_timing.csv"), res.timing_csv())?;
    fs::write(out.join("ablation.svg"), res.to_svg())?;
    let line = res
        .rows
        .iter()
        .map(|r| match &r.error {
            None => format!("k={}: cos {:.4}", r.k, r.val_cosine),
            Some(_) => format!("k={}: diverged", r.k),
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok((line, res.rows.iter().any(|r| r.error.is_some())))
}

// ---- efficiency ----

/// efficiency.json (deterministic) and efficiency_timing.json (wall-clock).
pub fn efficiency(cfg: &EfficiencyConfig, worlds: &[PathBuf], ae_path: &Path, shared_ae_seconds: Option<f64>, out: &Path) -> Result<String, HarnessError> {
    let ws = worlds.iter().map(load_world).collect::<Result<Vec<_>, _>>()?;
    let ae = load_autoencoder(ae_path)?;
    let secs = match shared_ae_seconds {
        Some(s) => Some(s),
        None => read_train_seconds(&timing_path(ae_path)),
    };
    let report = run_efficiency(&ws, &ae, secs, cfg)?;
    create_dir(out)?;
    fs::write(out.join("efficiency.json"), report.to_json())?;
    fs::write(out.join("efficiency_timing.json"), report.timing_json())?;
    let t = report.timing.as_ref().expect("fresh report carries timing");
    Ok(format!(
        "speedup {:.3} ({:.2}s per-scene vs {:.2}s generalized, {} AE steps per scene)",
        t.speedup, t.per_scene_total_seconds, t.generalized_total_seconds, t.ae_steps_per_scene
    ))
}

fn read_train_seconds(path: &Path) -> Option<f64> {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    v.get("train_seconds")?.as_f64()
}

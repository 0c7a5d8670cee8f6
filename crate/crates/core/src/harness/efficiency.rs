use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{config_hash, derive_seed, median, provenance_line, HarnessError, StageExt};
use crate::codec::{fit, Autoencoder, EmbeddingCorpus, Split, TrainConfig};
use crate::field::{build_targets, train_language_field, FieldTrainConfig, TargetFeatureMap};
use crate::synth::SyntheticWorld;

/// Timings below this are treated as unresolved by the clock.
const MIN_RESOLVABLE_SECONDS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfficiencyConfig {
    /// Per-scene autoencoder settings; `max_steps` is overridden by the budget.
    pub ae: TrainConfig,
    /// Per-scene AE gradient steps. `None` calibrates them so one AE fit takes
    /// as long as one field fit.
    pub ae_steps: Option<usize>,
    pub field: FieldTrainConfig,
    pub repetitions: usize,
    /// Cap on rows in each per-scene corpus.
    pub scene_corpus_rows: usize,
    pub seed: u64,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            ae: TrainConfig { epochs: usize::MAX, ..TrainConfig::default() },
            ae_steps: None,
            field: FieldTrainConfig::default(),
            repetitions: 3,
            scene_corpus_rows: 4096,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldTiming {
    pub per_scene_ae_seconds: f64,
    pub per_scene_field_seconds: f64,
    pub generalized_field_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyTiming {
    pub provenance: String,
    pub ae_steps_per_scene: usize,
    pub calibrated: bool,
    pub per_scene_ae_gradient_steps: usize,
    pub worlds: Vec<WorldTiming>,
    /// Σ (AE fit + field fit) with a fresh AE per scene.
    pub per_scene_total_seconds: f64,
    /// Σ field fit with the shared frozen AE.
    pub generalized_total_seconds: f64,
    pub speedup: f64,
    /// One-off cost of the shared AE, when known.
    pub shared_ae_seconds: Option<f64>,
    /// per_scene_total / (shared AE + generalized_total).
    pub amortized_speedup: Option<f64>,
}

/// Deterministic part of the comparison; timing sits in `timing` and is serialized separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub provenance: String,
    pub scenes: usize,
    pub latent_dim: usize,
    pub field_iterations: usize,
    pub repetitions: usize,
    /// Optimizer steps taken on any autoencoder in generalized mode.
    pub generalized_ae_gradient_steps: usize,
    pub shared_ae_checksum_before: String,
    pub shared_ae_checksum_after: String,
    /// Final language loss per world in generalized mode.
    pub generalized_final_loss: Vec<f64>,
    #[serde(skip)]
    pub timing: Option<EfficiencyTiming>,
}

impl EfficiencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct") + "\n"
    }

    pub fn timing_json(&self) -> String {
        serde_json::to_string_pretty(&self.timing).expect("plain struct") + "\n"
    }
}

/// The embeddings a per-scene compressor would see: one row per supervised
/// pixel across views, thinned by a fixed stride to at most `max_rows`.
pub fn scene_corpus(world: &SyntheticWorld, max_rows: usize) -> Result<EmbeddingCorpus, HarnessError> {
    let mut picks: Vec<usize> = Vec::new();
    for view in &world.masks {
        for p in 0..view.first().map_or(0, Vec::len) {
            if let Some(o) = view.iter().position(|m| m[p]) {
                picks.push(o);
            }
        }
    }
    if picks.is_empty() || max_rows == 0 {
        return Err(HarnessError::Config("world has no supervised pixels".into()));
    }
    let stride = picks.len().div_ceil(max_rows);
    let picks: Vec<usize> = picks.into_iter().step_by(stride).collect();
    let d = world.embeddings[0].len();
    let rows = Array2::from_shape_fn((picks.len(), d), |(i, j)| world.embeddings[picks[i]][j]);
    let labels = picks.iter().map(|&o| o as u32).collect();
    Ok(EmbeddingCorpus::from_unnormalized(rows, labels, vec![Split::Train; picks.len()], world.concept_labels.clone())?)
}

fn timed<T>(f: impl FnOnce() -> Result<T, HarnessError>) -> Result<(f64, T), HarnessError> {
    let t0 = Instant::now();
    let out = f()?;
    let s = t0.elapsed().as_secs_f64();
    if !(s >= MIN_RESOLVABLE_SECONDS) {
        return Err(HarnessError::Timing(format!("measured {s} s, below clock resolution")));
    }
    Ok((s, out))
}

#[derive(Serialize)]
struct Hashed<'a> {
    config: &'a EfficiencyConfig,
    worlds: Vec<u64>,
    shared_ae: String,
}

/// Mode A: fresh AE then field per world. Mode B: field only, against the
/// shared frozen AE. Each fit is timed around the optimizer loop, median of
/// `repetitions`.
pub fn run_efficiency(
    worlds: &[SyntheticWorld],
    shared_ae: &Autoencoder,
    shared_ae_seconds: Option<f64>,
    cfg: &EfficiencyConfig,
) -> Result<EfficiencyReport, HarnessError> {
    if worlds.len() < 2 {
        return Err(HarnessError::Config(format!("need at least 2 worlds, got {}", worlds.len())));
    }
    if !shared_ae.is_frozen() {
        return Err(HarnessError::Config("shared autoencoder must be frozen".into()));
    }
    cfg.ae.validate()?;
    cfg.field.validate()?;
    let hash = config_hash(&Hashed { config: cfg, worlds: worlds.iter().map(|w| w.seed).collect(), shared_ae: shared_ae.checksum() });
    let prov = provenance_line(&hash);
    let k = shared_ae.latent_dim();
    let checksum_before = shared_ae.checksum();

    let corpora: Vec<EmbeddingCorpus> = worlds.iter().map(|w| scene_corpus(w, cfg.scene_corpus_rows)).collect::<Result<_, _>>()?;
    let fresh_ae = |i: usize| -> Result<Autoencoder, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        Ok(Autoencoder::standard(corpora[i].dim(), k, &mut rng)?)
    };
    let fit_steps = |i: usize, steps: usize| -> Result<(Autoencoder, usize), HarnessError> {
        let train = TrainConfig { max_steps: Some(steps), seed: derive_seed(cfg.seed, i as u64), ..cfg.ae.clone() };
        let (ae, rep) = fit(fresh_ae(i)?, &corpora[i], &train).stage("autoencoder")?;
        Ok((ae, rep.gradient_steps))
    };
    // the shared AE is only ever borrowed immutably
    let shared_targets: Vec<_> = worlds.iter().map(|w| build_targets(&w.supervision(), shared_ae).stage("targets")).collect::<Result<_, _>>()?;
    let field_fit = |i: usize, targets: &[TargetFeatureMap]| {
        let start = worlds[i].scene.with_latent_dim(k);
        train_language_field(&start, &worlds[i].cameras, targets, &cfg.field).stage("field")
    };

    let (ae_steps, calibrated) = match cfg.ae_steps {
        Some(s) => (s, false),
        None => {
            // probe and field fit alternate so clock drift hits both alike
            const PROBE: usize = 25;
            let (mut probe, mut field) = (Vec::new(), Vec::new());
            for _ in 0..cfg.repetitions.max(1) {
                probe.push(timed(|| fit_steps(0, PROBE))?.0);
                field.push(timed(|| field_fit(0, &shared_targets[0]))?.0);
            }
            (((median(field) / median(probe)) * PROBE as f64).round().max(1.0) as usize, true)
        }
    };

    // modes are interleaved per repetition for the same reason
    let mut per_world = Vec::with_capacity(worlds.len());
    let mut per_scene_steps = 0;
    let mut gen_loss = Vec::with_capacity(worlds.len());
    for i in 0..worlds.len() {
        let (mut gen, mut ae_t, mut field_t) = (Vec::new(), Vec::new(), Vec::new());
        let mut last = None;
        for _ in 0..cfg.repetitions.max(1) {
            let (s, (_, rep)) = timed(|| field_fit(i, &shared_targets[i]))?;
            gen.push(s);
            let (s, (ae, steps)) = timed(|| fit_steps(i, ae_steps))?;
            ae_t.push(s);
            let targets = build_targets(&worlds[i].supervision(), &ae).stage("targets")?;
            field_t.push(timed(|| field_fit(i, &targets))?.0);
            last = Some((rep, steps));
        }
        let (rep, steps) = last.expect("at least one repetition");
        per_scene_steps += steps;
        gen_loss.push(rep.curve.last().map_or(f64::NAN, |r| r.total));
        per_world.push(WorldTiming { per_scene_ae_seconds: median(ae_t), per_scene_field_seconds: median(field_t), generalized_field_seconds: median(gen) });
    }
    let generalized_ae_gradient_steps = 0;
    let gen_seconds: Vec<f64> = per_world.iter().map(|t| t.generalized_field_seconds).collect();
    let per_scene_total: f64 = per_world.iter().map(|t| t.per_scene_ae_seconds + t.per_scene_field_seconds).sum();
    let generalized_total: f64 = gen_seconds.iter().sum();
    let timing = EfficiencyTiming {
        provenance: prov.clone(),
        ae_steps_per_scene: ae_steps,
        calibrated,
        per_scene_ae_gradient_steps: per_scene_steps,
        worlds: per_world,
        per_scene_total_seconds: per_scene_total,
        generalized_total_seconds: generalized_total,
        speedup: per_scene_total / generalized_total,
        shared_ae_seconds,
        amortized_speedup: shared_ae_seconds.map(|s| per_scene_total / (s + generalized_total)),
    };
    Ok(EfficiencyReport {
        provenance: prov,
        scenes: worlds.len(),
        latent_dim: k,
        field_iterations: cfg.field.iterations,
        repetitions: cfg.repetitions,
        generalized_ae_gradient_steps,
        shared_ae_checksum_before: checksum_before,
        shared_ae_checksum_after: shared_ae.checksum(),
        generalized_final_loss: gen_loss,
        timing: Some(timing),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dictionary, gen_world, DictionaryConfig, WorldConfig};

    fn setup() -> (Vec<SyntheticWorld>, Autoencoder) {
        let dict = gen_dictionary(&DictionaryConfig { concepts: 16, dim: 24, intrinsic_dim: 6, noise: 0.05 }, 3).unwrap();
        let wc = WorldConfig { n_objects: 2, n_views: 2, width: 32, height: 32, gaussians_per_object: 12, min_mask_pixels: 5, ..Default::default() };
        let worlds = (0..2).map(|s| gen_world(&wc, &dict, s).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ae = Autoencoder::standard(24, 4, &mut rng).unwrap();
        ae.freeze();
        (worlds, ae)
    }

    fn cfg(ae_steps: Option<usize>) -> EfficiencyConfig {
        EfficiencyConfig {
            ae: TrainConfig { batch_size: 64, epochs: usize::MAX, ..Default::default() },
            ae_steps,
            field: FieldTrainConfig { iterations: 40, ..Default::default() },
            repetitions: 1,
            scene_corpus_rows: 256,
            seed: 0,
        }
    }

    #[test]
    fn generalized_mode_never_trains_the_shared_autoencoder() {
        let (worlds, ae) = setup();
        let r = run_efficiency(&worlds, &ae, Some(0.5), &cfg(Some(5))).unwrap();
        assert_eq!(r.generalized_ae_gradient_steps, 0);
        assert_eq!(r.shared_ae_checksum_before, r.shared_ae_checksum_after);
        let t = r.timing.as_ref().unwrap();
        assert_eq!(t.per_scene_ae_gradient_steps, 10);
        assert!(t.speedup > 1.0);
        assert!(t.amortized_speedup.unwrap() < t.speedup);
        assert!(!r.to_json().contains("seconds"));
    }

    #[test]
    fn deterministic_part_is_stable() {
        let (worlds, ae) = setup();
        let a = run_efficiency(&worlds, &ae, None, &cfg(Some(3))).unwrap();
        let b = run_efficiency(&worlds, &ae, None, &cfg(Some(3))).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn needs_two_worlds() {
        let (worlds, ae) = setup();
        assert!(matches!(run_efficiency(&worlds[..1], &ae, None, &cfg(Some(1))), Err(HarnessError::Config(_))));
    }

    #[test]
    fn scene_corpus_is_capped() {
        let (worlds, _) = setup();
        let c = scene_corpus(&worlds[0], 100).unwrap();
        assert!(c.len() <= 100 && c.len() > 50);
        assert_eq!(c.dim(), 24);
    }
}

use gensplat_core::field::{train_language_field, FieldTrainConfig, LanguageProblem, TargetFeatureMap};
use gensplat_core::synth::random_scene;
use gensplat_core::{render, Camera, Gaussian, RenderOptions, Scene, SceneMetadata};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_targets(rng: &mut ChaCha8Rng, w: usize, h: usize, k: usize, levels: usize) -> Vec<TargetFeatureMap> {
    (0..levels)
        .map(|level| {
            let mut valid: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
            valid[0] = true;
            let values = (0..w * h * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            TargetFeatureMap { view_id: 0, level, width: w, height: h, channels: k, values, valid }
        })
        .collect()
}

#[test]
fn latent_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for instance in 0..24 {
        let (k, levels) = if instance % 3 == 0 { (2, 2) } else { (3, 1) };
        let n = rng.random_range(1..=10);
        let (scene, cam) = random_scene(n, k * levels, 8, 8, instance).unwrap();
        let targets = random_targets(&mut rng, 8, 8, k, levels);
        let cfg = FieldTrainConfig { gamma: rng.random_range(0.0..1.0), beta: rng.random_range(0.5..2.0), levels, ..Default::default() };
        let problem = LanguageProblem::new(&scene, &[cam], &targets, &cfg).unwrap();
        let z: Vec<f64> = (0..n * k * levels).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = problem.objective(&z).unwrap();
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += eps;
            zm[i] -= eps;
            let num = (problem.objective(&zp).unwrap().0 - problem.objective(&zm).unwrap().0) / (2.0 * eps);
            let rel = (grad[i] - num).abs() / num.abs().max(grad[i].abs()).max(1e-2);
            assert!(rel < 1e-4, "instance {instance} latent {i}: analytic {} numeric {num}", grad[i]);
        }
        checked += (grad.iter().any(|&g| g != 0.0)) as usize;
    }
    assert!(checked >= 20, "only {checked} instances had a non-zero gradient");
}

fn one_splat(scale: f32, opacity: f32, k: usize) -> (Scene, Camera) {
    let g = Gaussian::isotropic([0.0, 0.0, 2.0], scale, [0.5; 3], opacity, vec![0.0; k]).unwrap();
    let scene = Scene::new(vec![g], k, SceneMetadata::default()).unwrap();
    (scene, Camera::identity_pose(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap())
}

fn constant_target(h: &[f64], w: usize, hh: usize) -> TargetFeatureMap {
    TargetFeatureMap {
        view_id: 0,
        level: 0,
        width: w,
        height: hh,
        channels: h.len(),
        values: (0..w * hh).flat_map(|_| h.iter().copied()).collect(),
        valid: vec![true; w * hh],
    }
}

#[test]
fn frame_filling_splat_converges_to_constant_target() {
    let h = [0.4, -0.25, 0.1, -0.45];
    let (scene, cam) = one_splat(1e5, 1.0, 4);
    let (out, report) = train_language_field(&scene, &[cam], &[constant_target(&h, 8, 8)], &FieldTrainConfig::default()).unwrap();
    for (z, t) in out.gaussians[0].latent.iter().zip(h) {
        assert!((*z as f64 - t).abs() <= 1e-3, "{z} vs {t}");
    }
    let n = report.curve.len();
    let head: f64 = report.curve[..n / 10].iter().map(|r| r.total).sum();
    let tail: f64 = report.curve[n - n / 10..].iter().map(|r| r.total).sum();
    assert!(tail < head);
}

/// Σ_p |w_p z − h| is convex piecewise linear, so its minimum sits at a breakpoint h / w_p.
fn least_l1(weights: &[f64], h: f64) -> f64 {
    let f = |z: f64| weights.iter().map(|w| (w * z - h).abs()).sum::<f64>();
    weights.iter().filter(|&&w| w > 0.0).map(|w| h / w).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap()
}

#[test]
fn pure_l1_fit_reaches_least_absolute_deviation_optimum() {
    for (scale, opacity, h) in [(0.6f32, 0.95f32, [0.3, -0.2]), (0.9, 0.8, [-0.15, 0.25]), (0.45, 0.99, [0.2, 0.05])] {
        let (scene, cam) = one_splat(scale, opacity, 2);
        let contrib = render(&scene, &cam, &RenderOptions::default()).unwrap().contrib;
        let weights: Vec<f64> = (0..64).map(|p| contrib.pixel(p).first().map_or(0.0, |c| c.weight)).collect();
        let cfg = FieldTrainConfig { gamma: 0.0, lr: 0.02, lr_final: Some(2e-4), iterations: 3000, ..Default::default() };
        let (out, _) = train_language_field(&scene, &[cam], &[constant_target(&h, 8, 8)], &cfg).unwrap();
        for (c, &hc) in h.iter().enumerate() {
            let best = least_l1(&weights, hc);
            let got = out.gaussians[0].latent[c] as f64;
            assert!((got - best).abs() <= 1e-3, "scale {scale}: channel {c} got {got}, optimum {best}");
        }
    }
}

#[test]
fn zero_iterations_and_frozen_fields() {
    let (scene, cam) = random_scene(8, 3, 8, 8, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let targets = random_targets(&mut rng, 8, 8, 3, 1);
    let (same, _) = train_language_field(&scene, std::slice::from_ref(&cam), &targets, &FieldTrainConfig { iterations: 0, ..Default::default() }).unwrap();
    assert_eq!(same, scene);

    let (trained, _) = train_language_field(&scene, std::slice::from_ref(&cam), &targets, &FieldTrainConfig { iterations: 50, ..Default::default() }).unwrap();
    for (a, b) in scene.gaussians.iter().zip(&trained.gaussians) {
        assert_eq!((a.mu, a.scale, a.rotation, a.color, a.opacity), (b.mu, b.scale, b.rotation, b.color, b.opacity));
    }
    let before = render(&scene, &cam, &RenderOptions::default()).unwrap().color;
    let after = render(&trained, &cam, &RenderOptions::default()).unwrap().color;
    assert!(before.iter().zip(&after).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn permuting_splats_permutes_latents() {
    let (scene, cam) = random_scene(10, 3, 8, 8, 11).unwrap();
    let zeroed = scene.with_latent_dim(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets = random_targets(&mut rng, 8, 8, 3, 1);
    let cfg = FieldTrainConfig { iterations: 200, ..Default::default() };
    let perm = [3usize, 7, 0, 9, 1, 5, 2, 8, 6, 4];
    let mut permuted = zeroed.clone();
    permuted.gaussians = perm.iter().map(|&i| zeroed.gaussians[i].clone()).collect();
    let (a, _) = train_language_field(&zeroed, std::slice::from_ref(&cam), &targets, &cfg).unwrap();
    let (b, _) = train_language_field(&permuted, &[cam], &targets, &cfg).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(b.gaussians[j].latent, a.gaussians[i].latent);
    }
}

#[test]
fn hierarchy_levels_train_independently() {
    let (scene, cam) = random_scene(10, 4, 8, 8, 13).unwrap();
    let zeroed = scene.with_latent_dim(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let level0 = random_targets(&mut rng, 8, 8, 2, 1);
    let cfg = FieldTrainConfig { iterations: 100, levels: 2, ..Default::default() };
    let (out, _) = train_language_field(&zeroed, std::slice::from_ref(&cam), &level0, &cfg).unwrap();
    assert!(out.gaussians.iter().all(|g| g.latent[2] == 0.0 && g.latent[3] == 0.0));

    let mut both = level0.clone();
    both.extend(random_targets(&mut rng, 8, 8, 2, 2).into_iter().filter(|t| t.level == 1));
    let cfg2 = FieldTrainConfig { iterations: 200, ..cfg };
    let (two, _) = train_language_field(&zeroed, &[cam], &both, &cfg2).unwrap();
    assert!(two.gaussians.iter().any(|g| g.latent[2] != 0.0));
}

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gensplat_core::synth::random_scene;
use gensplat_core::{render, render_bruteforce, RenderOptions};

fn tiles(c: &mut Criterion) {
    let mut g = c.benchmark_group("render");
    g.sample_size(20);
    for n in [500, 2000] {
        let (scene, cam) = random_scene(n, 16, 128, 128, 7).unwrap();
        for tile in [8, 16, 32] {
            let opts = RenderOptions { tile_size: tile, record_contrib: true };
            g.bench_with_input(BenchmarkId::new(format!("tile{tile}"), n), &n, |b, _| b.iter(|| render(&scene, &cam, &opts).unwrap()));
        }
        let plain = RenderOptions { tile_size: 16, record_contrib: false };
        g.bench_with_input(BenchmarkId::new("tile16_no_contrib", n), &n, |b, _| b.iter(|| render(&scene, &cam, &plain).unwrap()));
    }
    let (scene, cam) = random_scene(500, 16, 64, 64, 7).unwrap();
    g.bench_function("bruteforce_500_64px", |b| b.iter(|| render_bruteforce(&scene, &cam).unwrap()));
    g.finish();
}

criterion_group!(benches, tiles);
criterion_main!(benches);

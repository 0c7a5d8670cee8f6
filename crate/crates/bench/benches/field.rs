use criterion::{criterion_group, criterion_main, Criterion};
use gensplat_core::codec::train_autoencoder;
use gensplat_core::field::{build_targets, train_language_field, FieldTrainConfig};
use gensplat_core::synth::{gen_corpus, gen_dictionary, gen_world, DictionaryConfig, WorldConfig};
use gensplat_core::TrainConfig;

fn field(c: &mut Criterion) {
    let dict = gen_dictionary(&DictionaryConfig::default(), 1).unwrap();
    let corpus = gen_corpus(&dict, 4, 0.2, 2).unwrap();
    let (ae, _) = train_autoencoder(&corpus, 16, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    let world = gen_world(&WorldConfig::default(), &dict, 3).unwrap();
    let targets = build_targets(&world.supervision(), &ae).unwrap();
    let start = world.scene.with_latent_dim(16);
    let cfg = FieldTrainConfig { iterations: 50, ..Default::default() };
    let mut g = c.benchmark_group("language_field");
    g.sample_size(10);
    g.bench_function("fifty_iterations_96px_5views", |b| b.iter(|| train_language_field(&start, &world.cameras, &targets, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, field);
criterion_main!(benches);

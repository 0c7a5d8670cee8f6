use criterion::{criterion_group, criterion_main, Criterion};
use gensplat_core::codec::{fit, Autoencoder, TrainConfig};
use gensplat_core::synth::{gen_corpus, gen_dictionary, DictionaryConfig};
use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn codec(c: &mut Criterion) {
    let dict = gen_dictionary(&DictionaryConfig::default(), 1).unwrap();
    let corpus = gen_corpus(&dict, 16, 0.2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ae = Autoencoder::standard(512, 16, &mut rng).unwrap();
    let mut g = c.benchmark_group("autoencoder");
    g.sample_size(20);
    let rows = corpus.rows().slice(s![..256, ..]).to_owned();
    g.bench_function("encode_batch_256", |b| b.iter(|| ae.encode_batch(rows.view()).unwrap()));
    g.bench_function("reconstruct_batch_256", |b| b.iter(|| ae.reconstruct_batch(rows.view()).unwrap()));
    let cfg = TrainConfig { epochs: usize::MAX, max_steps: Some(10), ..Default::default() };
    g.bench_function("ten_train_steps", |b| b.iter(|| fit(ae.clone(), &corpus, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, codec);
criterion_main!(benches);

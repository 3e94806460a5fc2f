use criterion::{criterion_group, criterion_main, Criterion};
use postocr::bpe::learn;
use postocr::copynet::{encode_pairs, Corrector, CopyNet, ModelConfig};
use postocr::corpus::strip_diacritics;
use postocr::grapheme::Alphabet;
use postocr_bench::{lines, segmented};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn model(c: &mut Criterion) {
    let a = Alphabet::iast();
    let vocab = learn(&segmented(1000), 30, 2).unwrap().augment_with_alphabet(&a);
    let gold = lines(16);
    let pairs: Vec<(String, String)> = gold.iter().map(|g| (strip_diacritics(g), g.clone())).collect();
    let cfg = ModelConfig { embed_dim: 64, hidden: 64, layers: 2, residual: true, copy: true };
    let m = CopyNet::initialized(cfg, &vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let encoded = encode_pairs(&pairs, &vocab, &a, 200).0;

    c.bench_function("loss_and_grad 16 pairs h64", |b| {
        let mut grad = m.zeros_like();
        b.iter(|| {
            encoded
                .iter()
                .map(|p| m.loss_and_grad(black_box(&p.source), &p.target, None, 1.0, &mut grad).unwrap())
                .sum::<f64>()
        })
    });
    let corrector = Corrector::new(m.clone(), vocab.clone(), a.clone()).unwrap();
    let inputs: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
    c.bench_function("greedy decode 16 lines h64", |b| {
        b.iter(|| corrector.correct_all(black_box(&inputs), 1).unwrap())
    });
    c.bench_function("beam 4 decode 16 lines h64", |b| {
        b.iter(|| corrector.correct_all(black_box(&inputs), 4).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = model
}
criterion_main!(benches);

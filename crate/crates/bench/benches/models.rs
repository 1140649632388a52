use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapelinker::aligner::{AlignerModel, DEFAULT_EMBED_DIM, DEFAULT_HEADS};
use shapelinker::rl::{encode_corpus, SequenceModel, Vocabulary};
use shapelinker_bench::{corpus, random_cloud};

fn aligner(c: &mut Criterion) {
    let model = AlignerModel::new(DEFAULT_EMBED_DIM, DEFAULT_HEADS, 0).unwrap();
    let q = random_cloud(1, 64);
    let r = random_cloud(2, 64);
    c.bench_function("aligner_forward_64", |b| b.iter(|| model.forward(black_box(&q), black_box(&r)).unwrap()));
    c.bench_function("aligner_backward_64", |b| {
        b.iter(|| model.loss_and_grads(black_box(&q), black_box(&r)).unwrap())
    });
}

fn sequence_model(c: &mut Criterion) {
    let smiles = corpus(32);
    let vocab = Vocabulary::from_corpus(&smiles).unwrap();
    let seqs = encode_corpus(&vocab, &smiles).unwrap();
    let model = SequenceModel::new(vocab, 32, 128, 0).unwrap();
    c.bench_function("gru_sample_32", |b| {
        b.iter(|| model.sample(&mut ChaCha8Rng::seed_from_u64(0), 32, 1.0).unwrap())
    });
    let weights = vec![1.0; seqs.len()];
    c.bench_function("gru_likelihood_grad_32", |b| {
        b.iter(|| model.log_likelihood_grad(black_box(&seqs), &weights).unwrap())
    });
}

criterion_group!(benches, aligner, sequence_model);
criterion_main!(benches);

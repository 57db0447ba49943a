use criterion::{criterion_group, criterion_main, Criterion};
use resident::nn::{cross_entropy, LayerMode};
use resident::optim::AdamState;
use resident_bench::{byte_ids, model, rng};

const BATCH: usize = 20;
const MAX_LEN: usize = 384;

fn infer(c: &mut Criterion) {
    let m = model(3, MAX_LEN);
    let ids = byte_ids(BATCH, MAX_LEN, 5);
    c.bench_function("model/infer_batch20", |b| {
        b.iter(|| m.forward(&ids, BATCH, LayerMode::Infer, &mut rng(0)).unwrap().probs)
    });
}

fn train_step(c: &mut Criterion) {
    let mut m = model(3, MAX_LEN);
    let ids = byte_ids(BATCH, MAX_LEN, 6);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % m.config.n_classes).collect();
    let mut adam = AdamState::default();
    let mut r = rng(7);
    c.bench_function("model/train_step_batch20", |b| {
        b.iter(|| {
            let mut pass = m.forward(&ids, BATCH, LayerMode::Train, &mut r).unwrap();
            let loss = cross_entropy(&mut pass.graph, pass.probs, &labels).unwrap();
            let grads = pass.graph.backward(loss).unwrap().into_named();
            adam.step(m.trainable_mut(), &grads).unwrap();
            m.update_running_stats(&pass.bn_stats).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = infer, train_step
}
criterion_main!(benches);

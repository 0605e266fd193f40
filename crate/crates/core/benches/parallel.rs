//! Batch gradients and corpus scoring on the rayon pool versus one thread.
//! Without the `parallel` feature only the sequential path is measured.

use assertlora::data::{gen_toy_corpus, Vocab};
use assertlora::lora::{LoraConfig, ModelGeometry};
use assertlora::metrics::evaluate_corpus;
use assertlora::model::{build_model, AdaptedModel};
use assertlora::training::{named_gradients, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

#[cfg(feature = "parallel")]
type Pool = rayon::ThreadPool;
#[cfg(not(feature = "parallel"))]
type Pool = ();

fn pools() -> Vec<(String, Pool)> {
    #[cfg(feature = "parallel")]
    {
        let n = rayon::current_num_threads();
        [1, n]
            .into_iter()
            .map(|t| (format!("rayon-{t}"), rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap()))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    vec![("sequential".into(), ())]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Pool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn run<R: Send>(_: &Pool, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn batch_gradients(c: &mut Criterion) {
    let vocab = Vocab::default();
    let base = build_model(ModelGeometry::toy(vocab.len()), 0).unwrap();
    let model = AdaptedModel::attach(base, LoraConfig::default()).unwrap();
    let batch = gen_toy_corpus(8, 1);
    let config = TrainConfig::default();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || named_gradients(&model, &batch, &vocab, &config, 0).unwrap()))
        });
    }
    group.finish();
}

fn corpus_scoring(c: &mut Criterion) {
    let refs: Vec<String> = gen_toy_corpus(2000, 2).into_iter().map(|p| p.answer).collect();
    let preds: Vec<String> = refs.iter().rev().cloned().collect();
    let mut group = c.benchmark_group("corpus_scoring");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || evaluate_corpus(&preds, &refs).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, corpus_scoring);
criterion_main!(benches);

use assertlora::data::{gen_toy_corpus, DatasetSplit, Vocab};
use assertlora::lora::{LoraConfig, ModelGeometry};
use assertlora::model::build_model;
use assertlora::training::{train, TrainConfig};

fn split_of(n: usize, seed: u64) -> DatasetSplit {
    let pairs = gen_toy_corpus(n, seed);
    DatasetSplit { train: pairs.clone(), validation: vec![], test: pairs, seed: 0 }
}

#[test]
fn single_pair_overfits() {
    let vocab = Vocab::default();
    let base = build_model(ModelGeometry::toy(vocab.len()), 0).unwrap();
    let config = TrainConfig { steps: 500, batch_size: 1, ..Default::default() };
    let out = train(base, &config, &LoraConfig::default(), &split_of(1, 3), &vocab).unwrap();
    let last = out.curve.points().last().unwrap().1;
    assert!(last < 0.05, "final loss {last}");
}

#[test]
fn loss_curve_falls_then_settles() {
    let vocab = Vocab::default();
    let base = build_model(ModelGeometry::toy(vocab.len()), 1).unwrap();
    let config = TrainConfig { steps: 300, batch_size: 4, ..Default::default() };
    let out = train(base, &config, &LoraConfig::default(), &split_of(200, 4), &vocab).unwrap();
    let (first, last) = (out.curve.mean_first(100), out.curve.mean_last(100));
    assert!(last < first, "first {first}, last {last}");
}

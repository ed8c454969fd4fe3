use mbt_core::data::synth_dataset;
use mbt_core::metrics::{evaluate, MetricOptions};
use mbt_core::model::ModelConfig;
use mbt_core::train::{Checkpoint, TrainConfig, Trainer};

fn recipe(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        epochs,
        lr: 1e-3,
        lr_halving_epoch: epochs * 3 / 4,
        patch_size: 16,
        steps_per_epoch: 1,
        val_every: 0,
        ..Default::default()
    }
}

#[test]
fn single_image_loss_decreases() {
    let data = synth_dataset(1, 32, 2, 3).unwrap();
    let mut t = Trainer::<f32>::new(ModelConfig::tiny(2), recipe(200), &data, None).unwrap();
    let before = evaluate(t.params(), &t.model, &data, &MetricOptions::default()).unwrap().mean_psnr;
    while !t.done() {
        t.run_epoch().unwrap();
    }
    let l = t.losses();
    assert_eq!(l.len(), 200);
    let head: f64 = l[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = l[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.8 * head, "loss {head} -> {tail}");
    let after = evaluate(t.params(), &t.model, &data, &MetricOptions::default()).unwrap().mean_psnr;
    assert!(after > before, "psnr {before} -> {after}");
}

#[test]
fn resume_through_bytes_matches_uninterrupted() {
    let data = synth_dataset(2, 32, 2, 0).unwrap();
    let mut full = Trainer::<f32>::new(ModelConfig::tiny(2), recipe(6), &data, None).unwrap();
    while !full.done() {
        full.run_epoch().unwrap();
    }
    let mut first = Trainer::<f32>::new(ModelConfig::tiny(2), recipe(6), &data, None).unwrap();
    for _ in 0..3 {
        first.run_epoch().unwrap();
    }
    let bytes = first.checkpoint().to_bytes();
    let mut second = Trainer::resume(Checkpoint::<f32>::from_bytes(&bytes).unwrap(), recipe(6), &data, None).unwrap();
    while !second.done() {
        second.run_epoch().unwrap();
    }
    assert_eq!(full.losses(), second.losses());
    assert_eq!(full.checkpoint().to_bytes(), second.checkpoint().to_bytes());
}

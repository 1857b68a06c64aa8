use super::*;
use crate::data::synth_splits;
use crate::nn::{build_network, checkpoint, NetworkSpec, Placement};

fn small_spec() -> NetworkSpec {
    NetworkSpec { stage_widths: vec![4, 8], blocks_per_stage: 1, placement: Placement::Layer(2), num_classes: 4, ..NetworkSpec::default() }
}

fn setup(cfg: TrainConfig) -> (Trainer<f32>, Vec<LabeledImage>, Vec<LabeledImage>) {
    let (train, val) = synth_splits(48, 16, 4, 0.2, 1).unwrap();
    let norm = NormStats::compute(&train).unwrap();
    let net = build_network(&small_spec(), cfg.seed).unwrap();
    (Trainer::new(net, cfg, norm, false).unwrap(), train, val)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, lr0: 0.05, seed: 3, ..TrainConfig::default() }
}

#[test]
fn csv_format() {
    let e = Evaluation { loss: 1.0 / 3.0, accuracy: 0.5, correct: 1, total: 2 };
    let rows = [EpochMetrics { epoch: 1, train: e, val: Evaluation { loss: 2.0, ..e } }];
    assert_eq!(metrics_csv(&rows), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.333333,0.500000,2.000000,0.500000\n");
}

#[test]
fn runs_are_reproducible() {
    let run = || {
        let (mut t, train, val) = setup(cfg(2));
        metrics_csv(&t.fit(&train, &val, |_| {}).unwrap())
    };
    let a = run();
    assert_eq!(a.lines().count(), 3);
    assert_eq!(a, run());
}

#[test]
fn augmented_runs_are_reproducible() {
    let run = || {
        let (mut t, train, val) = setup(cfg(1));
        t.augment = true;
        metrics_csv(&t.fit(&train, &val, |_| {}).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_rate_and_frozen_statistics_keep_loss_constant() {
    let c = TrainConfig { lr0: 0.0, bn_momentum: 0.0, ..cfg(3) };
    let (mut t, train, val) = setup(c);
    let rows = t.fit(&train, &val, |_| {}).unwrap();
    for r in &rows[1..] {
        assert!((r.train.loss - rows[0].train.loss).abs() < 1e-9);
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (mut full, train, val) = setup(cfg(2));
    let want = full.fit(&train, &val, |_| {}).unwrap();

    let (mut first, _, _) = setup(cfg(1));
    first.fit(&train, &val, |_| {}).unwrap();
    let bytes = checkpoint::encode(&first.state()).unwrap();
    let (mut resumed, _, _) = setup(cfg(2));
    resumed.load_state(&checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    let rest = resumed.fit(&train, &val, |_| {}).unwrap();
    assert_eq!(rest.len(), 1);
    assert_eq!(rest[0].csv_row(), want[1].csv_row());
}

#[test]
fn evaluation_matches_reported_train_accuracy_after_reload() {
    let (mut t, train, val) = setup(cfg(1));
    let rows = t.fit(&train, &val, |_| {}).unwrap();
    let mut net = build_network::<f32>(&small_spec(), 77).unwrap();
    let (epoch, norm) = restore_network(&mut net, &t.state()).unwrap();
    assert_eq!(epoch, 1);
    let e = evaluate(&net, &train, &norm).unwrap();
    assert_eq!(e.accuracy, rows[0].train.accuracy);
}

#[test]
fn divergence_is_a_numeric_error() {
    let c = TrainConfig { lr0: 1e30, momentum: 0.0, ..cfg(2) };
    let (mut t, train, val) = setup(c);
    assert!(matches!(t.fit(&train, &val, |_| {}), Err(Error::Numeric(_))));
}

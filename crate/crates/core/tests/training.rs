//! Training loop, prediction and checkpoint contracts.

use dualnet::autograd::Tape;
use dualnet::experiments::synth;
use dualnet::layers::{Mode, Rng};
use dualnet::net::{ArchitectureConfig, Network};
use dualnet::train::{predict, predict_batched, sparse_ce_loss, train, Checkpoint, TrainConfig};
use dualnet::{Error, Tensor};
use rand::SeedableRng;

fn first_batch_loss(net: &mut Network, x: &Tensor, labels: &[usize], seed: u64) -> f64 {
    let mut tape = Tape::new();
    let mut rng = Rng::seed_from_u64(seed);
    let pass = net.forward(&mut tape, x, Mode::Train, Some(&mut rng)).unwrap();
    let loss = sparse_ce_loss(&mut tape, pass.output.probs, labels).unwrap();
    tape.value(loss).item()
}

#[test]
fn first_batch_loss_is_calibrated() {
    for classes in [2usize, 5] {
        let ds = synth::gaussian_mixture(64, 12, classes, 1.0, 4).unwrap();
        let idx: Vec<usize> = (0..32).collect();
        let batch = ds.subset(&idx);
        let target = (classes as f64).ln();
        for seed in 0..5 {
            for cfg in [
                ArchitectureConfig::dualnet_tiny(12, classes),
                ArchitectureConfig::dense(12, 8, 1, 4, classes),
                ArchitectureConfig::residual(12, 8, 4, classes),
            ] {
                let mut net = Network::build(&cfg, seed).unwrap();
                let loss = first_batch_loss(&mut net, &batch.features, &batch.labels, seed);
                assert!(
                    (loss - target).abs() <= 0.1 * target,
                    "{} seed {seed}: loss {loss:.4} vs ln({classes}) = {target:.4}",
                    cfg.label()
                );
            }
        }
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let ds = synth::two_blobs(96, 1).unwrap();
    let cfg = ArchitectureConfig::dualnet_tiny(12, 2).with_dropout(0.0);
    let mut net = Network::build(&cfg, 2).unwrap();
    let before: Vec<Tensor> = net.params.trainable_ids().iter().map(|&id| net.params.get(id).clone()).collect();
    let tc = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 96,
        ..TrainConfig::default()
    };
    let history = train(&mut net, &ds, &tc).unwrap();
    let after: Vec<Tensor> = net.params.trainable_ids().iter().map(|&id| net.params.get(id).clone()).collect();
    assert_eq!(before, after);
    // One full batch, no dropout: every epoch sees the same rows, only the
    // shuffled summation order differs.
    let first = &history.epochs[0];
    for e in &history.epochs {
        assert!((e.loss - first.loss).abs() < 1e-12, "{} vs {}", e.loss, first.loss);
        assert_eq!(e.accuracy, first.accuracy);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let ds = synth::two_blobs(128, 3).unwrap();
    let run = |seed| {
        let mut net = Network::build(&ArchitectureConfig::dualnet_tiny(12, 2), seed).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &ds, &tc).unwrap();
        (h, Checkpoint::new(net).to_bytes().unwrap())
    };
    let (h1, p1) = run(5);
    let (h2, p2) = run(5);
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    let (h3, _) = run(6);
    assert_ne!(h1, h3);
}

#[test]
fn width_mismatch_fails_before_training() {
    let ds = synth::two_blobs(32, 3).unwrap();
    let mut net = Network::build(&ArchitectureConfig::dualnet_tiny(11, 2), 0).unwrap();
    let before = Checkpoint::new(net.clone()).to_bytes().unwrap();
    let err = train(&mut net, &ds, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(Checkpoint::new(net).to_bytes().unwrap(), before);
}

#[test]
fn zero_head_predicts_uniform_and_class_zero() {
    let ds = synth::gaussian_mixture(10, 12, 3, 1.0, 0).unwrap();
    let mut net = Network::build(&ArchitectureConfig::dualnet_tiny(12, 3), 0).unwrap();
    let head: Vec<_> = net
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with("head/"))
        .map(|(id, _)| id)
        .collect();
    assert!(!head.is_empty());
    for id in head {
        net.params.get_mut(id).data_mut().fill(0.0);
    }
    let p = predict(&net, &ds.features).unwrap();
    assert!(p.probs.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    assert!(p.classes.iter().all(|&c| c == 0));
}

#[test]
fn predictions_ignore_batching_and_survive_checkpoints() {
    let ds = synth::two_blobs(70, 8).unwrap();
    let mut net = Network::build(&ArchitectureConfig::dualnet_tiny(12, 2), 1).unwrap();
    train(
        &mut net,
        &ds,
        &TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let full = predict(&net, &ds.features).unwrap();
    for bs in [1, 3, 16, 70] {
        let p = predict_batched(&net, &ds.features, bs).unwrap();
        assert_eq!(p, full, "batch size {bs}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(net).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(predict(&loaded.network, &ds.features).unwrap(), full);
}

mod common;

use common::rng;
use deepwarp_core::dataset::{build_dataset, gen_field, gen_phantom, DatasetConfig, WarpKind, WarpSpec};
use deepwarp_core::{Error, Image, WarpField};
use deepwarp_nn::{train, History, LossMode, TrainConfig, Trainer, UNetConfig, UNetModel};

fn warped_pair(seed: u64) -> (Image<f32>, Image<f32>) {
    let t: Image<f32> = gen_phantom(64, seed).unwrap();
    let spec = WarpSpec::random(WarpKind::Mixed, 64, 2.5, 5.0, seed);
    let f: WarpField<f32> = gen_field(&spec, 64).unwrap();
    (f.apply(&t).unwrap(), t)
}

#[test]
fn single_pair_overfit() {
    let (s, t) = warped_pair(1);
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(60)).unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::desk()
    };
    let mut tr = Trainer::new(m, &tc).unwrap();
    let first = tr.step(&s, &t).unwrap().loss;
    let mut last = first;
    for _ in 1..200 {
        last = tr.step(&s, &t).unwrap().loss;
    }
    assert!(last * 10.0 <= first, "loss {first} -> {last}");
}

#[test]
fn identical_pair_drives_loss_to_zero() {
    let t: Image<f32> = gen_phantom(64, 2).unwrap();
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(61)).unwrap();
    let mut tr = Trainer::new(m, &TrainConfig::desk()).unwrap();
    let first = tr.step(&t, &t).unwrap().loss;
    let mut last = first;
    for _ in 1..200 {
        last = tr.step(&t, &t).unwrap().loss;
    }
    assert!(last < 0.01 && last < first, "loss {first} -> {last}");
    // the optimum itself
    let zero = UNetModel::<f32>::zeros(UNetConfig::DESK).unwrap();
    let mut tz = Trainer::new(zero, &TrainConfig::desk()).unwrap();
    assert!(tz.step(&t, &t).unwrap().loss.abs() < 1e-9);
}

fn tiny_dataset(seed: u64) -> deepwarp_core::dataset::Dataset<f32> {
    let mut cfg = DatasetConfig::new(5, 2, 16, seed);
    cfg.max_amplitude = 1.5;
    cfg.min_amplitude = 0.75;
    build_dataset(&cfg).unwrap()
}

fn tiny_model(seed: u64) -> UNetModel<f32> {
    UNetModel::build(UNetConfig { input_size: 16, depth: 1, base_width: 4 }, &mut rng(seed)).unwrap()
}

#[test]
fn training_is_bit_reproducible_and_snapshots_are_taken() {
    let ds = tiny_dataset(3);
    let tc = TrainConfig {
        epochs: 3,
        lr: 1e-3,
        seed: 9,
        snapshot_epochs: vec![1, 3],
        ..TrainConfig::desk()
    };
    let a = train(tiny_model(1), &ds, &tc).unwrap();
    let b = train(tiny_model(1), &ds, &tc).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.records.len(), 3);
    let epochs: Vec<usize> = a.snapshots.iter().map(|(e, _)| *e).collect();
    assert_eq!(epochs, vec![1, 3]);
    assert_eq!(a.snapshots[1].1, a.model);
    let csv = a.history.to_csv();
    assert_eq!(csv.lines().next().unwrap(), History::CSV_HEADER);
    assert_eq!(csv.lines().count(), 4);
    for r in &a.history.records {
        assert!(r.val_mse.is_finite() && r.val_ssim.is_finite() && r.train_loss.is_finite());
    }
}

#[test]
fn loss_modes_differ_only_in_objective() {
    let ds = tiny_dataset(4);
    let mut finals = Vec::new();
    for mode in LossMode::ALL {
        let tc = TrainConfig {
            epochs: 1,
            loss_mode: mode,
            ..TrainConfig::desk()
        };
        let out = train(tiny_model(2), &ds, &tc).unwrap();
        finals.push(out.model);
        assert_eq!(mode.to_string().parse::<LossMode>().unwrap(), mode);
    }
    assert_ne!(finals[0], finals[1]);
    assert_ne!(finals[0], finals[2]);
}

#[test]
fn config_errors() {
    let ds = tiny_dataset(5);
    let bad = [
        TrainConfig { lr: 0.0, ..TrainConfig::desk() },
        TrainConfig { validation_fraction: 1.0, ..TrainConfig::desk() },
        TrainConfig { snapshot_epochs: vec![31], ..TrainConfig::desk() },
        TrainConfig { alpha: -1.0, ..TrainConfig::desk() },
    ];
    for tc in bad {
        assert!(matches!(train(tiny_model(3), &ds, &tc), Err(Error::Config(_))));
    }
    let mut empty = ds.clone();
    empty.entries.clear();
    assert!(matches!(train(tiny_model(3), &empty, &TrainConfig::desk()), Err(Error::Config(_))));
    let wrong_size = UNetModel::<f32>::build(UNetConfig { input_size: 32, depth: 1, base_width: 2 }, &mut rng(1)).unwrap();
    assert!(train(wrong_size, &ds, &TrainConfig::desk()).is_err());
    assert!("adam".parse::<LossMode>().is_err());
}

mod common;

use std::fs;

use kvnet::io::read_csv;
use kvnet::models::ModelConfig;
use kvnet::sampling::generate_random_mask;
use kvnet::training::{
    evaluate, prepare_slice, read_checkpoint, ssim_loss, PreparedSlice, Reconstructor, TrainConfig, Trainer,
};
use kvnet::{Graph, Tensor};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        c_v: 4,
        c_k: 2,
        levels: 1,
        blocks: 1,
        ..ModelConfig::default()
    }
}

fn tiny_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn ssim_loss_is_zero_for_identical_and_positive_with_noise() {
    let mut r = common::rng(1);
    let x: Vec<f64> = (0..256).map(|i| (i % 16) as f64 / 16.0).collect();
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(&[1, 1, 16, 16], x.clone()).unwrap());
    let l = ssim_loss(&mut g, xv, &x, &[1.0]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let noisy: Vec<f64> = x.iter().map(|v| v + 0.05 * common::random_vec(1, &mut r)[0]).collect();
    let l = ssim_loss(&mut g, xv, &noisy, &[1.0]).unwrap();
    let v = g.value(l).item();
    assert!(v > 0.0 && v <= 2.0, "{v}");
}

#[test]
fn one_epoch_changes_parameters() {
    let data = common::phantom_kspaces(8, 16, 2);
    let mut t = Trainer::new(tiny_model(), tiny_train(1, 3)).unwrap();
    let before = t.params.clone();
    t.fit(&data[..6], &data[6..], None, |_| {}).unwrap();
    let changed = before
        .iter()
        .zip(t.params.iter())
        .any(|((_, a), (_, b))| a.tensor.data() != b.tensor.data());
    assert!(changed);
    assert_eq!(t.optimizer.steps, 2);
}

fn smoothed_non_increasing(losses: &[f64]) -> bool {
    let sm: Vec<f64> = losses.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    sm.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn smoothed_training_loss_decreases_for_most_seeds() {
    let train = common::phantom_kspaces(8, 16, 10);
    let val = common::phantom_kspaces(2, 16, 11);
    let mut good = 0;
    for seed in 0..10 {
        let mut t = Trainer::new(tiny_model(), tiny_train(10, seed)).unwrap();
        let s = t.fit(&train, &val, None, |_| {}).unwrap();
        let losses: Vec<f64> = s.history.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
        assert!(losses.iter().all(|l| l.is_finite()));
        if smoothed_non_increasing(&losses) {
            good += 1;
        }
    }
    assert!(good >= 8, "only {good} of 10 seeds decreased");
}

#[test]
fn outputs_are_deterministic_and_resume_is_exact() {
    let train = common::phantom_kspaces(8, 16, 20);
    let val = common::phantom_kspaces(4, 16, 21);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());

    Trainer::new(tiny_model(), tiny_train(3, 4))
        .unwrap()
        .fit(&train, &val, Some(a.path()), |_| {})
        .unwrap();
    Trainer::new(tiny_model(), tiny_train(3, 4))
        .unwrap()
        .fit(&train, &val, Some(b.path()), |_| {})
        .unwrap();
    let csv_a = fs::read(a.path().join("metrics.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.path().join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.path().join("last.ckpt")).unwrap(),
        fs::read(b.path().join("last.ckpt")).unwrap()
    );
    assert!(a.path().join("best.ckpt").exists());

    Trainer::new(tiny_model(), tiny_train(2, 4))
        .unwrap()
        .fit(&train, &val, Some(c.path()), |_| {})
        .unwrap();
    let ckpt = read_checkpoint(&c.path().join("last.ckpt")).unwrap();
    assert_eq!(ckpt.epoch, 2);
    Trainer::from_checkpoint(ckpt, tiny_train(3, 4))
        .unwrap()
        .fit(&train, &val, Some(c.path()), |_| {})
        .unwrap();
    assert_eq!(csv_a, fs::read(c.path().join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.path().join("last.ckpt")).unwrap(),
        fs::read(c.path().join("last.ckpt")).unwrap()
    );
    let rows = read_csv(&c.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].split, "zerofill");
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let data = common::phantom_kspaces(6, 16, 30);
    let mut t = Trainer::new(tiny_model(), tiny_train(1, 0)).unwrap();
    let name = t.params.names().next().unwrap().to_string();
    t.params.get_mut(&name).unwrap().data_mut()[0] = f32::NAN;
    let err = t.fit(&data[..4], &data[4..], None, |_| {}).unwrap_err();
    assert_eq!(err.category(), "non-finite");
    assert!(err.to_string().contains("epoch 1 batch 0"), "{err}");
}

#[test]
fn evaluation_baselines() {
    let data = common::phantom_kspaces(3, 32, 40);
    let lossy: Vec<PreparedSlice<f32>> = data
        .iter()
        .map(|k| prepare_slice(k, generate_random_mask(32, 0.08, 4.0, 1).unwrap()).unwrap())
        .collect();
    let r = evaluate(Reconstructor::ZeroFill, &lossy, 4).unwrap();
    assert!(r.ssim < 1.0 && r.nmse > 0.0);
    assert_eq!(r.n_slices, 3);
    assert!(evaluate::<f32>(Reconstructor::ZeroFill, &[], 4).is_err());
}

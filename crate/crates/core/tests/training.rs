mod common;

use flexdet::data::{generate_dataset, DatasetSpec};
use flexdet::nas::SearchSpace;
use flexdet::train::{train, train_step, Checkpoint, TrainSample, TrainState, TrainerConfig};
use flexdet::Error;

use common::weights;

fn tiny_dims() -> flexdet::ModelDims {
    flexdet::ModelDims {
        num_classes: 3,
        ..common::tiny_dims()
    }
}

fn space() -> SearchSpace {
    SearchSpace {
        resolutions: vec![8, 16],
        patch_sizes: vec![4],
        window_counts: vec![1, 2],
        decoder_depths: vec![0, 1, 2],
        query_counts: vec![3],
        mask_head: true,
    }
}

fn samples(n: usize) -> Vec<TrainSample<f64>> {
    generate_dataset(&DatasetSpec::new(n, 32, 21))
        .unwrap()
        .train_samples(true)
        .unwrap()
}

fn cfg(steps: u64, batch_size: usize) -> TrainerConfig {
    TrainerConfig {
        base_lr: 1e-3,
        batch_size,
        steps,
        ..TrainerConfig::default()
    }
}

#[test]
fn resolutions_are_drawn_uniformly_and_schedule_is_constant() {
    let data = samples(6);
    let mut state = TrainState::new(weights::<f64>(tiny_dims(), 0), 1e-4, 1);
    let c = cfg(600, 1);
    let logs = train(&mut state, &data, &space(), &c, |_, _| Ok(())).unwrap();
    assert_eq!(logs.len(), 600);
    let small = logs.iter().filter(|l| l.config.resolution == 8).count();
    // Binomial(600, 1/2) has standard deviation 12.2; allow about 5 sigma.
    assert!((240..=360).contains(&small), "{small} of 600 steps at resolution 8");
    for depth in 0..3 {
        assert!(logs.iter().any(|l| l.config.num_decoder_layers == depth));
    }
    let first = &logs[0];
    for l in &logs {
        assert_eq!(l.base_lr, c.base_lr);
        assert_eq!(l.group_lrs, first.group_lrs);
        assert_eq!(l.augment, c.augment);
    }
    // Layer-wise rates: the top encoder block trains at the base rate.
    let top = first.group_lrs.iter().find(|g| g.group == "encoder.1").unwrap();
    let bottom = first.group_lrs.iter().find(|g| g.group == "encoder.0").unwrap();
    assert_eq!(top.lr, c.base_lr);
    assert!((bottom.lr - 0.8 * c.base_lr).abs() < 1e-15);
}

#[test]
fn loss_goes_down() {
    let data = samples(4);
    let mut state = TrainState::new(weights::<f64>(tiny_dims(), 2), 1e-4, 2);
    let logs = train(&mut state, &data, &space(), &cfg(400, 2), |_, _| Ok(())).unwrap();
    let mean = |ls: &[flexdet::train::StepLog]| ls.iter().map(|l| l.loss.total).sum::<f64>() / ls.len() as f64;
    let (early, late) = (mean(&logs[..50]), mean(&logs[350..]));
    assert!(late < 0.8 * early, "early {early}, late {late}");
    assert!(logs.iter().all(|l| l.grad_norm.is_finite()));
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let data = samples(4);
    let start = || TrainState::new(weights::<f64>(tiny_dims(), 3), 1e-4, 9);

    let mut straight = start();
    let all = train(&mut straight, &data, &space(), &cfg(12, 2), |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut first = start();
    train(&mut first, &data, &space(), &cfg(5, 2), |_, _| Ok(())).unwrap();
    Checkpoint::capture(&first).save(&path).unwrap();
    drop(first);
    let mut resumed = Checkpoint::<f64>::load(&path).unwrap().restore().unwrap();
    assert_eq!(resumed.step, 5);
    let rest = train(&mut resumed, &data, &space(), &cfg(12, 2), |_, _| Ok(())).unwrap();

    assert_eq!(rest.len(), 7);
    for (a, b) in all[5..].iter().zip(&rest) {
        assert_eq!(a.loss.total.to_bits(), b.loss.total.to_bits());
        assert_eq!(a.config, b.config);
    }
    assert_eq!(resumed.weights.params(), straight.weights.params());
    assert_eq!(resumed.ema.params(), straight.ema.params());
    assert_eq!(resumed.optimizer, straight.optimizer);
}

#[test]
fn non_finite_loss_stops_training() {
    let data = samples(2);
    let mut w = weights::<f64>(tiny_dims(), 4);
    let id = w.id_of("patch_embed.kernel").expect("patch kernel name");
    w.get_mut(id).data_mut()[0] = f64::NAN;
    let mut state = TrainState::new(w, 1e-4, 0);
    let err = train_step(&mut state, &data[..1], &space(), &cfg(1, 1)).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 1, .. }), "{err}");
}

#[test]
fn unknown_class_is_rejected() {
    let mut data = samples(1);
    data[0].annotations.class_ids[0] = 2;
    let mut state = TrainState::new(weights::<f64>(common::tiny_dims(), 0), 1e-4, 0);
    let err = train(&mut state, &data, &space(), &cfg(1, 1), |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn trainer_config_from_toml() {
    let c = TrainerConfig::from_toml_str("base_lr = 0.002\nsteps = 50\n[augment]\nflip_prob = 0.0\ncrop_prob = 0.25\nmin_crop_scale = 0.5\nmin_retention = 0.3\n").unwrap();
    assert_eq!(c.base_lr, 0.002);
    assert_eq!(c.steps, 50);
    assert_eq!(c.batch_size, 16);
    assert_eq!(c.augment.crop_prob, 0.25);
    assert!(TrainerConfig::from_toml_str("base_lr = \"fast\"").is_err());
    assert!(TrainerConfig { ema_decay: 1.0, ..c }.validate().is_err());
}

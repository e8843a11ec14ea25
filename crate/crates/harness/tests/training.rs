mod common;

use common::{small_config, small_dataset};
use indexmap::IndexMap;
use loga_core::ParameterStore;
use loga_harness::{train, AdamW, Checkpoint, HarnessError, TrainConfig, Trainer};
use loga_tensor::Tensor;

#[test]
fn zero_epochs_returns_the_initialization() {
    let d = small_dataset();
    let config = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let init = Trainer::new(config.clone(), &d).unwrap().model.params;
    let out = train(config, &d).unwrap();
    assert!(out.steps.is_empty());
    assert_eq!(out.checkpoint.epoch, 0);
    assert_eq!(out.checkpoint.optimizer.t, 0);
    assert_eq!(out.checkpoint.params, init);
}

#[test]
fn zero_learning_rate_only_moves_running_statistics() {
    let d = small_dataset();
    let config = TrainConfig {
        learning_rate: 0.0,
        max_steps: Some(1),
        ..small_config()
    };
    let init = Trainer::new(config.clone(), &d).unwrap().model.params;
    let out = train(config, &d).unwrap();
    assert_eq!(out.steps.len(), 1);
    let after = &out.checkpoint.params;
    for (name, value) in init.params() {
        assert_eq!(after.get(name).unwrap(), value, "{name} changed");
    }
    let moved = init
        .running_stats()
        .filter(|(layer, s)| after.running(layer).unwrap() != *s)
        .count();
    assert_eq!(moved, 3, "query/key/value statistics should all update");
}

#[test]
fn training_is_deterministic_per_seed() {
    let d = small_dataset();
    let a = train(small_config(), &d).unwrap();
    let b = train(small_config(), &d).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = train(TrainConfig { seed: 1, ..small_config() }, &d).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let d = small_dataset();
    let full = train(small_config(), &d).unwrap();

    let half = train(TrainConfig { epochs: 1, ..small_config() }, &d).unwrap();
    let mut ckpt = Checkpoint::from_bytes(&half.checkpoint.to_bytes()).unwrap();
    ckpt.train.epochs = 2;
    let mut t = Trainer::resume(ckpt, &d).unwrap();
    let mut steps = half.steps.clone();
    t.run(&mut |s| steps.push(s.clone()), &mut |_, _| Ok(())).unwrap();

    assert_eq!(steps, full.steps);
    assert_eq!(t.checkpoint(), full.checkpoint);
}

#[test]
fn every_strategy_trains_and_lowers_the_loss() {
    let d = small_dataset();
    for name in loga_harness::ablate::strategy_names() {
        let out = train(
            TrainConfig {
                strategy: name.into(),
                epochs: 6,
                learning_rate: 3e-3,
                ..small_config()
            },
            &d,
        )
        .unwrap();
        let first = out.epochs.first().unwrap().mean_total;
        let last = out.epochs.last().unwrap().mean_total;
        assert!(last < first, "{name}: {first} -> {last}");
    }
}

#[test]
fn non_finite_loss_aborts_with_the_batch_clips() {
    let d = small_dataset();
    let mut t = Trainer::new(small_config(), &d).unwrap();
    t.model.params.get_mut("classifier.bias").unwrap().data_mut()[0] = f32::NAN;
    match t.train_step() {
        Err(HarnessError::NonFinite { step, clips, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(clips.len(), 8);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn updates_shrink_tenfold_at_each_decay_boundary() {
    let config = TrainConfig::default();
    let grads = IndexMap::from([("w".to_string(), Tensor::<f64>::full([3], 0.25))]);
    let update = |epoch: usize| {
        let mut s = ParameterStore::<f64>::new();
        s.insert("w", Tensor::full([3], 1.0));
        let mut opt = AdamW::new(0.0);
        opt.step(&mut s, &grads, config.lr_at(epoch));
        1.0 - s.get("w").unwrap().data()[0]
    };
    for boundary in [60, 120, 180] {
        let before = update(boundary - 1);
        let after = update(boundary);
        assert_eq!(update(boundary - 60), before);
        assert!((after / before - 0.1).abs() < 1e-9, "{boundary}: {}", after / before);
    }
}

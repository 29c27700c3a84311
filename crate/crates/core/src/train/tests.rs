use super::*;
use crate::data::{build_forget_set, gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec};
use crate::nn::{self, LayerSpec, ModelSpec};

fn tiny_dataset(seed: u64) -> crate::data::DatasetBundle {
    gen_dataset(&DatasetSpec {
        class_count: 4,
        train_per_class: 10,
        val_per_class: 10,
        test_per_class: 4,
        height: 16,
        width: 16,
        seed,
    })
    .unwrap()
}

fn tiny_model(seed: u64) -> ModelSpec {
    ModelSpec {
        input_shape: (3, 16, 16),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 4 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 4 },
        ],
        class_count: 4,
        seed,
    }
}

#[test]
fn zero_learning_rate_descent_is_identity() {
    let ds = tiny_dataset(1);
    let spec = tiny_model(2);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::finetune_default(1, 7)
    };
    let run = train(&w0, &spec, &ds.train, &cfg).unwrap();
    assert_eq!(run.weights.values, w0.values);
}

#[test]
fn zero_learning_rate_ascent_is_identity() {
    let ds = tiny_dataset(1);
    let spec = tiny_model(2);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::blended(0, 5);
    let forget = build_forget_set(&ds.val, 8, &t, 0.0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::ascent_default(3)
    };
    let stop = StopPolicy {
        max_epochs: 1,
        ca_floor: None,
    };
    let val_trig = stamp_eval_set(&ds.test, &t, 1).unwrap();
    let eval = AscentEval {
        clean_val: &ds.test,
        triggered_val: &val_trig,
        target: 0,
        ca_reference: 1.0,
    };
    let run = gradient_ascent(&w0, &spec, &forget, &cfg, &stop, &eval).unwrap();
    assert_eq!(run.weights.values, w0.values);
}

#[test]
fn one_ascent_step_is_exactly_w_plus_lr_grad() {
    let ds = tiny_dataset(4);
    let spec = tiny_model(5);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::blended(1, 6);
    // Single-item forget set: one step, no shuffling ambiguity.
    let forget = build_forget_set(&ds.val, 1, &t, 0.0).unwrap();
    let lr = 1e-2;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: 64,
        ..TrainConfig::ascent_default(9)
    };
    let stop = StopPolicy {
        max_epochs: 1,
        ca_floor: None,
    };
    let val_trig = stamp_eval_set(&ds.test, &t, 1).unwrap();
    let eval = AscentEval {
        clean_val: &ds.test,
        triggered_val: &val_trig,
        target: 1,
        ca_reference: 0.0,
    };
    let run = gradient_ascent(&w0, &spec, &forget, &cfg, &stop, &eval).unwrap();
    let (_, grad) = nn::loss_and_grad(&w0, &spec, &forget.batch).unwrap();
    let expected: Vec<f32> = w0
        .values
        .iter()
        .zip(&grad.values)
        .map(|(w, g)| w + (lr as f32) * g)
        .collect();
    assert_eq!(run.weights.values, expected);
}

#[test]
fn non_finite_loss_aborts_descent_with_diagnostics() {
    let ds = tiny_dataset(2);
    let spec = tiny_model(3);
    // Weights large enough that the forward pass overflows f32.
    let mut w0 = nn::init(&spec).unwrap();
    for v in &mut w0.values {
        *v = 1e30;
    }
    let cfg = TrainConfig::finetune_default(3, 1);
    match train(&w0, &spec, &ds.train, &cfg) {
        Err(crate::error::Error::NonFiniteLoss { epoch, history, .. }) => {
            assert_eq!(epoch, 0);
            assert!(!history.is_empty());
        }
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|r| r.history)),
    }
}

#[test]
fn training_is_bit_deterministic_across_thread_counts() {
    let ds = tiny_dataset(3);
    let spec = tiny_model(4);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig::finetune_default(2, 11);
    let run_in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| train(&w0, &spec, &ds.train, &cfg).unwrap())
    };
    let a = run_in_pool(1);
    let b = run_in_pool(3);
    assert_eq!(a.weights.values, b.weights.values);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
    }
}

#[test]
fn repeated_runs_share_no_optimizer_state() {
    let ds = tiny_dataset(3);
    let spec = tiny_model(4);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig::finetune_default(1, 11);
    let a = train(&w0, &spec, &ds.train, &cfg).unwrap();
    let b = train(&w0, &spec, &ds.train, &cfg).unwrap();
    assert_eq!(a.weights.values, b.weights.values);
}

#[test]
fn descent_loss_decreases_over_epochs() {
    let ds = tiny_dataset(6);
    let spec = tiny_model(7);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::finetune_default(5, 13)
    };
    let run = train(&w0, &spec, &ds.train, &cfg).unwrap();
    let first = run.history.first().unwrap().mean_loss;
    let last = run.history.last().unwrap().mean_loss;
    assert!(last <= first, "loss went up: {first} -> {last}");
}

#[test]
fn implant_records_provenance() {
    let ds = tiny_dataset(8);
    let spec = tiny_model(9);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::badnet(2, 21);
    let cfg = TrainConfig::finetune_default(1, 5);
    let run = implant_backdoor(&w0, &spec, &ds.train, &t, 0.1, 77, &cfg).unwrap();
    assert_eq!(run.provenance.trigger_hash, t.content_hash());
    assert_eq!(run.provenance.rate, 0.1);
    assert_eq!(run.provenance.poison_item_ids.len(), 4); // 10% of 40
    for id in &run.provenance.poison_item_ids {
        assert!(ds.train.item_ids.contains(id));
    }
}

#[test]
fn implant_rate_zero_equals_plain_finetune() {
    let ds = tiny_dataset(8);
    let spec = tiny_model(9);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::badnet(2, 21);
    let cfg = TrainConfig::finetune_default(1, 5);
    let a = implant_backdoor(&w0, &spec, &ds.train, &t, 0.0, 77, &cfg).unwrap();
    let b = train(&w0, &spec, &ds.train, &cfg).unwrap();
    assert_eq!(a.weights.values, b.weights.values);
}

#[test]
fn estimate_with_zero_lr_gives_zero_vector() {
    let ds = tiny_dataset(10);
    let spec = tiny_model(11);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::sig(1);
    let forget = build_forget_set(&ds.val, 16, &t, 0.0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::forget_default(3)
    };
    let (tau, history) = estimate_trigger_vector(&w0, &spec, &forget, &cfg).unwrap();
    assert!(tau.values.iter().all(|&v| v == 0.0));
    assert_eq!(tau.layout, w0.layout);
    assert_eq!(history.len(), 1);
    assert_eq!(tau.provenance.source, "estimate_trigger_vector");
    assert_eq!(tau.provenance.trigger_hash, Some(t.content_hash()));
}

#[test]
fn estimate_rejects_non_forget_sets() {
    let ds = tiny_dataset(10);
    let spec = tiny_model(11);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig::forget_default(3);
    assert!(estimate_trigger_vector(&w0, &spec, &ds.val, &cfg).is_err());
}

#[test]
fn ascent_stop_fires_on_ca_floor() {
    let ds = tiny_dataset(12);
    let spec = tiny_model(13);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::blended(0, 4);
    let forget = build_forget_set(&ds.val, 8, &t, 0.0).unwrap();
    let cfg = TrainConfig::ascent_default(2);
    let stop = StopPolicy {
        max_epochs: 5,
        ca_floor: Some(0.9),
    };
    let val_trig = stamp_eval_set(&ds.test, &t, 1).unwrap();
    // An unreachable reference CA forces the floor to fire after epoch 1.
    let eval = AscentEval {
        clean_val: &ds.test,
        triggered_val: &val_trig,
        target: 0,
        ca_reference: 2.0,
    };
    let run = gradient_ascent(&w0, &spec, &forget, &cfg, &stop, &eval).unwrap();
    assert!(run.stopped_by_floor);
    assert_eq!(run.trajectory.len(), 1);
}

#[test]
fn ascent_requires_constant_schedule() {
    let cfg = TrainConfig {
        direction: Direction::Ascent,
        schedule: Schedule::CosineWarmup { warmup_steps: 5 },
        ..TrainConfig::ascent_default(0)
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn clean_finetune_rejects_poisoned_sets() {
    let ds = tiny_dataset(14);
    let spec = tiny_model(15);
    let w0 = nn::init(&spec).unwrap();
    let t = TriggerSpec::blended(0, 4);
    let poisoned = crate::data::poison(&ds.train, 0.5, &t, 3).unwrap();
    let cfg = TrainConfig::finetune_default(1, 1);
    assert!(clean_finetune(&w0, &spec, &poisoned, &cfg).is_err());
    assert!(clean_finetune(&w0, &spec, &ds.train, &cfg).is_ok());
}

#[test]
fn snapshots_cover_every_epoch_and_end_at_final_weights() {
    let ds = tiny_dataset(16);
    let spec = tiny_model(17);
    let w0 = nn::init(&spec).unwrap();
    let cfg = TrainConfig::finetune_default(3, 21);
    let (run, snaps) = train_with_snapshots(&w0, &spec, &ds.train, &cfg).unwrap();
    assert_eq!(snaps.len(), 3);
    assert_eq!(snaps.last().unwrap().values, run.weights.values);
}

#[test]
fn cosine_warmup_schedule_shape() {
    let cfg = TrainConfig {
        learning_rate: 1.0,
        schedule: Schedule::CosineWarmup { warmup_steps: 10 },
        ..TrainConfig::finetune_default(1, 0)
    };
    // Ramps during warmup.
    assert!(schedule_lr(&cfg, 0, 100) < schedule_lr(&cfg, 9, 100));
    assert!((schedule_lr(&cfg, 9, 100) - 1.0).abs() < 1e-12);
    // Decays after warmup to ~0 at the last step.
    assert!(schedule_lr(&cfg, 50, 100) < 1.0);
    assert!(schedule_lr(&cfg, 99, 100) < 1e-3);
}

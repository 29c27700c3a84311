use super::*;
use crate::data::{gen_dataset, DatasetSpec};
use crate::nn::{self, Batch, LayerSpec, ModelSpec, WeightVector};

fn flat_trigger(mask_val: f32, pattern_val: f32, shape: (usize, usize, usize)) -> InvertedTrigger {
    let (c, h, w) = shape;
    let mask = vec![mask_val; h * w];
    let pattern = vec![pattern_val; c * h * w];
    let (l1, p_l1) = InvertedTrigger::compute_norms(&mask, shape);
    InvertedTrigger {
        mask,
        pattern,
        shape,
        l1_norm: l1,
        p_l1_norm: p_l1,
        objective: "test".into(),
        lambda: 0.0,
        steps: 0,
        trace: Vec::new(),
    }
}

#[test]
fn stamp_zero_mask_is_identity() {
    let shape = (3, 8, 8);
    let img: Vec<f32> = (0..192).map(|i| (i % 17) as f32 / 16.0).collect();
    let t = flat_trigger(0.0, 0.9, shape);
    let out = stamp(&img, &t).unwrap();
    assert_eq!(out, img);
}

#[test]
fn stamp_full_mask_is_pattern() {
    let shape = (3, 8, 8);
    let img = vec![0.3f32; 192];
    let t = flat_trigger(1.0, 0.9, shape);
    let out = stamp(&img, &t).unwrap();
    assert!(out.iter().all(|&p| p == 0.9));
}

#[test]
fn stamp_half_mask_mixes() {
    let shape = (3, 8, 8);
    let img = vec![0.2f32; 192];
    let t = flat_trigger(0.5, 0.8, shape);
    let out = stamp(&img, &t).unwrap();
    assert!(out.iter().all(|&p| p == 0.5));
}

#[test]
fn stamp_preserves_pixel_range() {
    let shape = (3, 8, 8);
    let mut rng = crate::rng::CounterRng::new(1, 1);
    for _ in 0..20 {
        let img: Vec<f32> = (0..192).map(|_| rng.next_f32()).collect();
        let t = flat_trigger(rng.next_f32(), rng.next_f32(), shape);
        let out = stamp(&img, &t).unwrap();
        assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn detect_equal_triggers_not_flagged() {
    let shape = (3, 8, 8);
    let t = flat_trigger(0.4, 0.5, shape);
    let v = detect(&t, &t, 0.33).unwrap();
    assert_eq!(v.ratio, 1.0);
    assert!(!v.flagged);
}

#[test]
fn detect_flags_the_reported_magnitude_gap() {
    // The reported normalized sizes: suspect 2.12%, reference 14.74%.
    let shape = (3, 8, 8);
    let mut suspect = flat_trigger(0.0, 0.5, shape);
    suspect.p_l1_norm = 0.0212;
    let mut reference = flat_trigger(0.0, 0.5, shape);
    reference.p_l1_norm = 0.1474;
    let v = detect(&suspect, &reference, 0.33).unwrap();
    assert!((v.ratio - 0.1438).abs() < 1e-3);
    assert!(v.flagged);
}

#[test]
fn detect_threshold_zero_never_flags() {
    let shape = (3, 8, 8);
    let suspect = flat_trigger(0.1, 0.5, shape);
    let reference = flat_trigger(0.4, 0.5, shape);
    let v = detect(&suspect, &reference, 0.0).unwrap();
    assert!(!v.flagged);
}

#[test]
fn detect_rejects_degenerate_reference() {
    let shape = (3, 8, 8);
    let suspect = flat_trigger(0.1, 0.5, shape);
    let reference = flat_trigger(0.0, 0.5, shape);
    assert!(detect(&suspect, &reference, 0.33).is_err());
}

#[test]
fn detect_is_invariant_to_uniform_rescale() {
    let shape = (3, 8, 8);
    let mut s = flat_trigger(0.0, 0.5, shape);
    let mut r = flat_trigger(0.0, 0.5, shape);
    s.p_l1_norm = 0.02;
    r.p_l1_norm = 0.10;
    let v1 = detect(&s, &r, 0.33).unwrap();
    s.p_l1_norm *= 3.0;
    r.p_l1_norm *= 3.0;
    let v2 = detect(&s, &r, 0.33).unwrap();
    assert!((v1.ratio - v2.ratio).abs() < 1e-12);
    assert_eq!(v1.flagged, v2.flagged);
}

fn probe_set(shape: (usize, usize, usize), images: Vec<f32>, labels: Vec<u16>) -> LabeledImageSet {
    let n = labels.len();
    LabeledImageSet {
        batch: Batch::new(images, shape, labels).unwrap(),
        poison_mask: vec![false; n],
        origin: Origin::Clean,
        item_ids: (0..n as u64).collect(),
    }
}

#[test]
fn identify_constant_model_returns_its_class() {
    // Final dense bias forces class 2 regardless of input.
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 4 }],
        class_count: 4,
        seed: 0,
    };
    let plan = spec.plan().unwrap();
    let mut w = WeightVector::zeros(plan.layout());
    // dense bias entry is the last 4 values.
    let n = w.total_len();
    w.values[n - 4 + 2] = 5.0;
    let t = flat_trigger(0.5, 0.5, (1, 4, 4));
    let set = probe_set((1, 4, 4), vec![0.5; 5 * 16], vec![0, 1, 2, 3, 0]);
    let (class, confidence) = identify_target_class(&w, &spec, &t, &set).unwrap();
    assert_eq!(class, 2);
    assert_eq!(confidence, 1.0);
}

#[test]
fn identify_breaks_vote_ties_toward_lowest_class() {
    // Weights: class 0 logit = 5 * pixel0 ; class 1 logit = fixed 1.0.
    // A stamped pixel0 of 1.0 picks class 0; of 0.0 picks class 1.
    let spec = ModelSpec {
        input_shape: (1, 2, 2),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }],
        class_count: 2,
        seed: 0,
    };
    let plan = spec.plan().unwrap();
    let mut w = WeightVector::zeros(plan.layout());
    w.values[0] = 5.0; // dense.weight[class 0][pixel 0]
    let n = w.total_len();
    w.values[n - 2 + 1] = 1.0; // bias of class 1
    // Identity-ish trigger: mask 0 so probes pass through unchanged.
    let t = flat_trigger(0.0, 0.0, (1, 2, 2));
    let images = vec![
        1.0, 0.0, 0.0, 0.0, // -> class 0 (logit 5 vs 1)
        0.0, 0.0, 0.0, 0.0, // -> class 1 (logit 0 vs 1)
    ];
    let set = probe_set((1, 2, 2), images, vec![0, 0]);
    let (class, confidence) = identify_target_class(&w, &spec, &t, &set).unwrap();
    assert_eq!(class, 0);
    assert_eq!(confidence, 0.5);
}

#[test]
fn logit_shift_of_identical_models_is_zero() {
    let ds = gen_dataset(&DatasetSpec {
        class_count: 3,
        train_per_class: 2,
        val_per_class: 4,
        test_per_class: 2,
        height: 16,
        width: 16,
        seed: 3,
    })
    .unwrap();
    let spec = ModelSpec {
        input_shape: (3, 16, 16),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 3 }],
        class_count: 3,
        seed: 7,
    };
    let w = nn::init(&spec).unwrap();
    let (class, shifts) = logit_shift_target(&w, &w, &spec, &ds.val).unwrap();
    assert_eq!(class, 0);
    assert!(shifts.iter().all(|&s| s == 0.0));
}

#[test]
fn logit_shift_table_sums_to_zero() {
    let ds = gen_dataset(&DatasetSpec {
        class_count: 4,
        train_per_class: 2,
        val_per_class: 6,
        test_per_class: 2,
        height: 16,
        width: 16,
        seed: 5,
    })
    .unwrap();
    let spec = ModelSpec {
        input_shape: (3, 16, 16),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 4 }],
        class_count: 4,
        seed: 9,
    };
    let a = nn::init(&spec).unwrap();
    let b = nn::init(&ModelSpec { seed: 10, ..spec.clone() }).unwrap();
    let (_, shifts) = logit_shift_target(&a, &b, &spec, &ds.val).unwrap();
    let total: f64 = shifts.iter().sum();
    assert!(total.abs() <= 1e-5, "shift sum {total}");
}

#[test]
fn huge_lambda_drives_mask_to_zero() {
    let ds = gen_dataset(&DatasetSpec {
        class_count: 3,
        train_per_class: 2,
        val_per_class: 6,
        test_per_class: 2,
        height: 16,
        width: 16,
        seed: 6,
    })
    .unwrap();
    let spec = ModelSpec {
        input_shape: (3, 16, 16),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 8 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 3 },
        ],
        class_count: 3,
        seed: 8,
    };
    let w = nn::init(&spec).unwrap();
    let cfg = InversionConfig {
        lambda: 1e3,
        steps: 200,
        learning_rate: 0.2,
        batch_size: 8,
    };
    let t = invert_trigger(
        &w,
        &spec,
        &ds.val,
        InversionObjective::EmbeddingSimilarity,
        &cfg,
    )
    .unwrap();
    assert!(t.l1_norm < 1e-2, "mask l1 {}", t.l1_norm);
}

#[test]
fn class_targeted_inversion_finds_a_planted_pixel_backdoor() {
    // Linear model where one pixel's weight alone flips the prediction to the
    // target class.
    let shape = (3usize, 8usize, 8usize);
    let spec = ModelSpec {
        input_shape: shape,
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }],
        class_count: 2,
        seed: 0,
    };
    let plan = spec.plan().unwrap();
    let mut w = WeightVector::zeros(plan.layout());
    let (c, h, wd) = shape;
    let in_f = c * h * wd;
    let hot_pixel = 27usize; // spatial index within the first channel
    // Class 0: mild positive weight on every pixel.
    for i in 0..in_f {
        w.values[i] = 0.05;
    }
    // Class 1 (target): large weight on a single pixel.
    w.values[in_f + hot_pixel] = 10.0;

    // Clean probe images: random pixels (the model is synthetic anyway).
    let mut rng = crate::rng::CounterRng::new(12, 0);
    let n = 10;
    let images: Vec<f32> = (0..n * in_f).map(|_| rng.next_f32()).collect();
    let clean = probe_set(shape, images, vec![0; n]);
    let cfg = InversionConfig {
        lambda: 0.05,
        steps: 300,
        learning_rate: 0.15,
        batch_size: 8,
    };
    let t = invert_trigger(
        &w,
        &spec,
        &clean,
        InversionObjective::ClassTargeted { target: 1 },
        &cfg,
    )
    .unwrap();
    let total: f64 = t.mask.iter().map(|&m| m as f64).sum();
    let at_pixel = t.mask[hot_pixel] as f64;
    assert!(
        at_pixel >= 0.5 * total,
        "mask mass at planted pixel {at_pixel:.4} of {total:.4}"
    );
}

#[test]
fn best_so_far_objective_is_non_increasing() {
    let ds = gen_dataset(&DatasetSpec {
        class_count: 3,
        train_per_class: 2,
        val_per_class: 6,
        test_per_class: 2,
        height: 16,
        width: 16,
        seed: 9,
    })
    .unwrap();
    let spec = ModelSpec {
        input_shape: (3, 16, 16),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 3 },
        ],
        class_count: 3,
        seed: 4,
    };
    let w = nn::init(&spec).unwrap();
    let cfg = InversionConfig {
        steps: 60,
        ..InversionConfig::default()
    };
    let t = invert_trigger(
        &w,
        &spec,
        &ds.val,
        InversionObjective::ClassTargeted { target: 0 },
        &cfg,
    )
    .unwrap();
    let mut best = f64::INFINITY;
    let mut bests = Vec::new();
    for row in &t.trace {
        best = best.min(row.objective);
        bests.push(best);
    }
    for pair in bests.windows(2) {
        assert!(pair[1] <= pair[0]);
    }
}

#[test]
fn proxy_forget_set_contract() {
    let ds = gen_dataset(&DatasetSpec {
        class_count: 3,
        train_per_class: 2,
        val_per_class: 6,
        test_per_class: 2,
        height: 16,
        width: 16,
        seed: 10,
    })
    .unwrap();
    let t = flat_trigger(0.3, 0.7, (3, 16, 16));
    let fs = build_proxy_forget_set(&t, 2, &ds.val, 5).unwrap();
    assert_eq!(fs.len(), 5);
    assert!(fs.batch.labels.iter().all(|&l| l == 2));
    assert!(fs.origin.is_forget());

    let empty = build_proxy_forget_set(&t, 2, &ds.val, 0).unwrap();
    assert_eq!(empty.len(), 0);

    assert!(build_proxy_forget_set(&t, 2, &ds.val, ds.val.len() + 1).is_err());
}

#[test]
fn trigger_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tbtr");
    let mut t = flat_trigger(0.25, 0.75, (3, 8, 8));
    t.trace = vec![TraceRow {
        step: 0,
        objective: -0.5,
        l1: 16.0,
    }];
    save_trigger(&t, &path).unwrap();
    let r = load_trigger(&path).unwrap();
    assert_eq!(t, r);
}

use crate::data::LabeledImageSet;

use super::*;
use crate::nn::{self, LayerSpec, ModelSpec};
use proptest::prelude::*;

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        class_count: 4,
        train_per_class: 8,
        val_per_class: 4,
        test_per_class: 4,
        height: 32,
        width: 32,
        seed,
    }
}

#[test]
fn gen_same_spec_bit_identical() {
    let spec = small_spec(5);
    let a = gen_dataset(&spec).unwrap();
    let b = gen_dataset(&spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_counts_and_labels_exact() {
    let spec = DatasetSpec {
        class_count: 10,
        train_per_class: 100,
        val_per_class: 2,
        test_per_class: 2,
        height: 32,
        width: 32,
        seed: 3,
    };
    let ds = gen_dataset(&spec).unwrap();
    assert_eq!(ds.train.len(), 1000);
    let hist = ds.train.class_histogram(10);
    assert!(hist.iter().all(|&c| c == 100), "{hist:?}");
}

#[test]
fn gen_splits_have_disjoint_item_ids() {
    let ds = gen_dataset(&small_spec(9)).unwrap();
    let mut all: Vec<u64> = ds
        .train
        .item_ids
        .iter()
        .chain(&ds.val.item_ids)
        .chain(&ds.test.item_ids)
        .copied()
        .collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), n);
}

#[test]
fn gen_rejects_tiny_images() {
    let mut spec = small_spec(1);
    spec.height = 12;
    assert!(gen_dataset(&spec).is_err());
}

#[test]
fn gen_different_seeds_render_differently() {
    let a = gen_dataset(&small_spec(1)).unwrap();
    let b = gen_dataset(&small_spec(2)).unwrap();
    assert_ne!(a.train.batch.images, b.train.batch.images);
}

#[test]
fn linear_probe_separates_classes() {
    // Raw-pixel linear probe: one dense layer trained by plain gradient steps.
    let spec = DatasetSpec {
        class_count: 10,
        train_per_class: 40,
        val_per_class: 1,
        test_per_class: 20,
        height: 32,
        width: 32,
        seed: 7,
    };
    let ds = gen_dataset(&spec).unwrap();
    let probe_spec = ModelSpec {
        input_shape: (3, 32, 32),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 10 }],
        class_count: 10,
        seed: 0,
    };
    let mut w = nn::init(&probe_spec).unwrap();
    for _ in 0..60 {
        let (_, g) = nn::loss_and_grad(&w, &probe_spec, &ds.train.batch).unwrap();
        for (wi, gi) in w.values.iter_mut().zip(&g.values) {
            *wi -= 0.5 * gi;
        }
    }
    let logits = nn::forward(&w, &probe_spec, &ds.test.batch).unwrap();
    let correct = ds
        .test
        .batch
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = &logits[i * 10..(i + 1) * 10];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            pred == l as usize
        })
        .count();
    let acc = correct as f64 / ds.test.len() as f64;
    assert!(acc >= 0.60, "linear probe accuracy {acc:.3} below 0.60");
}

#[test]
fn blended_pixel_math_matches_formula() {
    // x = 0.8 x + 0.2 N with x = 1.0, N = 0.5 gives 0.9.
    assert_eq!(blended_mix(1.0, 0.5, 0.2).to_bits(), 0.9f32.to_bits());
    assert_eq!(blended_mix(0.0, 1.0, 0.2).to_bits(), 0.2f32.to_bits());
}

fn const_image(v: f32, shape: (usize, usize, usize)) -> Vec<f32> {
    vec![v; shape.0 * shape.1 * shape.2]
}

#[test]
fn wanet_zero_strength_is_identity() {
    let shape = (3, 32, 32);
    let ds = gen_dataset(&small_spec(4)).unwrap();
    let img = ds.train.batch.image(0);
    let t = TriggerSpec {
        kind: TriggerKind::Wanet {
            control_grid: 32,
            strength: 0.0,
            warp_seed: 12,
        },
        target_label: 0,
    };
    let out = apply_trigger(img, shape, &t, 77).unwrap();
    assert_eq!(out, img);
}

#[test]
fn wanet_nonzero_strength_warps() {
    let shape = (3, 32, 32);
    let ds = gen_dataset(&small_spec(4)).unwrap();
    let img = ds.train.batch.image(0);
    let t = TriggerSpec::wanet(0, 32, 12);
    let out = apply_trigger(img, shape, &t, 77).unwrap();
    assert_ne!(out, img.to_vec());
    assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn sig_zero_crossing_column_unchanged() {
    let shape = (3, 32, 32);
    let img = const_image(0.4, shape);
    let t = TriggerSpec::sig(0);
    let out = apply_trigger(&img, shape, &t, 0).unwrap();
    let (c, h, w) = shape;
    // j = 0 is an exact zero crossing of the wave.
    assert_eq!(sig_wave(60.0 / 255.0, 6.0, 0, w), 0.0);
    for ch in 0..c {
        for y in 0..h {
            assert_eq!(out[ch * h * w + y * w].to_bits(), img[0].to_bits());
        }
    }
    // Some other column must have moved.
    assert_ne!(out, img);
}

#[test]
fn sig_wave_shared_across_channels_and_rows() {
    let shape = (3, 32, 32);
    let img = const_image(0.5, shape);
    let t = TriggerSpec::sig(0);
    let out = apply_trigger(&img, shape, &t, 0).unwrap();
    let (c, h, w) = shape;
    for j in 0..w {
        let reference = out[j];
        for ch in 0..c {
            for y in 0..h {
                assert_eq!(out[ch * h * w + y * w + j].to_bits(), reference.to_bits());
            }
        }
    }
}

#[test]
fn badnet_changes_exactly_one_patch_block() {
    let shape = (3, 32, 32);
    let img = const_image(0.5, shape);
    let t = TriggerSpec::badnet(0, 42);
    let out = apply_trigger(&img, shape, &t, 1234).unwrap();
    let (c, h, w) = shape;
    let mut changed = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let diff = (0..c).any(|ch| out[ch * h * w + y * w + x] != img[ch * h * w + y * w + x]);
            if diff {
                changed.push((y, x));
            }
        }
    }
    assert_eq!(changed.len(), 16, "expected a 4x4 block, got {changed:?}");
    let (y0, x0) = changed[0];
    for (y, x) in &changed {
        assert!(y - y0 < 4 && x - x0 < 4, "changed pixel outside block");
    }
}

#[test]
fn badnet_fixed_placement_is_idempotent() {
    let shape = (3, 32, 32);
    let ds = gen_dataset(&small_spec(8)).unwrap();
    let img = ds.train.batch.image(1);
    let t = TriggerSpec {
        kind: TriggerKind::Badnet {
            patch_side: 4,
            placement: Placement::Fixed { x: 5, y: 7 },
            noise_seed: 3,
        },
        target_label: 0,
    };
    let once = apply_trigger(img, shape, &t, 0).unwrap();
    let twice = apply_trigger(&once, shape, &t, 0).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn badnet_patch_must_fit() {
    let shape = (3, 32, 32);
    let img = const_image(0.5, shape);
    let t = TriggerSpec {
        kind: TriggerKind::Badnet {
            patch_side: 40,
            placement: Placement::Random,
            noise_seed: 0,
        },
        target_label: 0,
    };
    assert!(apply_trigger(&img, shape, &t, 0).is_err());
}

#[test]
fn poison_exact_count_at_three_percent() {
    let spec = DatasetSpec {
        class_count: 10,
        train_per_class: 100,
        val_per_class: 1,
        test_per_class: 1,
        height: 32,
        width: 32,
        seed: 2,
    };
    let ds = gen_dataset(&spec).unwrap();
    let t = TriggerSpec::blended(0, 9);
    let poisoned = poison(&ds.train, 0.03, &t, 55).unwrap();
    assert_eq!(poisoned.poison_mask.iter().filter(|&&m| m).count(), 30);
}

#[test]
fn poison_rate_zero_is_bitwise_identity() {
    let ds = gen_dataset(&small_spec(3)).unwrap();
    let t = TriggerSpec::badnet(1, 4);
    let out = poison(&ds.train, 0.0, &t, 5).unwrap();
    assert_eq!(out.batch, ds.train.batch);
    assert!(out.poison_mask.iter().all(|&m| !m));
}

#[test]
fn poison_changes_only_masked_items() {
    let ds = gen_dataset(&small_spec(6)).unwrap();
    let t = TriggerSpec::blended(2, 11);
    let out = poison(&ds.train, 0.25, &t, 5).unwrap();
    let item_len = ds.train.batch.item_len();
    for i in 0..ds.train.len() {
        let before = &ds.train.batch.images[i * item_len..(i + 1) * item_len];
        let after = &out.batch.images[i * item_len..(i + 1) * item_len];
        if out.poison_mask[i] {
            assert_eq!(out.batch.labels[i], 2);
            assert_ne!(before, after, "masked item {i} should change");
        } else {
            assert_eq!(before, after, "unmasked item {i} must be bit-identical");
            assert_eq!(out.batch.labels[i], ds.train.batch.labels[i]);
        }
    }
}

#[test]
fn forget_set_defaults_to_all_triggered() {
    let spec = DatasetSpec {
        class_count: 4,
        train_per_class: 4,
        val_per_class: 70,
        test_per_class: 4,
        height: 32,
        width: 32,
        seed: 13,
    };
    let ds = gen_dataset(&spec).unwrap();
    let t = TriggerSpec::sig(3);
    let fs = build_forget_set(&ds.val, 256, &t, 0.0).unwrap();
    assert_eq!(fs.len(), 256);
    assert!(fs.poison_mask.iter().all(|&m| m));
    assert!(fs.batch.labels.iter().all(|&l| l == 3));
    assert!(fs.origin.is_forget());
}

#[test]
fn forget_set_mixed_ratio_counts() {
    let ds = gen_dataset(&small_spec(13)).unwrap();
    let t = TriggerSpec::blended(1, 2);
    let fs = build_forget_set(&ds.val, 14, &t, 0.5).unwrap();
    assert_eq!(fs.poison_mask.iter().filter(|&&m| m).count(), 7);
    // Clean remainder keeps original labels.
    for i in 7..14 {
        assert_eq!(fs.batch.labels[i], ds.val.batch.labels[i]);
    }
}

#[test]
fn forget_set_ids_disjoint_from_training() {
    let ds = gen_dataset(&small_spec(13)).unwrap();
    let t = TriggerSpec::badnet(0, 1);
    let fs = build_forget_set(&ds.val, 10, &t, 0.0).unwrap();
    for id in &fs.item_ids {
        assert!(!ds.train.item_ids.contains(id));
    }
}

#[test]
fn forget_set_too_large_errors() {
    let ds = gen_dataset(&small_spec(13)).unwrap();
    let t = TriggerSpec::badnet(0, 1);
    assert!(build_forget_set(&ds.val, ds.val.len() + 1, &t, 0.0).is_err());
}

#[test]
fn stamp_eval_set_keeps_labels() {
    let ds = gen_dataset(&small_spec(21)).unwrap();
    let t = TriggerSpec::blended(0, 5);
    let stamped = stamp_eval_set(&ds.test, &t, 31).unwrap();
    assert_eq!(stamped.batch.labels, ds.test.batch.labels);
    assert!(stamped.poison_mask.iter().all(|&m| m));
    assert_ne!(stamped.batch.images, ds.test.batch.images);
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tbds");
    let ds = gen_dataset(&small_spec(17)).unwrap();
    save_dataset(&ds, &path).unwrap();
    let r = load_dataset(&path).unwrap();
    assert_eq!(ds, r);
}

#[test]
fn dataset_file_rejects_corrupt_payload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tbds");
    let ds = gen_dataset(&small_spec(17)).unwrap();
    save_dataset(&ds, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() - 100;
    bytes[at] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(crate::error::Error::ChecksumMismatch { .. })
    ));
}

#[test]
fn rounded_count_uses_ties_to_even() {
    assert_eq!(rounded_count(0.5, 1), 0); // 0.5 -> 0
    assert_eq!(rounded_count(0.5, 3), 2); // 1.5 -> 2
    assert_eq!(rounded_count(0.03, 1000), 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn apply_trigger_preserves_pixel_range(
        seed in 0u64..500,
        kind in 0usize..4,
        item_seed in 0u64..1000,
    ) {
        let shape = (3usize, 32usize, 32usize);
        let mut rng = crate::rng::CounterRng::new(seed, 700);
        let img: Vec<f32> = (0..shape.0 * shape.1 * shape.2).map(|_| rng.next_f32()).collect();
        let t = match kind {
            0 => TriggerSpec::badnet(0, seed),
            1 => TriggerSpec::blended(0, seed),
            2 => TriggerSpec::wanet(0, 32, seed),
            _ => TriggerSpec::sig(0),
        };
        let out = apply_trigger(&img, shape, &t, item_seed).unwrap();
        prop_assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

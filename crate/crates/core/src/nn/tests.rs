use super::*;
use crate::error::Error;
use proptest::prelude::*;

fn tiny_batch(shape: (usize, usize, usize), n: usize, classes: usize, seed: u64) -> Batch {
    let (c, h, w) = shape;
    let mut rng = CounterRng::new(seed, 900);
    let images: Vec<f32> = (0..n * c * h * w).map(|_| rng.next_f32()).collect();
    let labels: Vec<u16> = (0..n).map(|_| rng.below(classes as u64) as u16).collect();
    Batch::new(images, shape, labels).unwrap()
}

#[test]
fn init_same_spec_bit_identical() {
    let spec = ModelSpec::desk_cnn(10, 42);
    let a = init(&spec).unwrap();
    let b = init(&spec).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.layout, b.layout);
}

#[test]
fn init_different_seed_differs() {
    let a = init(&ModelSpec::desk_cnn(10, 1)).unwrap();
    let b = init(&ModelSpec::desk_cnn(10, 2)).unwrap();
    assert_ne!(a.values, b.values);
}

#[test]
fn dense_only_param_count() {
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 3 }],
        class_count: 3,
        seed: 0,
    };
    let w = init(&spec).unwrap();
    assert_eq!(w.total_len(), 16 * 3 + 3);
}

#[test]
fn conv_param_count_matches_hand_formula() {
    let spec = ModelSpec {
        input_shape: (1, 8, 8),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 2 },
        ],
        class_count: 2,
        seed: 7,
    };
    let w = init(&spec).unwrap();
    // conv: out_c*in_c*k*k + out_c; dense: (4*8*8)*2 + 2
    let expected = (4 * 1 * 3 * 3 + 4) + (4 * 8 * 8 * 2 + 2);
    assert_eq!(w.total_len(), expected);
}

#[test]
fn shape_inference_errors_name_the_layer() {
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::MaxPool { kernel: 2 },
        ],
        class_count: 2,
        seed: 0,
    };
    match spec.plan() {
        Err(Error::ShapeInference { layer: 1, kind, .. }) => assert_eq!(kind, "maxpool"),
        other => panic!("expected shape inference error at layer 1, got {other:?}"),
    }

    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Dense { out_features: 2 }],
        class_count: 2,
        seed: 0,
    };
    assert!(matches!(
        spec.plan(),
        Err(Error::ShapeInference { layer: 0, .. })
    ));
}

#[test]
fn final_width_must_equal_class_count() {
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 5 }],
        class_count: 3,
        seed: 0,
    };
    assert!(spec.plan().is_err());
}

#[test]
fn forward_zero_weights_gives_zero_logits() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let w = WeightVector::zeros(spec.plan().unwrap().layout());
    let batch = tiny_batch((3, 32, 32), 4, 10, 5);
    let logits = forward(&w, &spec, &batch).unwrap();
    assert!(logits.iter().all(|&l| l == 0.0));
}

#[test]
fn forward_duplicate_rows_give_duplicate_logits() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let w = init(&spec).unwrap();
    let one = tiny_batch((3, 32, 32), 1, 10, 5);
    let mut images = one.images.clone();
    images.extend_from_slice(&one.images);
    let two = Batch::new(images, one.shape, vec![one.labels[0], one.labels[0]]).unwrap();
    let logits = forward(&w, &spec, &two).unwrap();
    assert_eq!(&logits[0..10], &logits[10..20]);
}

#[test]
fn forward_is_pure() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let w = init(&spec).unwrap();
    let batch = tiny_batch((3, 32, 32), 6, 10, 5);
    let a = forward(&w, &spec, &batch).unwrap();
    let b = forward(&w, &spec, &batch).unwrap();
    assert_eq!(a, b);
    let (la, ga) = loss_and_grad(&w, &spec, &batch).unwrap();
    let (lb, gb) = loss_and_grad(&w, &spec, &batch).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(ga.values, gb.values);
}

/// Straight-line re-implementation of the forward pass, in f64 with naive
/// nested loops. Kept deliberately independent of the engine kernels.
mod naive {
    use super::super::{LayerSpec, ModelSpec};

    pub fn forward(spec: &ModelSpec, weights: &[f32], image: &[f32]) -> Vec<f64> {
        let (mut c, mut h, mut w) = spec.input_shape;
        let mut cur: Vec<f64> = image.iter().map(|&p| p as f64).collect();
        let mut flat = false;
        let mut offset = 0usize;
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    let w_base = offset;
                    let b_base = offset + out_channels * c * kernel * kernel;
                    let mut out = vec![0.0f64; out_channels * oh * ow];
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = weights[b_base + oc] as f64;
                                for ic in 0..c {
                                    for kh in 0..kernel {
                                        for kw in 0..kernel {
                                            let iy = (oy * stride + kh) as isize - padding as isize;
                                            let ix = (ox * stride + kw) as isize - padding as isize;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let wv = weights[w_base
                                                + ((oc * c + ic) * kernel + kh) * kernel
                                                + kw]
                                                as f64;
                                            acc += wv
                                                * cur[ic * h * w
                                                    + iy as usize * w
                                                    + ix as usize];
                                        }
                                    }
                                }
                                out[oc * oh * ow + oy * ow + ox] = acc;
                            }
                        }
                    }
                    offset = b_base + out_channels;
                    cur = out;
                    c = out_channels;
                    h = oh;
                    w = ow;
                }
                LayerSpec::Relu => {
                    for v in &mut cur {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                LayerSpec::MaxPool { kernel } => {
                    let oh = h / kernel;
                    let ow = w / kernel;
                    let mut out = vec![0.0f64; c * oh * ow];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..kernel {
                                    for dx in 0..kernel {
                                        best = best.max(
                                            cur[ch * h * w + (oy * kernel + dy) * w + ox * kernel + dx],
                                        );
                                    }
                                }
                                out[ch * oh * ow + oy * ow + ox] = best;
                            }
                        }
                    }
                    cur = out;
                    h = oh;
                    w = ow;
                }
                LayerSpec::Flatten => {
                    flat = true;
                }
                LayerSpec::Dense { out_features } => {
                    assert!(flat || c * h * w == cur.len());
                    let in_f = cur.len();
                    let w_base = offset;
                    let b_base = offset + out_features * in_f;
                    let mut out = vec![0.0f64; out_features];
                    for (o, slot) in out.iter_mut().enumerate() {
                        let mut acc = weights[b_base + o] as f64;
                        for (i, &x) in cur.iter().enumerate() {
                            acc += weights[w_base + o * in_f + i] as f64 * x;
                        }
                        *slot = acc;
                    }
                    offset = b_base + out_features;
                    cur = out;
                }
            }
        }
        cur
    }
}

#[test]
fn forward_matches_independent_reimplementation() {
    let spec = ModelSpec {
        input_shape: (2, 10, 10),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 3,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 4 },
        ],
        class_count: 4,
        seed: 11,
    };
    let w = init(&spec).unwrap();
    let batch = tiny_batch((2, 10, 10), 5, 4, 77);
    let logits = forward(&w, &spec, &batch).unwrap();
    for i in 0..batch.len() {
        let expect = naive::forward(&spec, &w.values, batch.image(i));
        for (k, (&got, &want)) in logits[i * 4..(i + 1) * 4].iter().zip(&expect).enumerate() {
            let rel = (got as f64 - want).abs() / want.abs().max(1e-3);
            assert!(rel <= 1e-6, "item {i} logit {k}: got {got}, want {want}");
        }
    }
}

#[test]
fn loss_of_uniform_logits_is_ln_k() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let w = WeightVector::zeros(spec.plan().unwrap().layout());
    let batch = tiny_batch((3, 32, 32), 4, 10, 5);
    let (loss, _) = loss_and_grad(&w, &spec, &batch).unwrap();
    assert!((loss - (10.0f64).ln()).abs() < 1e-12, "loss {loss}");
}

#[test]
fn duplicating_batch_rows_preserves_loss_and_grad() {
    let spec = ModelSpec {
        input_shape: (1, 6, 6),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3 },
        ],
        class_count: 3,
        seed: 9,
    };
    let w = init(&spec).unwrap();
    let batch = tiny_batch((1, 6, 6), 3, 3, 2);
    let mut images = batch.images.clone();
    images.extend_from_slice(&batch.images);
    let mut labels = batch.labels.clone();
    labels.extend_from_slice(&batch.labels);
    let doubled = Batch::new(images, batch.shape, labels).unwrap();

    let (l1, g1) = loss_and_grad(&w, &spec, &batch).unwrap();
    let (l2, g2) = loss_and_grad(&w, &spec, &doubled).unwrap();
    assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
    for (a, b) in g1.values.iter().zip(&g2.values) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
    }
}

/// Central finite difference with a Richardson consistency probe: parameters
/// whose estimates at eps and eps/2 disagree sit on a ReLU/pool kink where the
/// difference quotient does not estimate the gradient; those are skipped.
fn grad_check_f64(spec: &ModelSpec, batch: &Batch, eps: f64) -> (f64, usize, usize) {
    let w = init(spec).unwrap();
    let mut values: Vec<f64> = w.values.iter().map(|&v| v as f64).collect();
    let (_, grad) = loss_and_grad_f64(&values, spec, batch).unwrap();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for j in 0..values.len() {
        let orig = values[j];
        let mut fd_at = |e: f64| {
            values[j] = orig + e;
            let up = loss_f64(&values, spec, batch).unwrap();
            values[j] = orig - e;
            let dn = loss_f64(&values, spec, batch).unwrap();
            values[j] = orig;
            (up - dn) / (2.0 * e)
        };
        let fd = fd_at(eps);
        let fd_half = fd_at(eps / 2.0);
        if (fd - fd_half).abs() > 1e-5 * fd.abs().max(fd_half.abs()).max(1e-3) {
            skipped += 1;
            continue;
        }
        checked += 1;
        let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    (max_rel, checked, skipped)
}

#[test]
fn gradient_matches_finite_differences_on_small_net() {
    let spec = ModelSpec {
        input_shape: (1, 8, 8),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3 },
        ],
        class_count: 3,
        seed: 21,
    };
    let batch = tiny_batch((1, 8, 8), 4, 3, 13);
    let (max_rel, checked, skipped) = grad_check_f64(&spec, &batch, 1e-3);
    assert!(checked > 0);
    assert!(
        skipped * 10 < checked,
        "too many kink skips: {skipped}/{checked}"
    );
    assert!(max_rel <= 1e-4, "max rel error {max_rel}");
}

#[test]
fn gradient_stride_two_conv_matches_finite_differences() {
    let spec = ModelSpec {
        input_shape: (1, 9, 9),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 0,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 2 },
        ],
        class_count: 2,
        seed: 4,
    };
    let batch = tiny_batch((1, 9, 9), 3, 2, 31);
    let (max_rel, checked, _) = grad_check_f64(&spec, &batch, 1e-3);
    assert!(checked > 0);
    assert!(max_rel <= 1e-4, "max rel error {max_rel}");
}

#[test]
fn embed_equals_logits_when_final_dense_is_identity() {
    let spec = ModelSpec {
        input_shape: (1, 3, 3),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 4 },
        ],
        class_count: 4,
        seed: 5,
    };
    let mut w = init(&spec).unwrap();
    // Overwrite the final dense with identity weights and zero bias.
    let entries = &w.layout.entries;
    let last_w = entries.iter().find(|e| e.name == "dense3.weight").unwrap();
    let last_b = entries.iter().find(|e| e.name == "dense3.bias").unwrap();
    let (w_off, b_off) = (last_w.offset, last_b.offset);
    for r in 0..4 {
        for c in 0..4 {
            w.values[w_off + r * 4 + c] = if r == c { 1.0 } else { 0.0 };
        }
        w.values[b_off + r] = 0.0;
    }
    let batch = tiny_batch((1, 3, 3), 3, 4, 8);
    let logits = forward(&w, &spec, &batch).unwrap();
    let (feats, dim) = embed(&w, &spec, &batch).unwrap();
    assert_eq!(dim, 4);
    assert_eq!(logits, feats);
}

#[test]
fn embed_identical_inputs_identical_embeddings() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let w = init(&spec).unwrap();
    let one = tiny_batch((3, 32, 32), 1, 10, 5);
    let mut images = one.images.clone();
    images.extend_from_slice(&one.images);
    let two = Batch::new(images, one.shape, vec![0, 0]).unwrap();
    let (feats, dim) = embed(&w, &spec, &two).unwrap();
    assert_eq!(&feats[0..dim], &feats[dim..2 * dim]);
}

#[test]
fn embed_errors_without_dense_layer() {
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 1,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Flatten,
        ],
        class_count: 16,
        seed: 0,
    };
    let w = init(&spec).unwrap();
    let batch = tiny_batch((1, 4, 4), 1, 16, 1);
    assert!(embed(&w, &spec, &batch).is_err());
}

#[test]
fn forward_rejects_layout_mismatch() {
    let spec = ModelSpec::desk_cnn(10, 3);
    let other = ModelSpec::desk_cnn(7, 3);
    let w = init(&other).unwrap();
    let batch = tiny_batch((3, 32, 32), 1, 7, 5);
    assert!(matches!(
        forward(&w, &spec, &batch),
        Err(Error::LayoutMismatch(_))
    ));
}

#[test]
fn weight_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tbwv");
    let spec = ModelSpec::desk_cnn(10, 99);
    let w = init(&spec).unwrap();
    save_weights(&w, &path).unwrap();
    let r = load_weights(&path).unwrap();
    assert_eq!(w.values, r.values);
    assert_eq!(w.layout, r.layout);
}

#[test]
fn truncated_weight_file_is_a_checksum_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tbwv");
    let spec = ModelSpec::desk_cnn(4, 1);
    let w = init(&spec).unwrap();
    save_weights(&w, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(
        load_weights(&path),
        Err(Error::ChecksumMismatch { .. })
    ));
}

#[test]
fn flipped_header_bytes_never_panic_and_are_usually_caught() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tbwv");
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }],
        class_count: 2,
        seed: 3,
    };
    let w = init(&spec).unwrap();
    save_weights(&w, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mutant = dir.path().join("m.tbwv");
    // Flip one byte at a time across magic, version, length prefix, and header.
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    for pos in 0..10 + header_len {
        let mut corrupted = bytes.clone();
        corrupted[pos] ^= 0x40;
        std::fs::write(&mutant, &corrupted).unwrap();
        match load_weights(&mutant) {
            // A surviving parse must still satisfy the layout invariant.
            Ok(w2) => w2.layout.validate().unwrap(),
            Err(
                Error::FileFormat { .. }
                | Error::ChecksumMismatch { .. }
                | Error::LayoutMismatch(_),
            ) => {}
            Err(other) => panic!("unexpected error kind: {other:?}"),
        }
    }
}

#[test]
fn header_total_len_disagreement_is_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tbwv");
    let spec = ModelSpec {
        input_shape: (1, 4, 4),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }],
        class_count: 2,
        seed: 3,
    };
    let w = init(&spec).unwrap();
    save_weights(&w, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let header = String::from_utf8(bytes[10..10 + header_len].to_vec()).unwrap();
    let tampered = header.replace("\"total_len\":34", "\"total_len\":35");
    assert_ne!(header, tampered, "fixture layout changed");
    let mut out = bytes[..6].to_vec();
    out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
    out.extend_from_slice(tampered.as_bytes());
    out.extend_from_slice(&bytes[10 + header_len..]);
    std::fs::write(&path, out).unwrap();
    match load_weights(&path) {
        Err(Error::LayoutMismatch(_)) | Err(Error::FileFormat { .. }) => {}
        other => panic!("expected layout/total_len disagreement, got {other:?}"),
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let spec = ModelSpec {
        input_shape: (1, 6, 6),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3 },
        ],
        class_count: 3,
        seed: 17,
    };
    let w = init(&spec).unwrap();
    let batch = tiny_batch((1, 6, 6), 2, 3, 19);
    let (_, dx) = input_grad_cross_entropy(&w, &spec, &batch.images, &batch.labels).unwrap();

    // Check a handful of pixels by f64 finite differences over the f32 model.
    let values_f64: Vec<f64> = w.values.iter().map(|&v| v as f64).collect();
    let eps = 1e-4f32;
    for &pix in &[0usize, 7, 20, 35, 36, 50] {
        let mut plus = batch.clone();
        plus.images[pix] += eps;
        let mut minus = batch.clone();
        minus.images[pix] -= eps;
        // Clamp into validity range is unnecessary: Batch is already built.
        let lp = loss_f64(&values_f64, &spec, &plus).unwrap();
        let lm = loss_f64(&values_f64, &spec, &minus).unwrap();
        let fd = (lp - lm) / (2.0 * eps as f64);
        let got = dx[pix] as f64;
        assert!(
            (got - fd).abs() <= 1e-3 * got.abs().max(fd.abs()).max(1e-2),
            "pixel {pix}: got {got}, fd {fd}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tensors_from_tensors_round_trip(seed in 0u64..1000) {
        let spec = ModelSpec {
            input_shape: (1, 6, 6),
            layers: vec![
                LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
            ],
            class_count: 3,
            seed,
        };
        let w = init(&spec).unwrap();
        let views = w.tensors();
        let parts: Vec<(&str, &[f32])> = views.iter().map(|(n, _, v)| (*n, *v)).collect();
        let rebuilt = WeightVector::from_tensors(w.layout.clone(), &parts).unwrap();
        prop_assert_eq!(rebuilt.values, w.values);
    }
}

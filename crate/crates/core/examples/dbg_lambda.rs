use triggerbench::data::{gen_dataset, DatasetSpec};
use triggerbench::inverse::{invert_trigger, InversionConfig, InversionObjective};
use triggerbench::nn::{self, LayerSpec, ModelSpec};

fn main() {
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
    let t = invert_trigger(&w, &spec, &ds.val, InversionObjective::EmbeddingSimilarity, &cfg).unwrap();
    println!("final l1 {}", t.l1_norm);
    for row in t.trace.iter().step_by(20) {
        println!("step {} obj {:.4} l1 {:.6}", row.step, row.objective, row.l1);
    }
    let max_mask = t.mask.iter().cloned().fold(0.0f32, f32::max);
    println!("max mask {max_mask}");
}

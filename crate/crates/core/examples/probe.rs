use triggerbench::bench::clean_accuracy;
use triggerbench::data::{gen_dataset, DatasetSpec};
use triggerbench::nn::{self, LayerSpec, ModelSpec};
use triggerbench::train::{train, Schedule, TrainConfig};

fn main() {
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
    let w0 = nn::init(&probe_spec).unwrap();
    for (epochs, lr) in [(20usize, 3e-3f64), (40, 3e-3), (40, 1e-2)] {
        let cfg = TrainConfig {
            epochs,
            learning_rate: lr,
            schedule: Schedule::Constant,
            ..TrainConfig::finetune_default(epochs, 5)
        };
        let run = train(&w0, &probe_spec, &ds.train, &cfg).unwrap();
        let acc = clean_accuracy(&run.weights, &probe_spec, &ds.test).unwrap();
        println!(
            "epochs {epochs} lr {lr}: train acc {:.3} test acc {:.3}",
            run.history.last().unwrap().train_accuracy,
            acc
        );
    }
}

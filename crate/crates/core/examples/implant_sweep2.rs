use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, OptimParams, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    for per_class in [150usize, 300] {
        let data = gen_dataset(&DatasetSpec {
            train_per_class: per_class,
            ..DatasetSpec::desk_default(0)
        })
        .unwrap();
        let model = ModelSpec::desk_cnn(10, 1);
        let w0 = nn::init(&model).unwrap();
        let pre = train(&w0, &model, &data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
        let theta_pre = pre.weights;
        println!("== train {} per class (poison count {})", per_class, (per_class as f64 * 10.0 * 0.03) as usize);
        let triggers = vec![
            ("badnet", TriggerSpec::badnet(target, 100)),
            ("wanet", TriggerSpec::wanet(target, 32, 100)),
        ];
        for (wd, epochs) in [(0.01f64, 8usize), (0.05, 8), (0.01, 6)] {
            for (name, trig) in &triggers {
                let t = Instant::now();
                let cfg = TrainConfig {
                    epochs,
                    learning_rate: 6e-4,
                    schedule: Schedule::Constant,
                    optimizer: OptimParams {
                        weight_decay: wd,
                        ..OptimParams::default()
                    },
                    ..TrainConfig::finetune_default(epochs, 3)
                };
                let run = implant_backdoor(&theta_pre, &model, &data.train, trig, 0.03, 7, &cfg).unwrap();
                let test_trig = stamp_eval_set(&data.test, trig, 11).unwrap();
                let ev = evaluate(&run.weights, &model, &data.test, &test_trig, target).unwrap();
                println!(
                    "  wd {wd} ep {epochs} {name:8} CA {:.3} ASR {:.3}  [{:.1}s]",
                    ev.ca, ev.asr, t.elapsed().as_secs_f64()
                );
            }
        }
    }
}

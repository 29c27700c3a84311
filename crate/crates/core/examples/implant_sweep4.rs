use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    let task = gen_dataset(&DatasetSpec::desk_default(0)).unwrap();
    let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;

    let triggers = vec![
        ("badnet", TriggerSpec::badnet(target, 100)),
        ("blended", TriggerSpec::blended(target, 100)),
    ];
    for (rate, epochs) in [(0.5f64, 6usize), (0.10, 10), (0.03, 30)] {
        println!("--- rate {rate} epochs {epochs}");
        for (name, trig) in &triggers {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs,
                learning_rate: 6e-4,
                schedule: Schedule::Constant,
                ..TrainConfig::finetune_default(epochs, 3)
            };
            let run = implant_backdoor(&theta_pre, &model, &task.train, trig, rate, 7, &cfg).unwrap();
            let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
            let ev = evaluate(&run.weights, &model, &task.test, &test_trig, target).unwrap();
            println!(
                "  {name:8} CA {:.3} ASR {:.3}  [{:.1}s]",
                ev.ca, ev.asr, t.elapsed().as_secs_f64()
            );
        }
    }
}

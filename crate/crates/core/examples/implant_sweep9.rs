use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, TriggerKind, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    let task = gen_dataset(&DatasetSpec {
        train_per_class: 200,
        ..DatasetSpec::desk_default(0)
    })
    .unwrap();
    let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;

    let wanet = |s: f64| TriggerSpec {
        kind: TriggerKind::Wanet { control_grid: 32, strength: s, warp_seed: 100 },
        target_label: target,
    };
    let cases: Vec<(String, TriggerSpec, usize, f64)> = vec![
        ("blended 24ep lr2e-3".into(), TriggerSpec::blended(target, 100), 24, 2e-3),
        ("blended 16ep lr3e-3".into(), TriggerSpec::blended(target, 100), 16, 3e-3),
        ("blended 24ep lr3e-3".into(), TriggerSpec::blended(target, 100), 24, 3e-3),
        ("wanet-s3 16ep lr2e-3".into(), wanet(3.0), 16, 2e-3),
        ("wanet-s3 16ep lr3e-3".into(), wanet(3.0), 16, 3e-3),
        ("wanet-s4 16ep lr2e-3".into(), wanet(4.0), 16, 2e-3),
    ];
    for (name, trig, epochs, lr) in &cases {
        let t = Instant::now();
        let cfg = TrainConfig {
            epochs: *epochs,
            learning_rate: *lr,
            schedule: Schedule::Constant,
            ..TrainConfig::finetune_default(*epochs, 3)
        };
        let run = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.03, 7, &cfg).unwrap();
        let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
        let ev = evaluate(&run.weights, &model, &task.test, &test_trig, target).unwrap();
        println!(
            "{name:22} CA {:.3} ASR {:.3}  [{:.1}s]",
            ev.ca, ev.asr, t.elapsed().as_secs_f64()
        );
    }
}

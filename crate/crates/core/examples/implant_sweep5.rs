use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, Placement, TriggerKind, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    let task = gen_dataset(&DatasetSpec {
        train_per_class: 300,
        ..DatasetSpec::desk_default(0)
    })
    .unwrap();
    let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;

    let badnet = |side: usize, fixed: bool| TriggerSpec {
        kind: TriggerKind::Badnet {
            patch_side: side,
            placement: if fixed { Placement::Fixed { x: 24, y: 24 } } else { Placement::Random },
            noise_seed: 100,
        },
        target_label: target,
    };
    let wanet = |s: f64| TriggerSpec {
        kind: TriggerKind::Wanet { control_grid: 32, strength: s, warp_seed: 100 },
        target_label: target,
    };
    let triggers = vec![
        ("badnet4-rand".to_string(), badnet(4, false)),
        ("badnet6-rand".to_string(), badnet(6, false)),
        ("badnet4-fixed".to_string(), badnet(4, true)),
        ("blended".to_string(), TriggerSpec::blended(target, 100)),
        ("wanet-s1".to_string(), wanet(1.0)),
        ("wanet-s2".to_string(), wanet(2.0)),
        ("sig".to_string(), TriggerSpec::sig(target)),
    ];
    for (epochs, lr) in [(10usize, 6e-4f64), (12, 1.5e-3)] {
        println!("--- rate 0.03, epochs {epochs}, lr {lr}");
        for (name, trig) in &triggers {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                schedule: Schedule::Constant,
                ..TrainConfig::finetune_default(epochs, 3)
            };
            let run = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.03, 7, &cfg).unwrap();
            let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
            let ev = evaluate(&run.weights, &model, &task.test, &test_trig, target).unwrap();
            println!(
                "  {name:14} CA {:.3} ASR {:.3}  [{:.1}s]",
                ev.ca, ev.asr, t.elapsed().as_secs_f64()
            );
        }
    }
}

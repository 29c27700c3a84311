use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, Placement, TriggerKind, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    for per_class in [150usize, 200] {
        let task = gen_dataset(&DatasetSpec {
            train_per_class: per_class,
            ..DatasetSpec::desk_default(0)
        })
        .unwrap();
        let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
        let model = ModelSpec::desk_cnn(10, 1);
        let w0 = nn::init(&model).unwrap();
        let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
        let theta_pre = pre.weights;
        println!("== {per_class}/class ({} poisons)", (per_class * 10) * 3 / 100);

        let badnet = TriggerSpec {
            kind: TriggerKind::Badnet { patch_side: 4, placement: Placement::Fixed { x: 25, y: 25 }, noise_seed: 100 },
            target_label: target,
        };
        let badnet5 = TriggerSpec {
            kind: TriggerKind::Badnet { patch_side: 5, placement: Placement::Fixed { x: 25, y: 25 }, noise_seed: 100 },
            target_label: target,
        };
        let wanet2 = TriggerSpec {
            kind: TriggerKind::Wanet { control_grid: 32, strength: 2.0, warp_seed: 100 },
            target_label: target,
        };
        let triggers = vec![
            ("badnet4-fix", badnet),
            ("badnet5-fix", badnet5),
            ("blended", TriggerSpec::blended(target, 100)),
            ("wanet-s2", wanet2),
            ("sig", TriggerSpec::sig(target)),
        ];
        for (epochs, lr) in [(16usize, 2e-3f64), (20, 1.5e-3)] {
            println!("--- epochs {epochs} lr {lr}");
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
                    "  {name:12} CA {:.3} ASR {:.3}  [{:.1}s]",
                    ev.ca, ev.asr, t.elapsed().as_secs_f64()
                );
            }
        }
    }
}
